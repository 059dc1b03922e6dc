//! Margin ranking loss, gradient collection, parameter updates and the
//! epoch loop with early stopping.

use crate::data::{epoch_triples, Dataset, NeighborTable, Triple};
use crate::diff::{self, DiffError, Var};
use crate::eval::{self, EvalError, EvalResult};
use crate::fusion;
use crate::geometry::Curvature;
use crate::model::{self, GraphContext, ModelError, ModelState, ParamSource, RowKey, TapedParams};
use crate::scalar::Real;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Early-stopping patience in epochs.
pub const PATIENCE: usize = 20;

/// Examples per gradient chunk. Chunks are summed in order, so results do
/// not depend on the worker count.
const CHUNK: usize = 16;

/// Epoch index used for the evaluation receptive fields.
pub const EVAL_EPOCH: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("negative distance passed to margin: {0}")]
    NegativeDistance(f64),
    #[error("non-finite gradient in epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// How the hinge margin is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginRule {
    Constant(f64),
    /// `σ(d(u,i) / (d(u,o) + d(i,o))) + c`
    GeometryAware(f64),
    /// `σ(d(u,o) + d(i,o) - d(u,i)) + c`
    Hicf(f64),
}

impl MarginRule {
    pub fn c(self) -> f64 {
        match self {
            MarginRule::Constant(c) | MarginRule::GeometryAware(c) | MarginRule::Hicf(c) => c,
        }
    }

    pub fn with_c(self, c: f64) -> Self {
        match self {
            MarginRule::Constant(_) => MarginRule::Constant(c),
            MarginRule::GeometryAware(_) => MarginRule::GeometryAware(c),
            MarginRule::Hicf(_) => MarginRule::Hicf(c),
        }
    }

    /// Short suffix used in ablation tables.
    pub fn suffix(self) -> &'static str {
        match self {
            MarginRule::Constant(_) => "c",
            MarginRule::GeometryAware(_) => "g",
            MarginRule::Hicf(_) => "h",
        }
    }

    pub fn all(c: f64) -> [MarginRule; 3] {
        [MarginRule::Constant(c), MarginRule::Hicf(c), MarginRule::GeometryAware(c)]
    }
}

impl fmt::Display for MarginRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarginRule::Constant(_) => "constant",
            MarginRule::GeometryAware(_) => "geometry",
            MarginRule::Hicf(_) => "hicf",
        })
    }
}

/// Parses the rule name; `c` is set separately.
impl FromStr for MarginRule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "constant" | "c" => Ok(MarginRule::Constant(0.0)),
            "geometry" | "geometry-aware" | "g" => Ok(MarginRule::GeometryAware(0.0)),
            "hicf" | "h" => Ok(MarginRule::Hicf(0.0)),
            _ => Err(format!("unknown margin rule {s:?} (constant, geometry, hicf)")),
        }
    }
}

/// Margin from the positive-pair distance and both origin distances.
pub fn margin<T: Real>(rule: MarginRule, d_ui: T, d_uo: T, d_io: T) -> Result<T> {
    for d in [d_ui, d_uo, d_io] {
        if d.value() < 0.0 {
            return Err(TrainError::NegativeDistance(d.value()));
        }
    }
    Ok(match rule {
        MarginRule::Constant(c) => T::lit(c),
        MarginRule::GeometryAware(c) => {
            let den = d_uo + d_io;
            let ratio = if den.value() > 0.0 { d_ui / den } else { T::zero() };
            ratio.sigmoid() + T::lit(c)
        }
        MarginRule::Hicf(c) => (d_uo + d_io - d_ui).sigmoid() + T::lit(c),
    })
}

/// `max(d_pos² - d_neg² + m, 0)` with subgradient 0 at the hinge.
pub fn hinge<T: Real>(d_pos: T, d_neg: T, m: T) -> T {
    let raw = d_pos * d_pos - d_neg * d_neg + m;
    if raw.value() > 0.0 {
        raw
    } else {
        T::zero()
    }
}

/// Loss of one triple and the quantities it was built from.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<T> {
    pub loss: T,
    pub d_pos: T,
    pub d_neg: T,
    pub margin: T,
}

pub fn ranking_loss<T: Real, P: ParamSource<T>>(
    src: &P,
    ctx: GraphContext<'_>,
    t: Triple,
    rule: MarginRule,
) -> Result<LossParts<T>> {
    let spaces: Vec<Curvature<T>> = (0..src.config().manifolds).map(|m| src.space(m)).collect();
    let (raw, ur) = model::user_representation(src, t.user)?;
    let ir = model::item_representation(src, ctx, &raw, t.pos)?;
    let jr = model::item_representation(src, ctx, &raw, t.neg)?;
    let d_pos = fusion::global_distance(&spaces, &ur, &ir).map_err(ModelError::from)?;
    let d_neg = fusion::global_distance(&spaces, &ur, &jr).map_err(ModelError::from)?;
    let m = match rule {
        MarginRule::Constant(c) => T::lit(c),
        _ => {
            let d_uo = fusion::origin_distance(&spaces, &ur).map_err(ModelError::from)?;
            let d_io = fusion::origin_distance(&spaces, &ir).map_err(ModelError::from)?;
            margin(rule, d_pos, d_uo, d_io)?
        }
    };
    Ok(LossParts {
        loss: hinge(d_pos, d_neg, m),
        d_pos,
        d_neg,
        margin: m,
    })
}

/// Gradients of a summed loss: dense blocks in canonical flat order, and
/// the embedding rows that were touched.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub dense: Vec<f64>,
    pub rows: BTreeMap<RowKey, Vec<f64>>,
}

impl GradientSet {
    pub fn zeros(model: &ModelState<f64>) -> Self {
        GradientSet {
            dense: vec![0.0; model.dense.to_flat().len()],
            rows: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, other: &GradientSet) {
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            *a += b;
        }
        for (k, g) in &other.rows {
            match self.rows.get_mut(k) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    self.rows.insert(*k, g.clone());
                }
            }
        }
    }

    /// Dense vector in the layout of [`ModelState::to_flat`], zero for
    /// untouched rows.
    pub fn to_flat(&self, model: &ModelState<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(model.parameter_count());
        for (m, t) in model.tables.iter().enumerate() {
            for (table, mat) in [
                (crate::model::Table::User, &t.users),
                (crate::model::Table::Entity, &t.entities),
                (crate::model::Table::Relation, &t.relations),
            ] {
                for id in 0..mat.rows() as u32 {
                    match self.rows.get(&(table, m, id)) {
                        Some(g) => out.extend_from_slice(g),
                        None => out.extend(std::iter::repeat_n(0.0, mat.cols())),
                    }
                }
            }
        }
        out.extend_from_slice(&self.dense);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.dense.iter().chain(self.rows.values().flatten()).all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.dense
            .iter()
            .chain(self.rows.values().flatten())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Loss and gradients of a single triple on this thread's tape.
pub fn example_gradient(
    model: &ModelState<f64>,
    ctx: GraphContext<'_>,
    t: Triple,
    rule: MarginRule,
) -> Result<(f64, GradientSet)> {
    diff::clear();
    let p = TapedParams::new(model);
    let parts: LossParts<Var> = ranking_loss(&p, ctx, t, rule)?;
    let g = diff::backward(parts.loss)?;
    let dense = g.wrt_all(&p.dense_vars().to_flat());
    let rows = p.row_vars().iter().map(|(k, vs)| (*k, g.wrt_all(vs))).collect();
    let loss = parts.loss.val();
    diff::clear();
    Ok((loss, GradientSet { dense, rows }))
}

/// Summed loss and gradients over `batch`, computed in parallel chunks and
/// reduced in a fixed order.
pub fn batch_gradient(
    model: &ModelState<f64>,
    ctx: GraphContext<'_>,
    batch: &[Triple],
    rule: MarginRule,
) -> Result<(f64, GradientSet)> {
    let parts: Vec<(f64, GradientSet)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = GradientSet::zeros(model);
            let mut loss = 0.0;
            for &t in chunk {
                let (l, g) = example_gradient(model, ctx, t, rule)?;
                loss += l;
                acc.add(&g);
            }
            Ok((loss, acc))
        })
        .collect::<Result<_>>()?;
    let mut total = GradientSet::zeros(model);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add(g);
    }
    Ok((loss, total))
}

/// Step sizes: one for Euclidean parameters, one for the curvatures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub kappa_lr: f64,
}

impl Sgd {
    /// `θ ← θ - η ∇θ`, with the curvature entries using `kappa_lr`.
    pub fn step(&self, model: &mut ModelState<f64>, g: &GradientSet) {
        let n_k = model.dense.kappas.len();
        let mut i = 0;
        let (lr, klr) = (self.lr, self.kappa_lr);
        model.dense.for_each_mut(|x| {
            let rate = if i < n_k { klr } else { lr };
            *x -= rate * g.dense[i];
            i += 1;
        });
        for (&(table, m, id), row) in &g.rows {
            let dst = model.table_mut(table, m).row_mut(id as usize);
            for (x, d) in dst.iter_mut().zip(row) {
                *x -= lr * d;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub sgd: Sgd,
    pub margin: MarginRule,
    pub seed: u64,
    pub ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            patience: PATIENCE,
            batch_size: 1024,
            sgd: Sgd {
                lr: 1e-3,
                kappa_lr: 1e-4,
            },
            margin: MarginRule::GeometryAware(0.1),
            seed: 0,
            ks: eval::DEFAULT_KS.to_vec(),
        }
    }
}

/// One row of the metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-example loss.
    pub loss: f64,
    pub hr10: f64,
    pub hr20: f64,
    pub ndcg10: f64,
    pub ndcg20: f64,
    pub kappas: Vec<f64>,
    /// Best HR@20 seen so far, including this epoch.
    pub best_hr20: f64,
}

impl EpochRecord {
    pub fn csv_header(manifolds: usize) -> String {
        let mut h = String::from("epoch,loss,hr10,hr20,ndcg10,ndcg20");
        for m in 1..=manifolds {
            h.push_str(&format!(",kappa{m}"));
        }
        h.push_str(",best_hr20");
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.epoch, self.loss, self.hr10, self.hr20, self.ndcg10, self.ndcg20
        );
        for k in &self.kappas {
            r.push_str(&format!(",{k:.17e}"));
        }
        r.push_str(&format!(",{:.17e}", self.best_hr20));
        r
    }
}

pub fn write_metric_log(path: &Path, header: &str, manifolds: usize, records: &[EpochRecord]) -> Result<()> {
    let io = |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "# {header}").map_err(io)?;
    writeln!(f, "{}", EpochRecord::csv_header(manifolds)).map_err(io)?;
    for r in records {
        writeln!(f, "{}", r.csv_row()).map_err(io)?;
    }
    f.flush().map_err(io)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelState<f64>,
    pub best_epoch: usize,
    pub best_eval: Option<EvalResult>,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Receptive fields and candidate lists used for evaluation during and
/// after training.
pub struct EvalSetup {
    pub neighbors: NeighborTable,
    pub candidates: Vec<crate::data::Candidates>,
}

impl EvalSetup {
    pub fn new(data: &Dataset, neighbor_size: usize, seed: u64) -> Self {
        EvalSetup {
            neighbors: NeighborTable::build(&data.kg, neighbor_size, seed, EVAL_EPOCH),
            candidates: eval::build_candidates(&data.train, &data.test, seed),
        }
    }

    pub fn evaluate(&self, model: &ModelState<f64>, data: &Dataset, ks: &[usize]) -> std::result::Result<EvalResult, EvalError> {
        let ctx = GraphContext {
            neighbors: &self.neighbors,
            item_entity: &data.item_entity,
        };
        eval::evaluate(model, ctx, &self.candidates, ks)
    }
}

/// Runs epochs until `max_epochs` or until neither HR@20 nor NDCG@20 has
/// improved for `patience` epochs. `on_epoch` sees every record as it is
/// produced. Returns the snapshot with the best HR@20 (NDCG@20 breaks ties).
pub fn train(
    mut model: ModelState<f64>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 {
        return Err(TrainError::Config("batch size must be positive".into()));
    }
    let (k_lo, k_hi) = (*cfg.ks.iter().min().unwrap_or(&10), *cfg.ks.iter().max().unwrap_or(&20));
    let size = model.config.neighbor_size;
    let setup = EvalSetup::new(data, size, cfg.seed);

    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_eval = None;
    let (mut best_hr, mut best_ndcg) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut top_hr, mut top_ndcg) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut stale = 0;
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let neighbors = NeighborTable::build(&data.kg, size, cfg.seed, epoch as u64);
        let ctx = GraphContext {
            neighbors: &neighbors,
            item_entity: &data.item_entity,
        };
        let triples = epoch_triples(&data.train, cfg.seed, epoch as u64);
        let mut loss_sum = 0.0;
        for batch in triples.chunks(cfg.batch_size) {
            let (l, g) = batch_gradient(&model, ctx, batch, cfg.margin)?;
            if !g.is_finite() || !l.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    detail: format!("batch loss {l}, max |grad| {}", g.max_abs()),
                });
            }
            loss_sum += l;
            cfg.sgd.step(&mut model, &g);
        }

        let res = setup.evaluate(&model, data, &cfg.ks)?;
        let (hr, ndcg) = (res.hr_at(k_hi), res.ndcg_at(k_hi));
        let mut improved = false;
        if hr > top_hr {
            top_hr = hr;
            improved = true;
        }
        if ndcg > top_ndcg {
            top_ndcg = ndcg;
            improved = true;
        }
        if hr > best_hr || (hr == best_hr && ndcg > best_ndcg) {
            best_hr = hr;
            best_ndcg = ndcg;
            best = model.clone();
            best_epoch = epoch;
            best_eval = Some(res.clone());
        }
        stale = if improved { 0 } else { stale + 1 };

        let rec = EpochRecord {
            epoch,
            loss: loss_sum / triples.len().max(1) as f64,
            hr10: res.hr_at(k_lo),
            hr20: hr,
            ndcg10: res.ndcg_at(k_lo),
            ndcg20: ndcg,
            kappas: model.dense.kappas.clone(),
            best_hr20: top_hr,
        };
        on_epoch(&rec);
        log.push(rec);
        if stale >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        best_eval,
        log,
        stopped_early,
    })
}
