//! Model parameters and the full forward pass from ids to distances.

use crate::data::{rng_for, stream, NeighborTable};
use crate::fusion::{self, Representation};
use crate::geometry::{Curvature, GeometryError};
use crate::linalg::Matrix;
use crate::propagation::{self, Aggregator};
use crate::scalar::Real;
use rand::Rng;
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Architecture hyperparameters fixed for the lifetime of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_users: usize,
    pub n_entities: usize,
    pub relation_slots: usize,
    pub dim: usize,
    pub manifolds: usize,
    pub depth: usize,
    pub neighbor_size: usize,
    pub aggregator: Aggregator,
    pub leaky_slope: f64,
}

impl ModelConfig {
    /// Input width of the layer weights.
    pub fn layer_input(&self) -> usize {
        match self.aggregator {
            Aggregator::GraphSage => 2 * self.dim,
            _ => self.dim,
        }
    }

    /// Whether the cross-space concatenation update runs (`M > 1`).
    pub fn fuses(&self) -> bool {
        self.manifolds > 1
    }

    /// Scalar parameter count, saturating on overflow.
    pub fn parameter_count(&self) -> usize {
        let (d, m) = (self.dim, self.manifolds);
        let rows = self.n_users.saturating_add(self.n_entities).saturating_add(self.relation_slots);
        let layer = d.saturating_mul(self.layer_input()).saturating_add(d);
        [
            m.saturating_mul(rows).saturating_mul(d),
            m,
            m.saturating_mul(self.depth).saturating_mul(layer),
            m.saturating_mul(2 * d).saturating_mul(d),
            m.saturating_mul(m).saturating_mul(d),
        ]
        .into_iter()
        .fold(0usize, usize::saturating_add)
    }
}

/// Initial curvatures: `{-1, 0, +1}` for three spaces, evenly spaced in
/// `[-1, 1]` otherwise, `-1` for a single space.
pub fn default_kappas(m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![-1.0],
        _ => (0..m)
            .map(|i| -1.0 + 2.0 * i as f64 / (m - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

/// Parameters touched by every example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub kappas: Vec<T>,
    /// `layers[m][k]`
    pub layers: Vec<Vec<Layer<T>>>,
    /// Per-space `d × 2d` projection after the global concatenation.
    pub proj: Vec<Matrix<T>>,
    /// `M × (M·d)` subspace attention, shared by users and items.
    pub attention: Matrix<T>,
}

impl<T: Real> Dense<T> {
    pub fn map<U: Real>(&self, mut f: impl FnMut(T) -> U) -> Dense<U> {
        Dense {
            kappas: self.kappas.iter().map(|&k| f(k)).collect(),
            layers: self
                .layers
                .iter()
                .map(|ls| {
                    ls.iter()
                        .map(|l| Layer {
                            weight: l.weight.map(|&w| f(w)),
                            bias: l.bias.iter().map(|&b| f(b)).collect(),
                        })
                        .collect()
                })
                .collect(),
            proj: self.proj.iter().map(|p| p.map(|&w| f(w))).collect(),
            attention: self.attention.map(|&w| f(w)),
        }
    }

    /// Visits every scalar in canonical order: curvatures, then per space
    /// the layer weights and biases, then projections, then attention.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut T)) {
        self.kappas.iter_mut().for_each(&mut f);
        for ls in &mut self.layers {
            for l in ls {
                l.weight.as_mut_slice().iter_mut().for_each(&mut f);
                l.bias.iter_mut().for_each(&mut f);
            }
        }
        for p in &mut self.proj {
            p.as_mut_slice().iter_mut().for_each(&mut f);
        }
        self.attention.as_mut_slice().iter_mut().for_each(&mut f);
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.clone().for_each_mut(|x| out.push(*x));
        out
    }

    /// Overwrites from a flat slice in canonical order.
    pub fn set_flat(&mut self, xs: &[T]) {
        let mut it = xs.iter();
        self.for_each_mut(|x| *x = *it.next().expect("flat length"));
    }
}

/// Embedding tables of one subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables<T> {
    pub users: Matrix<T>,
    pub entities: Matrix<T>,
    pub relations: Matrix<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Table {
    User,
    Entity,
    Relation,
}

/// Identifies one embedding row: table, subspace, row id.
pub type RowKey = (Table, usize, u32);

/// All trainable parameters, in Euclidean (tangent-at-origin) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    pub tables: Vec<Tables<T>>,
    pub dense: Dense<T>,
}

impl<T: Real> ModelState<T> {
    /// Every parameter zero except the curvatures and projections, which
    /// start at the given κ values and `[I | 0]`.
    pub fn zeros(config: ModelConfig, kappas: &[f64]) -> Self {
        assert_eq!(kappas.len(), config.manifolds, "one curvature per space");
        let d = config.dim;
        let tables = (0..config.manifolds)
            .map(|_| Tables {
                users: Matrix::zeros(config.n_users, d),
                entities: Matrix::zeros(config.n_entities, d),
                relations: Matrix::zeros(config.relation_slots, d),
            })
            .collect();
        let layers = (0..config.manifolds)
            .map(|_| {
                (0..config.depth)
                    .map(|_| Layer {
                        weight: Matrix::zeros(d, config.layer_input()),
                        bias: vec![T::zero(); d],
                    })
                    .collect()
            })
            .collect();
        let proj = (0..config.manifolds)
            .map(|_| Matrix::from_fn(d, 2 * d, |r, c| if r == c { T::one() } else { T::zero() }))
            .collect();
        let dense = Dense {
            kappas: kappas.iter().map(|&k| T::lit(k)).collect(),
            layers,
            proj,
            attention: Matrix::zeros(config.manifolds, config.manifolds * d),
        };
        ModelState {
            config,
            tables,
            dense,
        }
    }

    /// Random start: embeddings uniform in `±init_scale`, Xavier-uniform layer
    /// weights, zero biases and attention, identity-selecting projections.
    pub fn init(config: ModelConfig, kappas: &[f64], init_scale: f64, seed: u64) -> Self {
        let mut m = Self::zeros(config, kappas);
        let mut rng = rng_for(seed, stream::INIT, 0, 0);
        let mut uni = |s: f64| T::lit(rng.gen_range(-s..=s));
        for t in &mut m.tables {
            for mat in [&mut t.users, &mut t.entities, &mut t.relations] {
                mat.as_mut_slice().iter_mut().for_each(|x| *x = uni(init_scale));
            }
        }
        for ls in &mut m.dense.layers {
            for l in ls {
                let lim = (6.0 / (l.weight.rows() + l.weight.cols()) as f64).sqrt();
                l.weight.as_mut_slice().iter_mut().for_each(|x| *x = uni(lim));
            }
        }
        m
    }

    pub fn spaces(&self) -> Vec<Curvature<T>> {
        self.dense.kappas.iter().map(|&k| Curvature::new(k)).collect()
    }

    pub fn table_mut(&mut self, t: Table, m: usize) -> &mut Matrix<T> {
        let tb = &mut self.tables[m];
        match t {
            Table::User => &mut tb.users,
            Table::Entity => &mut tb.entities,
            Table::Relation => &mut tb.relations,
        }
    }

    pub fn table(&self, t: Table, m: usize) -> &Matrix<T> {
        let tb = &self.tables[m];
        match t {
            Table::User => &tb.users,
            Table::Entity => &tb.entities,
            Table::Relation => &tb.relations,
        }
    }

    /// Every scalar: per space the user, entity and relation tables, then
    /// the dense blocks in canonical order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for t in &self.tables {
            out.extend_from_slice(t.users.as_slice());
            out.extend_from_slice(t.entities.as_slice());
            out.extend_from_slice(t.relations.as_slice());
        }
        out.extend(self.dense.to_flat());
        out
    }

    /// A model of the same shape holding `xs`, laid out as in
    /// [`ModelState::to_flat`].
    pub fn with_flat<U: Real>(&self, xs: &[U]) -> ModelState<U> {
        assert_eq!(xs.len(), self.parameter_count(), "flat parameter length");
        let mut out = ModelState::<U>::zeros(self.config.clone(), &vec![0.0; self.config.manifolds]);
        let mut at = 0;
        for t in &mut out.tables {
            for mat in [&mut t.users, &mut t.entities, &mut t.relations] {
                let n = mat.as_slice().len();
                mat.as_mut_slice().copy_from_slice(&xs[at..at + n]);
                at += n;
            }
        }
        out.dense.set_flat(&xs[at..]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        let rows: usize = self
            .tables
            .iter()
            .map(|t| t.users.as_slice().len() + t.entities.as_slice().len() + t.relations.as_slice().len())
            .sum();
        rows + self.dense.to_flat().len()
    }
}

/// Read access to parameters during a forward pass.
pub trait ParamSource<T: Real> {
    fn config(&self) -> &ModelConfig;
    fn dense(&self) -> &Dense<T>;
    fn row(&self, table: Table, m: usize, id: u32) -> Vec<T>;

    fn space(&self, m: usize) -> Curvature<T> {
        Curvature::new(self.dense().kappas[m])
    }
}

impl<T: Real> ParamSource<T> for ModelState<T> {
    fn config(&self) -> &ModelConfig {
        &self.config
    }
    fn dense(&self) -> &Dense<T> {
        &self.dense
    }
    fn row(&self, table: Table, m: usize, id: u32) -> Vec<T> {
        self.table(table, m).row(id as usize).to_vec()
    }
}

/// Taped view over an `f64` model: dense blocks become leaves up front,
/// embedding rows on first access.
pub struct TapedParams<'a> {
    model: &'a ModelState<f64>,
    dense: Dense<crate::Var>,
    rows: RefCell<BTreeMap<RowKey, Vec<crate::Var>>>,
}

impl<'a> TapedParams<'a> {
    /// Call after [`crate::diff::clear`].
    pub fn new(model: &'a ModelState<f64>) -> Self {
        TapedParams {
            model,
            dense: model.dense.map(crate::Var::leaf),
            rows: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn dense_vars(&self) -> &Dense<crate::Var> {
        &self.dense
    }

    pub fn row_vars(&self) -> std::cell::Ref<'_, BTreeMap<RowKey, Vec<crate::Var>>> {
        self.rows.borrow()
    }
}

impl ParamSource<crate::Var> for TapedParams<'_> {
    fn config(&self) -> &ModelConfig {
        &self.model.config
    }
    fn dense(&self) -> &Dense<crate::Var> {
        &self.dense
    }
    fn row(&self, table: Table, m: usize, id: u32) -> Vec<crate::Var> {
        self.rows
            .borrow_mut()
            .entry((table, m, id))
            .or_insert_with(|| {
                self.model
                    .table(table, m)
                    .row(id as usize)
                    .iter()
                    .map(|&x| crate::Var::leaf(x))
                    .collect()
            })
            .clone()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("{0}")]
    Invalid(String),
}

/// Neighbour samples plus the item → entity map, i.e. the graph context of a
/// forward pass.
#[derive(Clone, Copy)]
pub struct GraphContext<'a> {
    pub neighbors: &'a NeighborTable,
    pub item_entity: &'a [u32],
}

/// Lifted user embeddings, one per space (`e_u^* = e_u^{(0)}`).
pub fn user_embeddings<T: Real, P: ParamSource<T>>(src: &P, u: u32) -> Result<Vec<Vec<T>>, ModelError> {
    (0..src.config().manifolds)
        .map(|m| Ok(propagation::lift(&src.space(m), &src.row(Table::User, m, u))?))
        .collect()
}

/// Per-space item embeddings after K layers, conditioned on the user.
pub fn item_embeddings<T: Real, P: ParamSource<T>>(
    src: &P,
    ctx: GraphContext<'_>,
    user: &[Vec<T>],
    v: u32,
) -> Result<Vec<Vec<T>>, ModelError> {
    let e = ctx.item_entity[v as usize];
    (0..src.config().manifolds)
        .map(|m| propagation::forward_subspace(src, m, ctx.neighbors, &user[m], e))
        .collect()
}

/// Applies fusion when `M > 1` and computes attention weights.
pub fn represent<T: Real, P: ParamSource<T>>(src: &P, embs: Vec<Vec<T>>) -> Result<Representation<T>, ModelError> {
    let spaces: Vec<Curvature<T>> = (0..src.config().manifolds).map(|m| src.space(m)).collect();
    let dense = src.dense();
    let embs = if src.config().fuses() {
        let projs: Vec<&Matrix<T>> = dense.proj.iter().collect();
        fusion::fuse_global(&spaces, &embs, &projs)?
    } else {
        embs
    };
    let weights = fusion::subspace_attention(&spaces, &embs, &dense.attention)?;
    Ok(Representation { embs, weights })
}

pub fn user_representation<T: Real, P: ParamSource<T>>(src: &P, u: u32) -> Result<(Vec<Vec<T>>, Representation<T>), ModelError> {
    let raw = user_embeddings(src, u)?;
    let rep = represent(src, raw.clone())?;
    Ok((raw, rep))
}

/// User-conditioned item representation. `user_raw` are the unfused lifted
/// user embeddings that drive the relational attention.
pub fn item_representation<T: Real, P: ParamSource<T>>(
    src: &P,
    ctx: GraphContext<'_>,
    user_raw: &[Vec<T>],
    v: u32,
) -> Result<Representation<T>, ModelError> {
    let embs = item_embeddings(src, ctx, user_raw, v)?;
    represent(src, embs)
}

/// Item representation as seen from a user at the origin of every space,
/// where relational attention is uniform over each receptive field.
pub fn item_profile<T: Real, P: ParamSource<T>>(src: &P, ctx: GraphContext<'_>, v: u32) -> Result<Representation<T>, ModelError> {
    let origin = vec![vec![T::zero(); src.config().dim]; src.config().manifolds];
    item_representation(src, ctx, &origin, v)
}

/// Fused distance between a user and an item.
pub fn pair_distance<T: Real, P: ParamSource<T>>(
    src: &P,
    ctx: GraphContext<'_>,
    u: u32,
    v: u32,
) -> Result<T, ModelError> {
    let (raw, ur) = user_representation(src, u)?;
    let vr = item_representation(src, ctx, &raw, v)?;
    let spaces: Vec<Curvature<T>> = (0..src.config().manifolds).map(|m| src.space(m)).collect();
    Ok(fusion::global_distance(&spaces, &ur, &vr)?)
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Gcn => "gcn",
            Aggregator::GraphSage => "graphsage",
            Aggregator::Neighbor => "neighbor",
        })
    }
}

impl FromStr for Aggregator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Aggregator::Gcn),
            "graphsage" | "sage" => Ok(Aggregator::GraphSage),
            "neighbor" | "neighbour" => Ok(Aggregator::Neighbor),
            _ => Err(format!("unknown aggregator {s:?} (gcn, graphsage, neighbor)")),
        }
    }
}
