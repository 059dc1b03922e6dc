use crate::error::{io_err, CliError};
use mckg::checkpoint::Checkpoint;
use mckg::config::RunConfig;
use mckg::data::{self, Dataset, SyntheticSpec};
use mckg::eval::EvalResult;
use mckg::model::{self, GraphContext, ModelState};
use mckg::propagation::Aggregator;
use mckg::training::{self, EpochRecord, EvalSetup, MarginRule, TrainOutcome};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    RunConfig::require_paths(&[("data", &cfg.data)])?;
    Ok(Dataset::read(cfg.data.as_deref().unwrap())?)
}

fn write_config(cfg: &RunConfig) -> Result<()> {
    let text = format!("# {}\n{}", cfg.header(), cfg.render());
    write_file(&cfg.out.join("config.txt"), &text)
}

pub fn synth(cfg: &RunConfig, spec: &SyntheticSpec) -> Result<()> {
    ensure_dir(&cfg.out)?;
    let raw = data::synthesize(spec, cfg.seed);
    let (ip, kp) = raw.write(&cfg.out)?;
    let mut c = cfg.clone();
    c.interactions = Some(ip.clone());
    c.kg = Some(kp.clone());
    c.separator = "\t".into();
    c.rating_threshold = None;
    let text = format!("# {}\n{}", c.header(), c.render());
    let cp = cfg.out.join("synth.cfg");
    write_file(&cp, &text)?;
    println!("wrote {} and {}", ip.display(), kp.display());
    println!("config {}", cp.display());
    Ok(())
}

pub fn prepare(cfg: &RunConfig) -> Result<()> {
    RunConfig::require_paths(&[("interactions", &cfg.interactions), ("kg", &cfg.kg)])?;
    if cfg.item_links.is_some() {
        RunConfig::require_paths(&[("item_links", &cfg.item_links)])?;
    }
    let (all, users, items) = data::load_interactions(cfg.interactions.as_deref().unwrap(), &cfg.interaction_format())?;
    let kg = data::load_kg(cfg.kg.as_deref().unwrap())?;
    if kg.triples.is_empty() {
        return Err(data::DataError::Invalid("knowledge graph has no triples".into()).into());
    }
    let links = cfg.item_links.as_deref().map(data::load_item_links).transpose()?;
    let ds = Dataset::assemble(&all, users, items, kg, links.as_ref(), cfg.train_ratio, cfg.seed)?;
    ensure_dir(&cfg.out)?;
    ds.write(&cfg.out, &cfg.header())?;
    write_config(cfg)?;
    println!(
        "users {}  items {}  entities {}  relations {}  train {}  test {}  test-only users {}",
        ds.n_users(),
        ds.n_items(),
        ds.kg.n_entities(),
        ds.kg.n_relations(),
        ds.train.len(),
        ds.test.len(),
        ds.test_only_users.len()
    );
    println!("prepared {}", cfg.out.display());
    Ok(())
}

fn fresh_model(cfg: &RunConfig, ds: &Dataset) -> ModelState<f64> {
    let mc = cfg.model_config(ds.n_users(), ds.kg.n_entities(), ds.kg.relation_slots());
    ModelState::init(mc, &cfg.initial_kappas(), cfg.init_scale, cfg.seed)
}

fn run_training(cfg: &RunConfig, ds: &Dataset, verbose: bool) -> Result<(TrainOutcome, EvalResult)> {
    let model = fresh_model(cfg, ds);
    let out = training::train(model, ds, &cfg.train_config(), |r| {
        if verbose {
            eprintln!(
                "epoch {:>4}  loss {:.5}  HR@10 {:.4}  HR@20 {:.4}  NDCG@10 {:.4}  NDCG@20 {:.4}  kappa {:?}",
                r.epoch, r.loss, r.hr10, r.hr20, r.ndcg10, r.ndcg20, r.kappas
            );
        }
    })?;
    let res = match &out.best_eval {
        Some(r) => r.clone(),
        None => EvalSetup::new(ds, cfg.neighbor_size, cfg.seed).evaluate(&out.best, ds, &mckg::eval::DEFAULT_KS)?,
    };
    Ok((out, res))
}

fn report_row(epoch: usize, loss: f64, res: &EvalResult, kappas: &[f64]) -> EpochRecord {
    EpochRecord {
        epoch,
        loss,
        hr10: res.hr_at(10),
        hr20: res.hr_at(20),
        ndcg10: res.ndcg_at(10),
        ndcg20: res.ndcg_at(20),
        kappas: kappas.to_vec(),
        best_hr20: res.hr_at(20),
    }
}

fn print_table(title: &str, res: &EvalResult) {
    println!("{title}");
    println!("  {:<8} {:>8} {:>8}", "K", "HR", "NDCG");
    for (k, h) in &res.hr {
        println!("  {:<8} {:>8.4} {:>8.4}", k, h, res.ndcg[k]);
    }
    println!("  users    {:>8}", res.ranks.len());
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let ds = load_data(cfg)?;
    let (out, res) = run_training(cfg, &ds, true)?;
    ensure_dir(&cfg.out)?;
    let ckpt = Checkpoint {
        model: out.best.clone(),
        margin: cfg.margin,
    };
    ckpt.save(&cfg.out.join("model.ckpt"))?;
    let m = cfg.manifolds;
    training::write_metric_log(&cfg.out.join("metrics.csv"), &cfg.header(), m, &out.log)?;
    let best_loss = out.log.iter().find(|r| r.epoch == out.best_epoch).map_or(f64::NAN, |r| r.loss);
    let row = report_row(out.best_epoch, best_loss, &res, &out.best.dense.kappas);
    training::write_metric_log(&cfg.out.join("report.csv"), &cfg.header(), m, &[row])?;
    write_config(cfg)?;
    let stop = if out.stopped_early { "early stop" } else { "epoch limit" };
    print_table(&format!("best epoch {} of {} ({stop})", out.best_epoch, out.log.len()), &res);
    println!("checkpoint {}", cfg.out.join("model.ckpt").display());
    Ok(())
}

fn load_checkpoint(path: &Path, ds: &Dataset) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.check_compatible(ds.n_users(), ds.kg.n_entities(), ds.kg.relation_slots())?;
    Ok(ckpt)
}

/// Mean hinge loss over one (positive, first negative) triple per
/// evaluated user.
fn test_loss(ckpt: &Checkpoint, ds: &Dataset, setup: &EvalSetup) -> Result<f64> {
    let ctx = GraphContext {
        neighbors: &setup.neighbors,
        item_entity: &ds.item_entity,
    };
    let mut total = 0.0;
    for c in &setup.candidates {
        let t = data::Triple {
            user: c.user,
            pos: c.positive,
            neg: c.negatives[0],
        };
        total += training::ranking_loss::<f64, _>(&ckpt.model, ctx, t, ckpt.margin)?.loss;
    }
    Ok(total / setup.candidates.len().max(1) as f64)
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let ds = load_data(cfg)?;
    let ckpt = load_checkpoint(checkpoint, &ds)?;
    let setup = EvalSetup::new(&ds, ckpt.model.config.neighbor_size, cfg.seed);
    let res = setup.evaluate(&ckpt.model, &ds, &mckg::eval::DEFAULT_KS)?;
    let loss = test_loss(&ckpt, &ds, &setup)?;
    ensure_dir(&cfg.out)?;
    let row = report_row(0, loss, &res, &ckpt.model.dense.kappas);
    let path = cfg.out.join("eval.csv");
    training::write_metric_log(&path, &cfg.header(), ckpt.model.config.manifolds, &[row])?;
    print_table(&format!("checkpoint {}", checkpoint.display()), &res);
    println!("report {}", path.display());
    Ok(())
}

/// One configuration of a sweep, labelled by its varying columns.
struct Cell {
    labels: Vec<String>,
    cfg: RunConfig,
}

fn run_sweep(cfg: &RunConfig, name: &str, columns: &[&str], cells: Vec<Cell>) -> Result<()> {
    let ds = load_data(cfg)?;
    ensure_dir(&cfg.out)?;
    let mut csv = format!("# {}\n{},hr20,ndcg20,best_epoch,status\n", cfg.header(), columns.join(","));
    println!("{:<28} {:>8} {:>8} {:>6}  status", columns.join(" / "), "HR@20", "NDCG@20", "epoch");
    for cell in cells {
        let label = cell.labels.join(",");
        let line = match cell.cfg.validate().map_err(CliError::from).and_then(|_| run_training(&cell.cfg, &ds, false)) {
            Ok((out, res)) => {
                println!(
                    "{:<28} {:>8.4} {:>8.4} {:>6}  ok",
                    cell.labels.join(" / "),
                    res.hr_at(20),
                    res.ndcg_at(20),
                    out.best_epoch
                );
                format!("{label},{},{},{},ok", res.hr_at(20), res.ndcg_at(20), out.best_epoch)
            }
            Err(e) => {
                println!("{:<28} {:>8} {:>8} {:>6}  failed: {e}", cell.labels.join(" / "), "-", "-", "-");
                let msg = e.to_string().replace([',', '\n'], ";");
                format!("{label},,,,failed: {msg}")
            }
        };
        let _ = writeln!(csv, "{line}");
    }
    let path = cfg.out.join(format!("{name}.csv"));
    write_file(&path, &csv)?;
    println!("table {}", path.display());
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let mut cells = Vec::new();
    for agg in [Aggregator::Gcn, Aggregator::GraphSage, Aggregator::Neighbor] {
        for rule in MarginRule::all(cfg.margin.c()) {
            let mut c = cfg.clone();
            c.aggregator = agg;
            c.margin = rule;
            cells.push(Cell {
                labels: vec![agg.to_string(), rule.suffix().to_string()],
                cfg: c,
            });
        }
    }
    run_sweep(cfg, "ablation", &["aggregator", "margin"], cells)
}

pub fn depth_sweep(cfg: &RunConfig) -> Result<()> {
    let cells = (1..=3)
        .map(|k| {
            let mut c = cfg.clone();
            c.depth = k;
            Cell {
                labels: vec![k.to_string()],
                cfg: c,
            }
        })
        .collect();
    run_sweep(cfg, "depth", &["depth"], cells)
}

pub fn manifold_sweep(cfg: &RunConfig) -> Result<()> {
    let cells = (1..=4)
        .map(|m| {
            let mut c = cfg.clone();
            c.manifolds = m;
            c.kappas = None;
            Cell {
                labels: vec![m.to_string()],
                cfg: c,
            }
        })
        .collect();
    run_sweep(cfg, "manifolds", &["manifolds"], cells)
}

pub fn export_embeddings(cfg: &RunConfig, checkpoint: &Path) -> Result<PathBuf> {
    let ds = load_data(cfg)?;
    let ckpt = load_checkpoint(checkpoint, &ds)?;
    let m = &ckpt.model;
    let setup = EvalSetup::new(&ds, m.config.neighbor_size, cfg.seed);
    let ctx = GraphContext {
        neighbors: &setup.neighbors,
        item_entity: &ds.item_entity,
    };
    let tertiles = data::popularity_tertiles(&ds.train);
    let (d, nm) = (m.config.dim, m.config.manifolds);

    let mut out = format!("# {}\n# kappas", cfg.header());
    for k in &m.dense.kappas {
        let _ = write!(out, " {k}");
    }
    out.push_str("\nitem\ttertile");
    for s in 1..=nm {
        for j in 0..d {
            let _ = write!(out, "\tm{s}_{j}");
        }
    }
    out.push('\n');
    for v in 0..ds.n_items() as u32 {
        let rep = model::item_profile(m, ctx, v)?;
        let _ = write!(out, "{v}\t{}", tertiles[v as usize]);
        for e in &rep.embs {
            for x in e {
                let _ = write!(out, "\t{x:.17e}");
            }
        }
        out.push('\n');
    }
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("embeddings.tsv");
    write_file(&path, &out)?;
    println!("{} items written to {}", ds.n_items(), path.display());
    Ok(path)
}
