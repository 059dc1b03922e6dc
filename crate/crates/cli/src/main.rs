//! Experiment driver for the mixed-curvature knowledge-graph recommender.

mod commands;
mod error;

use clap::{Args, Parser, Subcommand};
use error::{CliError, EXIT_INPUT};
use mckg::config::RunConfig;
use mckg::data::SyntheticSpec;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mckg", version, about = "Mixed-curvature knowledge-graph recommendation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options common to every command. Flags override keys from `--config`.
#[derive(Args, Clone, Default)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for gradient and evaluation fan-out
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prepared dataset directory
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    manifolds: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// gcn, graphsage or neighbor
    #[arg(long)]
    aggregator: Option<String>,
    /// constant, geometry or hicf
    #[arg(long)]
    margin: Option<String>,
    #[arg(long = "margin-c")]
    margin_c: Option<f64>,
    #[arg(long = "train-ratio")]
    train_ratio: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Any other config key, as key=value; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset with planted clusters
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 300)]
        items: usize,
        #[arg(long, default_value_t = 500)]
        entities: usize,
    },
    /// Load raw interactions and KG, split, and write a prepared directory
    Prepare {
        #[command(flatten)]
        common: Common,
    },
    /// Train and write the best checkpoint and metric log
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Aggregator by margin-rule grid
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Depth 1, 2, 3
    DepthSweep {
        #[command(flatten)]
        common: Common,
    },
    /// One to four subspaces
    ManifoldSweep {
        #[command(flatten)]
        common: Common,
    },
    /// Per-item coordinates with popularity tertiles
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn build_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let flags: [(&str, Option<String>); 12] = [
        ("seed", c.seed.map(|x| x.to_string())),
        ("workers", c.workers.map(|x| x.to_string())),
        ("out", c.out.as_ref().map(|p| p.display().to_string())),
        ("data", c.data.as_ref().map(|p| p.display().to_string())),
        ("dim", c.dim.map(|x| x.to_string())),
        ("manifolds", c.manifolds.map(|x| x.to_string())),
        ("depth", c.depth.map(|x| x.to_string())),
        ("aggregator", c.aggregator.clone()),
        ("margin", c.margin.clone()),
        ("margin_c", c.margin_c.map(|x| x.to_string())),
        ("train_ratio", c.train_ratio.map(|x| x.to_string())),
        ("epochs", c.epochs.map(|x| x.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            mckg::config::ConfigError::Invalid(format!("--set expects key=value, got {kv:?}"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if c.manifolds.is_some() && cfg.kappas.as_ref().is_some_and(|k| k.len() != cfg.manifolds) {
        cfg.kappas = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.cmd {
        Cmd::Synth { common, .. }
        | Cmd::Prepare { common }
        | Cmd::Train { common }
        | Cmd::Eval { common, .. }
        | Cmd::Ablate { common }
        | Cmd::DepthSweep { common }
        | Cmd::ManifoldSweep { common }
        | Cmd::ExportEmbeddings { common, .. } => common,
    };
    let cfg = build_config(common)?;
    // the global pool can only be set once; a second call is harmless
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build_global();
    match &cli.cmd {
        Cmd::Synth {
            users, items, entities, ..
        } => {
            let spec = SyntheticSpec {
                users: *users,
                items: *items,
                entities: *entities,
                ..SyntheticSpec::default()
            };
            commands::synth(&cfg, &spec)
        }
        Cmd::Prepare { .. } => commands::prepare(&cfg),
        Cmd::Train { .. } => commands::train(&cfg),
        Cmd::Eval { checkpoint, .. } => commands::eval(&cfg, checkpoint),
        Cmd::Ablate { .. } => commands::ablate(&cfg),
        Cmd::DepthSweep { .. } => commands::depth_sweep(&cfg),
        Cmd::ManifoldSweep { .. } => commands::manifold_sweep(&cfg),
        Cmd::ExportEmbeddings { checkpoint, .. } => commands::export_embeddings(&cfg, checkpoint).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
