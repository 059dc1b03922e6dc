//! Run configuration as line-oriented `key = value` text.
//!
//! Blank lines and `#` comments are ignored. Later assignments win, so
//! command-line overrides are applied with [`RunConfig::set`] after the file.

use crate::data::InteractionFormat;
use crate::model::{default_kappas, ModelConfig};
use crate::propagation::{Aggregator, LEAKY_SLOPE};
use crate::training::{MarginRule, Sgd, TrainConfig, PATIENCE};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub interactions: Option<PathBuf>,
    pub kg: Option<PathBuf>,
    pub item_links: Option<PathBuf>,
    pub separator: String,
    pub rating_threshold: Option<f64>,
    pub skip_header: bool,
    /// Prepared dataset directory.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub train_ratio: f64,
    pub dim: usize,
    pub manifolds: usize,
    /// Initial curvatures; defaults follow [`default_kappas`].
    pub kappas: Option<Vec<f64>>,
    pub depth: usize,
    pub neighbor_size: usize,
    pub aggregator: Aggregator,
    pub margin: MarginRule,
    pub lr: f64,
    pub kappa_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub init_scale: f64,
    pub leaky_slope: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            interactions: None,
            kg: None,
            item_links: None,
            separator: "\t".into(),
            rating_threshold: None,
            skip_header: false,
            data: None,
            out: PathBuf::from("runs"),
            train_ratio: 0.7,
            dim: 32,
            manifolds: 3,
            kappas: None,
            depth: 1,
            neighbor_size: 4,
            aggregator: Aggregator::Gcn,
            margin: MarginRule::GeometryAware(0.1),
            lr: 1e-3,
            kappa_lr: 1e-4,
            batch_size: 1024,
            epochs: 200,
            patience: PATIENCE,
            init_scale: 0.1,
            leaky_slope: LEAKY_SLOPE,
            seed: 0,
            workers: 1,
        }
    }
}

/// Keys in the order [`RunConfig::render`] writes them.
pub const KEYS: &[&str] = &[
    "interactions",
    "kg",
    "item_links",
    "separator",
    "rating_threshold",
    "skip_header",
    "data",
    "out",
    "train_ratio",
    "dim",
    "manifolds",
    "kappas",
    "depth",
    "neighbor_size",
    "aggregator",
    "margin",
    "margin_c",
    "lr",
    "kappa_lr",
    "batch_size",
    "epochs",
    "patience",
    "init_scale",
    "leaky_slope",
    "seed",
    "workers",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        msg: e.to_string(),
    })
}

fn unescape(s: &str) -> String {
    match s {
        "tab" | "\\t" => "\t".into(),
        _ => s.into(),
    }
}

fn escape(s: &str) -> String {
    if s == "\t" {
        "tab".into()
    } else {
        s.into()
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected key = value, got {raw:?}"),
            })?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Assigns one key. `format = movielens | tab` is a preset for the
    /// separator and rating threshold.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |msg: &str| ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            msg: msg.into(),
        };
        match key {
            "format" => {
                let f = match value {
                    "movielens" => InteractionFormat::movielens(),
                    "tab" => InteractionFormat::tab(),
                    _ => return Err(bad("expected movielens or tab")),
                };
                self.separator = f.separator;
                self.rating_threshold = f.rating_threshold;
                self.skip_header = f.skip_header;
            }
            "interactions" => self.interactions = opt_path(value),
            "kg" => self.kg = opt_path(value),
            "item_links" => self.item_links = opt_path(value),
            "separator" => {
                if value.is_empty() {
                    return Err(bad("empty separator"));
                }
                self.separator = unescape(value)
            }
            "rating_threshold" => {
                self.rating_threshold = match value {
                    "" | "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "skip_header" => self.skip_header = num(key, value)?,
            "data" => self.data = opt_path(value),
            "out" => self.out = PathBuf::from(value),
            "train_ratio" => self.train_ratio = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "manifolds" => self.manifolds = num(key, value)?,
            "kappas" => {
                self.kappas = match value {
                    "" | "default" => None,
                    v => Some(v.split(',').map(|x| num(key, x.trim())).collect::<Result<_>>()?),
                }
            }
            "depth" => self.depth = num(key, value)?,
            "neighbor_size" => self.neighbor_size = num(key, value)?,
            "aggregator" => self.aggregator = value.parse().map_err(|e: String| bad(&e))?,
            "margin" => {
                let r: MarginRule = value.parse().map_err(|e: String| bad(&e))?;
                self.margin = r.with_c(self.margin.c());
            }
            "margin_c" => self.margin = self.margin.with_c(num(key, value)?),
            "lr" => self.lr = num(key, value)?,
            "kappa_lr" => self.kappa_lr = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "init_scale" => self.init_scale = num(key, value)?,
            "leaky_slope" => self.leaky_slope = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        if !(1..=3).contains(&self.depth) {
            return inv(format!("depth must be 1, 2 or 3, got {}", self.depth));
        }
        if self.manifolds == 0 {
            return inv("manifolds must be at least 1".into());
        }
        if !(2..=512).contains(&self.dim) {
            return inv(format!("dim must be in [2, 512], got {}", self.dim));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return inv(format!("train_ratio must be in (0, 1), got {}", self.train_ratio));
        }
        if self.neighbor_size == 0 || self.batch_size == 0 {
            return inv("neighbor_size and batch_size must be positive".into());
        }
        if let Some(k) = &self.kappas {
            if k.len() != self.manifolds {
                return inv(format!("{} kappas given for {} manifolds", k.len(), self.manifolds));
            }
            if k.iter().any(|x| !x.is_finite()) {
                return inv("kappas must be finite".into());
            }
        }
        if self.margin.c() < 0.0 || !self.margin.c().is_finite() {
            return inv("margin_c must be a finite nonnegative number".into());
        }
        for (name, v) in [("lr", self.lr), ("kappa_lr", self.kappa_lr), ("init_scale", self.init_scale)] {
            if !(v.is_finite() && v >= 0.0) {
                return inv(format!("{name} must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    /// Errors unless every named path exists.
    pub fn require_paths(paths: &[(&str, &Option<PathBuf>)]) -> Result<()> {
        for (name, p) in paths {
            match p {
                None => return Err(ConfigError::Invalid(format!("{name} is required"))),
                Some(p) if !p.exists() => {
                    return Err(ConfigError::Invalid(format!("{name} {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn interaction_format(&self) -> InteractionFormat {
        InteractionFormat {
            separator: self.separator.clone(),
            rating_threshold: self.rating_threshold,
            skip_header: self.skip_header,
        }
    }

    pub fn initial_kappas(&self) -> Vec<f64> {
        self.kappas.clone().unwrap_or_else(|| default_kappas(self.manifolds))
    }

    pub fn model_config(&self, n_users: usize, n_entities: usize, relation_slots: usize) -> ModelConfig {
        ModelConfig {
            n_users,
            n_entities,
            relation_slots,
            dim: self.dim,
            manifolds: self.manifolds,
            depth: self.depth,
            neighbor_size: self.neighbor_size,
            aggregator: self.aggregator,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            sgd: Sgd {
                lr: self.lr,
                kappa_lr: self.kappa_lr,
            },
            margin: self.margin,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// Canonical text with every key, parseable by [`RunConfig::parse`].
    pub fn render(&self) -> String {
        let p = |x: &Option<PathBuf>| x.as_ref().map_or(String::new(), |p| p.display().to_string());
        let mut s = String::new();
        for &k in KEYS {
            let v = match k {
                "interactions" => p(&self.interactions),
                "kg" => p(&self.kg),
                "item_links" => p(&self.item_links),
                "separator" => escape(&self.separator),
                "rating_threshold" => self.rating_threshold.map_or("none".into(), |t| t.to_string()),
                "skip_header" => self.skip_header.to_string(),
                "data" => p(&self.data),
                "out" => self.out.display().to_string(),
                "train_ratio" => self.train_ratio.to_string(),
                "dim" => self.dim.to_string(),
                "manifolds" => self.manifolds.to_string(),
                "kappas" => self.kappas.as_ref().map_or("default".into(), |ks| {
                    ks.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
                }),
                "depth" => self.depth.to_string(),
                "neighbor_size" => self.neighbor_size.to_string(),
                "aggregator" => self.aggregator.to_string(),
                "margin" => self.margin.to_string(),
                "margin_c" => self.margin.c().to_string(),
                "lr" => self.lr.to_string(),
                "kappa_lr" => self.kappa_lr.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "epochs" => self.epochs.to_string(),
                "patience" => self.patience.to_string(),
                "init_scale" => self.init_scale.to_string(),
                "leaky_slope" => self.leaky_slope.to_string(),
                "seed" => self.seed.to_string(),
                "workers" => self.workers.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::render`]. The
    /// worker count and output directory do not affect results and are
    /// left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 1;
        c.out = PathBuf::new();
        let digest = Sha256::digest(c.render().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Comment line written at the top of every output file.
    pub fn header(&self) -> String {
        format!("mckg config {}", self.hash())
    }
}
