//! Binary model snapshots.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `MCKGCKPT` | 8 bytes |
//! | version | u32 |
//! | n_users, n_entities, relation_slots, dim, manifolds, depth, neighbor_size | u64 each |
//! | aggregator (0 gcn, 1 graphsage, 2 neighbor) | u8 |
//! | margin rule (0 constant, 1 geometry, 2 hicf) | u8 |
//! | margin c, leaky slope | f64 each |
//! | per space: user, entity, relation tables (row-major) | f64 arrays |
//! | per space, per layer: weight (row-major), bias | f64 arrays |
//! | per space: projection | f64 array |
//! | attention | f64 array |
//! | curvatures κ_1..κ_M | f64 each |
//!
//! Array lengths follow from the header, so none are stored.

use crate::model::{ModelConfig, ModelState};
use crate::propagation::Aggregator;
use crate::training::MarginRule;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"MCKGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// A model plus the margin rule it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState<f64>,
    pub margin: MarginRule,
}

fn agg_code(a: Aggregator) -> u8 {
    match a {
        Aggregator::Gcn => 0,
        Aggregator::GraphSage => 1,
        Aggregator::Neighbor => 2,
    }
}

fn rule_code(r: MarginRule) -> u8 {
    match r {
        MarginRule::Constant(_) => 0,
        MarginRule::GeometryAware(_) => 1,
        MarginRule::Hicf(_) => 2,
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let c = &m.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [c.n_users, c.n_entities, c.relation_slots, c.dim, c.manifolds, c.depth, c.neighbor_size] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.push(agg_code(c.aggregator));
        out.push(rule_code(self.margin));
        out.extend_from_slice(&self.margin.c().to_le_bytes());
        out.extend_from_slice(&c.leaky_slope.to_le_bytes());
        let mut put = |xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for t in &m.tables {
            put(t.users.as_slice());
            put(t.entities.as_slice());
            put(t.relations.as_slice());
        }
        for ls in &m.dense.layers {
            for l in ls {
                put(l.weight.as_slice());
                put(&l.bias);
            }
        }
        for p in &m.dense.proj {
            put(p.as_slice());
        }
        put(m.dense.attention.as_slice());
        put(&m.dense.kappas);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = usize::try_from(r.u64()?).map_err(|_| CheckpointError::Corrupt("dimension overflow".into()))?;
        }
        let [n_users, n_entities, relation_slots, dim, manifolds, depth, neighbor_size] = dims;
        let aggregator = match r.take(1)?[0] {
            0 => Aggregator::Gcn,
            1 => Aggregator::GraphSage,
            2 => Aggregator::Neighbor,
            x => return Err(CheckpointError::Corrupt(format!("aggregator code {x}"))),
        };
        let rule_code = r.take(1)?[0];
        let c = r.f64()?;
        let margin = match rule_code {
            0 => MarginRule::Constant(c),
            1 => MarginRule::GeometryAware(c),
            2 => MarginRule::Hicf(c),
            x => return Err(CheckpointError::Corrupt(format!("margin code {x}"))),
        };
        let leaky_slope = r.f64()?;
        if manifolds == 0 || dim == 0 {
            return Err(CheckpointError::Corrupt("zero dimension or space count".into()));
        }
        let config = ModelConfig {
            n_users,
            n_entities,
            relation_slots,
            dim,
            manifolds,
            depth,
            neighbor_size,
            aggregator,
            leaky_slope,
        };
        let expected = config.parameter_count().saturating_mul(8);
        if r.buf.len() != expected {
            return Err(if r.buf.len() < expected {
                CheckpointError::Truncated
            } else {
                CheckpointError::Corrupt("trailing bytes".into())
            });
        }

        let mut model = ModelState::<f64>::zeros(config, &vec![0.0; manifolds]);
        let mut fill = |xs: &mut [f64]| -> Result<()> {
            for x in xs {
                *x = r.f64()?;
            }
            Ok(())
        };
        for t in &mut model.tables {
            fill(t.users.as_mut_slice())?;
            fill(t.entities.as_mut_slice())?;
            fill(t.relations.as_mut_slice())?;
        }
        for ls in &mut model.dense.layers {
            for l in ls {
                fill(l.weight.as_mut_slice())?;
                fill(&mut l.bias)?;
            }
        }
        for p in &mut model.dense.proj {
            fill(p.as_mut_slice())?;
        }
        fill(model.dense.attention.as_mut_slice())?;
        fill(&mut model.dense.kappas)?;
        Ok(Checkpoint { model, margin })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| CheckpointError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_bytes(&bytes)
    }

    /// Errors unless the stored shapes fit a dataset with these counts.
    pub fn check_compatible(&self, n_users: usize, n_entities: usize, relation_slots: usize) -> Result<()> {
        let c = &self.model.config;
        for (name, have, want) in [
            ("users", c.n_users, n_users),
            ("entities", c.n_entities, n_entities),
            ("relation slots", c.relation_slots, relation_slots),
        ] {
            if have != want {
                return Err(CheckpointError::Incompatible(format!(
                    "checkpoint has {have} {name}, data has {want}"
                )));
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
