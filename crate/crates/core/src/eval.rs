//! Leave-one-out ranking evaluation: HR@K and NDCG@K over one held-out
//! positive and sampled negatives.

use crate::data::{sample_test_candidates, Candidates, InteractionStore};
use crate::fusion;
use crate::model::{self, GraphContext, ModelError, ModelState};
use rayon::prelude::*;
use std::collections::BTreeMap;
use thiserror::Error;

/// Cut-offs reported by default.
pub const DEFAULT_KS: [usize; 2] = [10, 20];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cut-off K must be positive")]
    InvalidK,
    #[error("rank must be at least 1")]
    InvalidRank,
    #[error("no user has a test positive")]
    EmptyTest,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Mean metrics per cut-off plus each user's rank.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    /// `(user, 1-based rank of the positive)`
    pub ranks: Vec<(u32, usize)>,
}

impl EvalResult {
    pub fn hr_at(&self, k: usize) -> f64 {
        self.hr.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// 1-based rank of `positive` when `items` are sorted by ascending
/// distance, ties broken by item id.
pub fn rank_candidates(positive: u32, items: &[u32], distances: &[f64]) -> usize {
    let i = items.iter().position(|&v| v == positive).expect("positive among candidates");
    let (dp, vp) = (distances[i], positive);
    1 + items
        .iter()
        .zip(distances)
        .filter(|&(&v, &d)| d < dp || (d == dp && v < vp))
        .count()
}

pub fn hr_at_k(rank: usize, k: usize) -> Result<f64> {
    check(rank, k)?;
    Ok(if rank <= k { 1.0 } else { 0.0 })
}

pub fn ndcg_at_k(rank: usize, k: usize) -> Result<f64> {
    check(rank, k)?;
    Ok(if rank <= k { 1.0 / ((rank + 1) as f64).log2() } else { 0.0 })
}

fn check(rank: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if rank == 0 {
        return Err(EvalError::InvalidRank);
    }
    Ok(())
}

/// Metrics from precomputed ranks, averaged in the given order.
pub fn summarize(ranks: Vec<(u32, usize)>, ks: &[usize]) -> Result<EvalResult> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let n = ranks.len() as f64;
    let (mut hr, mut ndcg) = (BTreeMap::new(), BTreeMap::new());
    for &k in ks {
        let mut h = 0.0;
        let mut g = 0.0;
        for &(_, r) in &ranks {
            h += hr_at_k(r, k)?;
            g += ndcg_at_k(r, k)?;
        }
        hr.insert(k, h / n);
        ndcg.insert(k, g / n);
    }
    Ok(EvalResult { hr, ndcg, ranks })
}

/// Candidate lists for every user with a test positive.
pub fn build_candidates(train: &InteractionStore, test: &InteractionStore, seed: u64) -> Vec<Candidates> {
    (0..test.n_users as u32)
        .filter_map(|u| sample_test_candidates(train, test, u, seed))
        .collect()
}

/// Ranks every candidate list with `score`, which returns one distance per
/// item of `Candidates::items`.
pub fn evaluate_with<F>(candidates: &[Candidates], ks: &[usize], score: F) -> Result<EvalResult>
where
    F: Fn(&Candidates, &[u32]) -> std::result::Result<Vec<f64>, ModelError> + Sync,
{
    if ks.contains(&0) {
        return Err(EvalError::InvalidK);
    }
    let ranks = candidates
        .par_iter()
        .map(|c| {
            let items: Vec<u32> = c.items().collect();
            let d = score(c, &items)?;
            Ok((c.user, rank_candidates(c.positive, &items, &d)))
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(ranks, ks)
}

/// Fused distances from user `u` to each of `items`.
pub fn score_items(model: &ModelState<f64>, ctx: GraphContext<'_>, u: u32, items: &[u32]) -> std::result::Result<Vec<f64>, ModelError> {
    let spaces = model.spaces();
    let (raw, ur) = model::user_representation(model, u)?;
    items
        .iter()
        .map(|&v| {
            let vr = model::item_representation(model, ctx, &raw, v)?;
            Ok(fusion::global_distance(&spaces, &ur, &vr)?)
        })
        .collect()
}

/// Full protocol over a model snapshot.
pub fn evaluate(model: &ModelState<f64>, ctx: GraphContext<'_>, candidates: &[Candidates], ks: &[usize]) -> Result<EvalResult> {
    evaluate_with(candidates, ks, |c, items| score_items(model, ctx, c.user, items))
}
