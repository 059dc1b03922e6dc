#![allow(dead_code)]

use mckg::data::{Dataset, InteractionStore, KnowledgeGraph, Vocab};
use mckg::model::{ModelConfig, ModelState};
use mckg::propagation::Aggregator;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 20 entities, the first 8 of which are items, three relations.
pub fn toy_kg() -> KnowledgeGraph {
    let names: Vec<String> = (0..20).map(|i| format!("e{i}")).collect();
    let rels = ["r0", "r1", "r2"];
    let mut triples = Vec::new();
    for i in 0..20usize {
        let a = (i * 7 + 3) % 20;
        if a != i {
            triples.push((i, rels[i % 3], a));
        }
        let b = (i * 3 + 11) % 20;
        if b != i && b != a {
            triples.push((i, rels[(i + 1) % 3], b));
        }
    }
    KnowledgeGraph::from_triples(triples.iter().map(|&(h, r, t)| (names[h].as_str(), r, names[t].as_str())))
}

/// `n_users` users with three to five positives each among 8 items.
pub fn toy_dataset(n_users: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = Vocab::default();
    let mut items = Vocab::default();
    for v in 0..8 {
        items.intern(&format!("e{v}"));
    }
    let mut pairs = Vec::new();
    for u in 0..n_users {
        let uid = users.intern(&format!("u{u}"));
        let n = rng.gen_range(3..=5);
        for _ in 0..n {
            pairs.push((uid, rng.gen_range(0..8)));
        }
    }
    let all = InteractionStore::from_pairs(users.len(), items.len(), pairs);
    Dataset::assemble(&all, users, items, toy_kg(), None, 0.7, seed).unwrap()
}

pub fn config_for(ds: &Dataset, dim: usize, manifolds: usize, depth: usize, neighbor_size: usize, aggregator: Aggregator) -> ModelConfig {
    ModelConfig {
        n_users: ds.n_users(),
        n_entities: ds.kg.n_entities(),
        relation_slots: ds.kg.relation_slots(),
        dim,
        manifolds,
        depth,
        neighbor_size,
        aggregator,
        leaky_slope: 0.2,
    }
}

/// Random model with every block, including attention, biases and
/// projections, perturbed away from its structured start.
pub fn random_model(cfg: ModelConfig, kappas: &[f64], scale: f64, seed: u64) -> ModelState<f64> {
    let mut m = ModelState::init(cfg, kappas, scale, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let n_k = kappas.len();
    let mut i = 0;
    m.dense.for_each_mut(|x| {
        if i >= n_k {
            *x += rng.gen_range(-0.2..0.2);
        }
        i += 1;
    });
    m
}
