//! Single-space propagation: lifting, user-conditioned relational attention,
//! neighbourhood aggregation and layer combination.
//!
//! Every exp/log is taken at the origin of the subspace, and the weighted sum
//! over a receptive field is a tangent-space mean there, which makes the
//! aggregate independent of neighbour order.

use crate::data::NeighborTable;
use crate::geometry::{Curvature, Result};
use crate::linalg::{self, Matrix};
use crate::model::{Layer, ModelError, ParamSource, Table};
use crate::scalar::Real;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregator {
    /// Own and neighbourhood embeddings added.
    Gcn,
    /// Own and neighbourhood embeddings concatenated.
    GraphSage,
    /// Neighbourhood embedding alone.
    Neighbor,
}

pub const LEAKY_SLOPE: f64 = 0.2;

/// Euclidean parameter row to manifold point.
pub fn lift<T: Real>(space: &Curvature<T>, row: &[T]) -> Result<Vec<T>> {
    space.exp0(row)
}

/// Importance of a relation to a user, `e_u ⊙ e_r`.
pub fn relation_attention<T: Real>(space: &Curvature<T>, e_u: &[T], e_r: &[T]) -> Result<T> {
    space.kappa_dot(e_u, e_r)
}

/// Softmax over `logits`, then the weighted tangent mean of `neighbors`.
pub fn neighbor_aggregate<T: Real>(space: &Curvature<T>, logits: &[T], neighbors: &[&[T]]) -> Result<Vec<T>> {
    let w = linalg::softmax(logits);
    space.weighted_midpoint(neighbors, &w)
}

/// One aggregation step, `exp_o(σ(log_o(W ⊗ h ⊕ b)))` with `h` chosen by
/// `kind`. The bias is a Euclidean vector lifted at the origin.
pub fn aggregate_layer<T: Real>(
    space: &Curvature<T>,
    kind: Aggregator,
    e_v: &[T],
    e_s: &[T],
    layer: &Layer<T>,
    slope: f64,
) -> Result<Vec<T>> {
    let h = match kind {
        Aggregator::Gcn => space.mobius_add(e_v, e_s)?,
        Aggregator::GraphSage => space.concat(e_v, e_s)?,
        Aggregator::Neighbor => e_s.to_vec(),
    };
    transform(space, &layer.weight, &layer.bias, &h, slope)
}

fn transform<T: Real>(space: &Curvature<T>, w: &Matrix<T>, b: &[T], h: &[T], slope: f64) -> Result<Vec<T>> {
    let wh = space.mobius_matvec(w, h)?;
    let lifted_b = space.exp0(b)?;
    let z = space.log0(&space.mobius_add(&wh, &lifted_b)?)?;
    let act: Vec<T> = z.into_iter().map(|x| x.leaky_relu(slope)).collect();
    space.exp0(&act)
}

/// `e^{(0)} ⊕ e^{(1)} ⊕ … ⊕ e^{(K)}`, left to right.
pub fn layer_combine<T: Real>(space: &Curvature<T>, layers: &[Vec<T>]) -> Result<Vec<T>> {
    let mut it = layers.iter();
    let Some(first) = it.next() else {
        return Ok(Vec::new());
    };
    it.try_fold(first.clone(), |acc, e| space.mobius_add(&acc, e))
}

/// Final embedding of entity `root` in space `m` for the user whose lifted
/// embedding in that space is `e_u`.
///
/// The receptive field is expanded `K` hops through `neighbors`; layer `h`
/// updates every node within `K - h - 1` hops of the root from its children,
/// and the root's state after each layer feeds [`layer_combine`].
pub fn forward_subspace<T: Real, P: ParamSource<T>>(
    src: &P,
    m: usize,
    neighbors: &NeighborTable,
    e_u: &[T],
    root: u32,
) -> std::result::Result<Vec<T>, ModelError> {
    let cfg = src.config();
    let space = src.space(m);
    let k = cfg.depth;
    let s = neighbors.size();

    let mut ents: Vec<Vec<u32>> = vec![vec![root]];
    let mut rels: Vec<Vec<u32>> = Vec::with_capacity(k);
    for h in 0..k {
        let (mut r, mut e) = (Vec::new(), Vec::new());
        for &x in &ents[h] {
            for &(rel, nb) in neighbors.get(x) {
                r.push(rel);
                e.push(nb);
            }
        }
        rels.push(r);
        ents.push(e);
    }

    let mut logits: HashMap<u32, T> = HashMap::new();
    for &r in rels.iter().flatten() {
        if let std::collections::hash_map::Entry::Vacant(slot) = logits.entry(r) {
            let e_r = lift(&space, &src.row(Table::Relation, m, r))?;
            slot.insert(relation_attention(&space, e_u, &e_r)?);
        }
    }

    let mut embs: Vec<Vec<Vec<T>>> = ents
        .iter()
        .map(|level| {
            level
                .iter()
                .map(|&e| lift(&space, &src.row(Table::Entity, m, e)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut outputs = vec![embs[0][0].clone()];
    for h in 0..k {
        let layer = &src.dense().layers[m][h];
        let mut next = Vec::with_capacity(k - h);
        for i in 0..k - h {
            let mut level = Vec::with_capacity(embs[i].len());
            for (j, e_v) in embs[i].iter().enumerate() {
                let kids: Vec<&[T]> = embs[i + 1][j * s..(j + 1) * s].iter().map(Vec::as_slice).collect();
                let lg: Vec<T> = rels[i][j * s..(j + 1) * s].iter().map(|r| logits[r]).collect();
                let e_s = neighbor_aggregate(&space, &lg, &kids)?;
                level.push(aggregate_layer(&space, cfg.aggregator, e_v, &e_s, layer, cfg.leaky_slope)?);
            }
            next.push(level);
        }
        embs = next;
        outputs.push(embs[0][0].clone());
    }
    Ok(layer_combine(&space, &outputs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(k: f64) -> Curvature<f64> {
        Curvature::new(k)
    }

    #[test]
    fn lift_examples() {
        assert_eq!(lift(&c(0.0), &[0.3, -0.2]).unwrap(), vec![0.3, -0.2]);
        assert_eq!(lift(&c(-1.0), &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let l = lift(&c(-1.0), &[0.3, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(l[0], 0.291_312_612_451_590_9, epsilon = 1e-15);
    }

    #[test]
    fn attention_examples() {
        assert_eq!(relation_attention(&c(-1.0), &[0.0, 0.0], &[0.2, 0.4]).unwrap(), 0.0);
        assert_abs_diff_eq!(relation_attention(&c(0.0), &[0.5, 1.0], &[2.0, -1.0]).unwrap(), 0.0);
        // hand-composed log_o / dot at κ = -1
        let (u, r) = ([0.3, 0.1], [-0.2, 0.4]);
        let lu = c(-1.0).log0(&u).unwrap();
        let lr = c(-1.0).log0(&r).unwrap();
        let expect = lu[0] * lr[0] + lu[1] * lr[1];
        assert_abs_diff_eq!(relation_attention(&c(-1.0), &u, &r).unwrap(), expect, epsilon = 1e-15);
    }

    #[test]
    fn aggregate_examples() {
        let a = [0.1, 0.2];
        let b = [0.3, -0.1];
        let k = c(-1.0);
        let one = neighbor_aggregate(&k, &[0.7], &[&a]).unwrap();
        assert_abs_diff_eq!(one[0], a[0], epsilon = 1e-15);
        assert_abs_diff_eq!(one[1], a[1], epsilon = 1e-15);
        // equal logits: uniform tangent mean
        let eq = neighbor_aggregate(&k, &[0.4, 0.4], &[&a, &b]).unwrap();
        let mid = k.weighted_midpoint(&[&a, &b], &[0.5, 0.5]).unwrap();
        assert_eq!(eq, mid);
        // κ = 0, weights (0.3, 0.7): logits ln 0.3, ln 0.7
        let e = neighbor_aggregate(&c(0.0), &[0.3f64.ln(), 0.7f64.ln()], &[&a, &b]).unwrap();
        assert_abs_diff_eq!(e[0], 0.3 * 0.1 + 0.7 * 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1], 0.3 * 0.2 - 0.7 * 0.1, epsilon = 1e-15);
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let pts = [[0.1, 0.2], [0.3, -0.1], [-0.2, 0.05]];
        let lg = [0.2, -0.4, 1.1];
        let k = c(-0.7);
        let fwd = neighbor_aggregate(&k, &lg, &[&pts[0], &pts[1], &pts[2]]).unwrap();
        let rev = neighbor_aggregate(&k, &[lg[2], lg[0], lg[1]], &[&pts[2], &pts[0], &pts[1]]).unwrap();
        for (x, y) in fwd.iter().zip(&rev) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    fn identity_layer(d: usize, in_d: usize) -> Layer<f64> {
        Layer {
            weight: Matrix::from_fn(d, in_d, |r, cc| if r == cc { 1.0 } else { 0.0 }),
            bias: vec![0.0; d],
        }
    }

    #[test]
    fn gcn_at_zero_curvature_is_leaky_sum() {
        let out = aggregate_layer(&c(0.0), Aggregator::Gcn, &[0.5, -1.0], &[0.25, 0.5], &identity_layer(2, 2), 0.2).unwrap();
        assert_abs_diff_eq!(out[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -0.1, epsilon = 1e-15);
    }

    #[test]
    fn neighbor_kind_ignores_self() {
        let l = identity_layer(2, 2);
        let k = c(-1.0);
        let a = aggregate_layer(&k, Aggregator::Neighbor, &[0.1, 0.1], &[0.2, -0.3], &l, 0.2).unwrap();
        let b = aggregate_layer(&k, Aggregator::Neighbor, &[-0.6, 0.4], &[0.2, -0.3], &l, 0.2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn graphsage_uses_double_width() {
        let l = identity_layer(2, 4);
        let out = aggregate_layer(&c(0.0), Aggregator::GraphSage, &[0.5, 0.2], &[0.1, 0.3], &l, 0.2).unwrap();
        assert_abs_diff_eq!(out[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn hyperbolic_gcn_matches_composition() {
        let k = c(-1.0);
        let layer = Layer {
            weight: Matrix::from_vec(2, 2, vec![0.9, -0.2, 0.3, 1.1]),
            bias: vec![0.05, -0.02],
        };
        let (ev, es) = ([0.2, -0.1], [0.05, 0.3]);
        let out = aggregate_layer(&k, Aggregator::Gcn, &ev, &es, &layer, 0.2).unwrap();

        // the same chain written out with the geometry ops
        let sum = k.mobius_add(&ev, &es).unwrap();
        let t = layer.weight.matvec(&k.log0(&sum).unwrap());
        let wh = k.exp0(&t).unwrap();
        let z = k.log0(&k.mobius_add(&wh, &k.exp0(&layer.bias).unwrap()).unwrap()).unwrap();
        let act: Vec<f64> = z.iter().map(|&x| if x >= 0.0 { x } else { 0.2 * x }).collect();
        let expect = k.exp0(&act).unwrap();
        for (x, y) in out.iter().zip(&expect) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn layer_combine_examples() {
        let e0 = vec![0.1, 0.2];
        assert_eq!(layer_combine(&c(-1.0), std::slice::from_ref(&e0)).unwrap(), e0);
        let e1 = vec![0.3, -0.1];
        let e2 = vec![-0.05, 0.15];
        let s = layer_combine(&c(0.0), &[e0.clone(), e1.clone(), e2.clone()]).unwrap();
        assert_abs_diff_eq!(s[0], 0.35, epsilon = 1e-15);
        let k = c(-1.0);
        let chain = k.mobius_add(&k.mobius_add(&e0, &e1).unwrap(), &e2).unwrap();
        assert_eq!(layer_combine(&k, &[e0, e1, e2]).unwrap(), chain);
    }
}
