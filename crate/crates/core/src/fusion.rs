//! Cross-space fusion and the attention-weighted global distance.

use crate::geometry::{Curvature, GeometryError, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::Real;

/// An entity's embedding in each space plus its subspace attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation<T> {
    pub embs: Vec<Vec<T>>,
    pub weights: Vec<T>,
}

fn check_spaces(spaces: usize, got: usize) -> Result<()> {
    if spaces == got {
        Ok(())
    } else {
        Err(GeometryError::Shape {
            expected: spaces,
            got,
        })
    }
}

/// Averages the per-space tangent embeddings into `g` and replaces each
/// `e^m` by `exp_o(P_m (log_o(e^m) ‖ g))`.
pub fn fuse_global<T: Real>(spaces: &[Curvature<T>], embs: &[Vec<T>], projs: &[&Matrix<T>]) -> Result<Vec<Vec<T>>> {
    check_spaces(spaces.len(), embs.len())?;
    check_spaces(spaces.len(), projs.len())?;
    let tangents: Vec<Vec<T>> = spaces
        .iter()
        .zip(embs)
        .map(|(s, e)| s.log0(e))
        .collect::<Result<_>>()?;
    let g = global_mean(&tangents)?;
    spaces
        .iter()
        .zip(&tangents)
        .zip(projs)
        .map(|((s, t), p)| {
            let cat = linalg::concat(t, &g);
            if p.cols() != cat.len() {
                return Err(GeometryError::Shape {
                    expected: p.cols(),
                    got: cat.len(),
                });
            }
            s.exp0(&p.matvec(&cat))
        })
        .collect()
}

/// Mean of tangent vectors.
pub fn global_mean<T: Real>(tangents: &[Vec<T>]) -> Result<Vec<T>> {
    let dim = tangents.first().map_or(0, Vec::len);
    let mut g = vec![T::zero(); dim];
    for t in tangents {
        if t.len() != dim {
            return Err(GeometryError::Shape {
                expected: dim,
                got: t.len(),
            });
        }
        for (a, &x) in g.iter_mut().zip(t) {
            *a = *a + x;
        }
    }
    let inv = T::one() / T::lit(tangents.len().max(1) as f64);
    Ok(linalg::scale(&g, inv))
}

/// Softmax of `W_att · (log_o(e^1) ‖ … ‖ log_o(e^M))`.
pub fn subspace_attention<T: Real>(spaces: &[Curvature<T>], embs: &[Vec<T>], w_att: &Matrix<T>) -> Result<Vec<T>> {
    check_spaces(spaces.len(), embs.len())?;
    let mut cat = Vec::new();
    for (s, e) in spaces.iter().zip(embs) {
        cat.extend(s.log0(e)?);
    }
    if w_att.cols() != cat.len() || w_att.rows() != spaces.len() {
        return Err(GeometryError::Shape {
            expected: w_att.cols(),
            got: cat.len(),
        });
    }
    Ok(linalg::softmax(&w_att.matvec(&cat)))
}

/// `Σ_m (w'_u,m + w'_v,m) · d_κm(u_m, v_m)`.
pub fn global_distance<T: Real>(spaces: &[Curvature<T>], u: &Representation<T>, v: &Representation<T>) -> Result<T> {
    check_spaces(spaces.len(), u.embs.len())?;
    check_spaces(spaces.len(), v.embs.len())?;
    let mut total = T::zero();
    for (m, s) in spaces.iter().enumerate() {
        let w = u.weights[m] + v.weights[m];
        total = total + w * s.dist(&u.embs[m], &v.embs[m])?;
    }
    Ok(total)
}

/// Distance to the origin under the entity's own weights,
/// `Σ_m w'_m · d_κm(x_m, o)`.
pub fn origin_distance<T: Real>(spaces: &[Curvature<T>], x: &Representation<T>) -> Result<T> {
    check_spaces(spaces.len(), x.embs.len())?;
    let mut total = T::zero();
    for (m, s) in spaces.iter().enumerate() {
        total = total + x.weights[m] * s.dist0(&x.embs[m])?;
    }
    Ok(total)
}
