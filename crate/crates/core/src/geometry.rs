//! The κ-stereographic model: one chart for hyperbolic (κ < 0), Euclidean
//! (κ = 0) and spherical (κ > 0) geometry.
//!
//! All operations are pure and generic over [`Real`]. Near κ = 0 the
//! κ-trigonometric functions switch to their cubic Taylor forms so values and
//! κ-derivatives stay continuous when a trainable curvature changes sign.
//!
//! Möbius addition uses
//!
//! ```text
//! x ⊕ y = ((1 − 2κ⟨x,y⟩ − κ‖y‖²) x + (1 + κ‖x‖²) y) / (1 − 2κ⟨x,y⟩ + κ²‖x‖²‖y‖²)
//! ```
//!
//! Points with κ < 0 live in the open ball of radius 1/√−κ; every operation
//! that returns a point re-projects it to `(1 − 1e-5)` of that radius.

use crate::linalg::{self, Matrix};
use crate::scalar::Real;
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

pub const DEFAULT_TAYLOR_EPS: f64 = 1e-7;
/// Fraction of the κ < 0 ball radius points are projected to.
pub const BALL_SAFETY: f64 = 1.0 - 1e-5;
pub const ATANH_CLAMP: f64 = 1.0 - 1e-12;
/// Distance kept from the tan pole `π / (2√κ)` for κ > 0.
pub const TAN_POLE_MARGIN: f64 = 1e-6;
pub const MIN_DENOMINATOR: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("point outside the κ-ball: ‖x‖² = {norm_sq}, bound {bound}")]
    OutOfDomain { norm_sq: f64, bound: f64 },
    #[error("degenerate denominator {0:e} in Möbius addition")]
    Degenerate(f64),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

fn finite<T: Real>(xs: &[T], ctx: &'static str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::NonFinite(ctx))
    }
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(GeometryError::Shape {
            expected: a,
            got: b,
        })
    }
}

/// Sectional curvature of one space together with its operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature<T> {
    pub kappa: T,
    /// `|κ|` at or below this uses the Taylor branch.
    pub taylor_eps: f64,
}

impl<T: Real> Curvature<T> {
    pub fn new(kappa: T) -> Self {
        Curvature {
            kappa,
            taylor_eps: DEFAULT_TAYLOR_EPS,
        }
    }

    fn is_flat(&self) -> bool {
        self.kappa.abs().value() <= self.taylor_eps
    }

    /// Radius of the κ < 0 ball, `None` otherwise.
    pub fn radius(&self) -> Option<T> {
        (self.kappa < T::zero()).then(|| (-self.kappa).sqrt().recip())
    }

    pub fn tan_k(&self, t: T) -> Result<T> {
        finite(&[t, self.kappa], "tan_k")?;
        let k = self.kappa;
        if self.is_flat() {
            return Ok(t + k * t * t * t / T::lit(3.0));
        }
        if k > T::zero() {
            let s = k.sqrt();
            let limit = T::lit(FRAC_PI_2) / s - T::lit(TAN_POLE_MARGIN);
            let t = t.max(-limit).min(limit);
            Ok((t * s).tan() / s)
        } else {
            let s = (-k).sqrt();
            Ok((t * s).tanh() / s)
        }
    }

    pub fn atan_k(&self, t: T) -> Result<T> {
        finite(&[t, self.kappa], "atan_k")?;
        let k = self.kappa;
        if self.is_flat() {
            return Ok(t - k * t * t * t / T::lit(3.0));
        }
        if k > T::zero() {
            let s = k.sqrt();
            Ok((t * s).atan() / s)
        } else {
            let s = (-k).sqrt();
            let c = T::lit(ATANH_CLAMP);
            Ok((t * s).max(-c).min(c).atanh() / s)
        }
    }

    /// `tan_k(t) / t`, continuous at zero.
    fn tan_ratio(&self, t: T) -> Result<T> {
        if t == T::zero() {
            Ok(T::one())
        } else {
            Ok(self.tan_k(t)? / t)
        }
    }

    /// `atan_k(t) / t`, continuous at zero.
    fn atan_ratio(&self, t: T) -> Result<T> {
        if t == T::zero() {
            Ok(T::one())
        } else {
            Ok(self.atan_k(t)? / t)
        }
    }

    /// `λ_x = 2 / (1 + κ‖x‖²)`.
    pub fn conformal_factor(&self, x: &[T]) -> Result<T> {
        let den = T::one() + self.kappa * T::dot(x, x);
        if den.value() <= 0.0 {
            return Err(GeometryError::OutOfDomain {
                norm_sq: T::dot(x, x).value(),
                bound: -1.0 / self.kappa.value(),
            });
        }
        Ok(T::lit(2.0) / den)
    }

    /// Rescales into the open ball when κ < 0; identity otherwise.
    pub fn project(&self, x: &[T]) -> Result<Vec<T>> {
        finite(x, "project")?;
        let Some(r) = self.radius() else {
            return Ok(x.to_vec());
        };
        let bound = r * T::lit(BALL_SAFETY);
        let n = T::norm(x);
        if n >= bound {
            Ok(linalg::scale(x, bound / n))
        } else {
            Ok(x.to_vec())
        }
    }

    pub fn project_to_domain(&self, x: &[T]) -> Result<ManifoldPoint<T>> {
        Ok(ManifoldPoint {
            coords: self.project(x)?,
            curvature: *self,
        })
    }

    /// Wraps in-domain coordinates without modifying them.
    pub fn point(&self, coords: Vec<T>) -> Result<ManifoldPoint<T>> {
        finite(&coords, "point")?;
        if let Some(r) = self.radius() {
            let n2 = T::dot(&coords, &coords);
            if n2 >= r * r {
                return Err(GeometryError::OutOfDomain {
                    norm_sq: n2.value(),
                    bound: (r * r).value(),
                });
            }
        }
        Ok(ManifoldPoint {
            coords,
            curvature: *self,
        })
    }

    pub fn origin(&self, dim: usize) -> ManifoldPoint<T> {
        ManifoldPoint {
            coords: vec![T::zero(); dim],
            curvature: *self,
        }
    }

    pub fn mobius_add(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        same_len(x.len(), y.len())?;
        let k = self.kappa;
        let two = T::lit(2.0);
        let xy = T::dot(x, y);
        let x2 = T::dot(x, x);
        let y2 = T::dot(y, y);
        let cx = T::one() - two * k * xy - k * y2;
        let cy = T::one() + k * x2;
        let den = T::one() - two * k * xy + k * k * x2 * y2;
        if den.abs().value() < MIN_DENOMINATOR {
            return Err(GeometryError::Degenerate(den.value()));
        }
        let out: Vec<T> = x
            .iter()
            .zip(y)
            .map(|(&xi, &yi)| (cx * xi + cy * yi) / den)
            .collect();
        self.project(&out)
    }

    /// `(−x) ⊕ y`.
    pub fn mobius_sub(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        self.mobius_add(&linalg::neg(x), y)
    }

    pub fn exp_map(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        same_len(x.len(), v.len())?;
        let n = T::norm(v);
        let half_lambda = self.conformal_factor(x)? / T::lit(2.0);
        // tan_k(λ‖v‖/2) / ‖v‖, whose limit at v = 0 is λ/2
        let step = if n == T::zero() {
            half_lambda
        } else {
            self.tan_k(half_lambda * n)? / n
        };
        self.mobius_add(x, &linalg::scale(v, step))
    }

    pub fn log_map(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        let w = self.mobius_sub(x, y)?;
        let n = T::norm(&w);
        let f = T::lit(2.0) / self.conformal_factor(x)? * self.atan_ratio(n)?;
        Ok(linalg::scale(&w, f))
    }

    /// `exp_o(v)` at the origin, where `λ_o = 2`.
    pub fn exp0(&self, v: &[T]) -> Result<Vec<T>> {
        finite(v, "exp0")?;
        let r = self.tan_ratio(T::norm(v))?;
        self.project(&linalg::scale(v, r))
    }

    pub fn log0(&self, y: &[T]) -> Result<Vec<T>> {
        finite(y, "log0")?;
        let r = self.atan_ratio(T::norm(y))?;
        Ok(linalg::scale(y, r))
    }

    pub fn dist(&self, x: &[T], y: &[T]) -> Result<T> {
        let w = self.mobius_sub(x, y)?;
        Ok(T::lit(2.0) * self.atan_k(T::norm(&w))?)
    }

    /// Distance to the origin.
    pub fn dist0(&self, x: &[T]) -> Result<T> {
        finite(x, "dist0")?;
        Ok(T::lit(2.0) * self.atan_k(T::norm(x))?)
    }

    /// `M ⊗ y = exp_o(M · log_o(y))`.
    pub fn mobius_matvec(&self, m: &Matrix<T>, y: &[T]) -> Result<Vec<T>> {
        same_len(m.cols(), y.len())?;
        let t = self.log0(y)?;
        self.exp0(&m.matvec(&t))
    }

    /// `r ⊗ y` for a scalar `r`.
    pub fn mobius_scale(&self, r: T, y: &[T]) -> Result<Vec<T>> {
        let t = self.log0(y)?;
        self.exp0(&linalg::scale(&t, r))
    }

    /// `x ⊖ y = exp_o(log_o(x) ‖ log_o(y))`; output dimension is the sum.
    pub fn concat(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        let t = linalg::concat(&self.log0(x)?, &self.log0(y)?);
        self.exp0(&t)
    }

    /// `x ⊙ y = ⟨log_o(x), log_o(y)⟩`.
    pub fn kappa_dot(&self, x: &[T], y: &[T]) -> Result<T> {
        same_len(x.len(), y.len())?;
        Ok(T::dot(&self.log0(x)?, &self.log0(y)?))
    }

    /// Tangent-space weighted mean at the origin: `exp_o(Σ wᵢ log_o(pᵢ))`.
    pub fn weighted_midpoint(&self, points: &[&[T]], weights: &[T]) -> Result<Vec<T>> {
        same_len(points.len(), weights.len())?;
        let dim = points.first().map_or(0, |p| p.len());
        let mut acc = vec![T::zero(); dim];
        for (p, &w) in points.iter().zip(weights) {
            same_len(dim, p.len())?;
            for (a, t) in acc.iter_mut().zip(self.log0(p)?) {
                *a = *a + w * t;
            }
        }
        self.exp0(&acc)
    }
}

/// Coordinates of a point together with the curvature they are read in.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint<T> {
    pub coords: Vec<T>,
    pub curvature: Curvature<T>,
}

/// A vector in the tangent space at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<T> {
    pub coords: Vec<T>,
    pub base: ManifoldPoint<T>,
}

impl<T: Real> ManifoldPoint<T> {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn tangent(&self, coords: Vec<T>) -> Result<TangentVector<T>> {
        same_len(self.dim(), coords.len())?;
        finite(&coords, "tangent")?;
        Ok(TangentVector {
            coords,
            base: self.clone(),
        })
    }

    pub fn exp(&self, v: &TangentVector<T>) -> Result<ManifoldPoint<T>> {
        let c = self.curvature;
        Ok(ManifoldPoint {
            coords: c.exp_map(&self.coords, &v.coords)?,
            curvature: c,
        })
    }

    pub fn log(&self, y: &ManifoldPoint<T>) -> Result<TangentVector<T>> {
        self.tangent(self.curvature.log_map(&self.coords, &y.coords)?)
    }

    pub fn add(&self, y: &ManifoldPoint<T>) -> Result<ManifoldPoint<T>> {
        let c = self.curvature;
        Ok(ManifoldPoint {
            coords: c.mobius_add(&self.coords, &y.coords)?,
            curvature: c,
        })
    }

    pub fn dist(&self, y: &ManifoldPoint<T>) -> Result<T> {
        self.curvature.dist(&self.coords, &y.coords)
    }

    pub fn conformal_factor(&self) -> Result<T> {
        self.curvature.conformal_factor(&self.coords)
    }
}
