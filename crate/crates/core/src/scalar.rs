//! Scalar abstraction shared by every numerical kernel in the crate.
//!
//! Geometry, propagation and fusion are written once against [`Real`], so the
//! same code runs on `f32`, `f64` and on the taped [`Var`](crate::diff::Var)
//! used for gradients.

use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;

/// floating point scalar: f32, f64 or a reverse-mode variable
pub trait Real: Float + FromPrimitive + Debug + Send + Sync + 'static {
    /// Inner product of two equally sized slices.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b)
            .fold(Self::zero(), |acc, (&x, &y)| acc + x * y)
    }

    /// Euclidean norm. The derivative at the zero vector is taken as zero.
    fn norm(a: &[Self]) -> Self {
        Self::dot(a, a).sqrt()
    }

    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }

    fn leaky_relu(self, slope: f64) -> Self {
        if self >= Self::zero() {
            self
        } else {
            self * Self::lit(slope)
        }
    }

    /// Primal value as `f64`.
    fn value(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Literal constant.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts a slice of `f64` into the scalar type as constants.
pub fn lift_slice<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

pub fn values<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.value()).collect()
}
