//! Knowledge-graph recommendation over multiple adaptive-curvature spaces.
//!
//! Users, items, KG entities and relations are embedded in `M` κ-stereographic
//! subspaces, each with its own trainable curvature. Item representations are
//! refined by user-conditioned graph convolution over sampled KG
//! neighbourhoods, the subspaces are fused with entity-level attention, and
//! training minimises a margin ranking loss whose margin follows the local
//! geometry.
//!
//! Kernels are generic over [`Real`]; the aliases below fix the common
//! scalar choices.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diff;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod propagation;
pub mod scalar;
pub mod training;

pub use diff::Var;
pub use scalar::Real;

pub type Curvature64 = geometry::Curvature<f64>;
pub type Curvature32 = geometry::Curvature<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Model64 = model::ModelState<f64>;
pub type Model32 = model::ModelState<f32>;
