//! Scaled-variation regularized two-layer ReLU networks.
//!
//! The crate covers the nonconvex penalized least-squares problem, its exact
//! convex group-lasso reformulation over the cones of the training data's
//! hyperplane arrangement, gradient-flow training in both the scaled-variation
//! and ridge parametrizations, a random-feature ridge baseline, and an
//! experiment harness that checks the resulting generalization behavior.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the experiments use.

// NaN-rejecting guards are written as `!(x > 0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arrangement;
pub mod baselines;
pub mod cone;
pub mod convex;
pub mod error;
pub mod experiments;
pub mod json;
pub mod linalg;
pub mod network;
pub mod scalar;
pub mod synthetic;
pub mod trainer;

pub use arrangement::{
    beta_of_theta, enumerate_patterns, theta_of_beta, Coverage, EnumerationMode,
    GroupedCoefficients, SignPatternSet,
};
pub use error::{Error, Result};
pub use network::{augment, NetworkParams, ScaledVariation};
pub use scalar::Scalar;

pub type Network = NetworkParams<f64>;
pub type Network32 = NetworkParams<f32>;
pub type Patterns = SignPatternSet<f64>;
pub type Coefficients = GroupedCoefficients<f64>;
