//! Zeroth-order optimization with finite-difference gradient surrogates.
//!
//! The surrogate `g(x, h, P) = (d/ℓ) Σᵢ (F(x + h pᵢ) − F(x))/h · pᵢ` is built
//! from a direction matrix `P` drawn from one of nine ensembles
//! ([`directions`]), then plugged into an adaptive Armijo line search with a
//! hard evaluation budget ([`linesearch`]). The remaining modules provide
//! benchmark objectives, evaluation metrics, and a Monte-Carlo check of the
//! mean-squared-error gap between orthogonal and i.i.d. spherical directions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod directions;
pub mod error;
pub mod estimator;
pub mod linesearch;
pub mod metrics;
pub mod objectives;
pub mod rng;
pub mod smoothing;

pub use directions::{DirectionKind, DirectionMatrix, DirectionSampler, EllSpec};
pub use error::{Error, Result};
pub use estimator::{forward_fd, GradEstimate};
pub use linesearch::{FdConfig, Preset, RunTrace};
pub use objectives::{FnObjective, Objective, Registry};
pub use rng::RngStream;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}
