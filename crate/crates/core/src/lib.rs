//! Size and shape statistics of tracked Brownian bridges.
//!
//! A tracked bridge is a two-dimensional Brownian bridge on `[0, 1]` observed
//! at the arrival times of an inhomogeneous Poisson process with intensity
//! `c * mu(t)`, where the tracking strategy `mu` is a probability density on
//! `[0, 1]`. This crate provides:
//!
//! * [`kernel`]: tracking strategies and their iterated integrals `M0, M1, M2`.
//! * [`analytic`]: the `c -> infinity` radius of gyration and asphericity, by
//!   quadrature over the iterated integrals and by per-family closed forms.
//! * [`sampler`]: exact simulation of tracked bridges by inversion.
//! * [`geometry`]: gyration tensors, eigen-shapes, ensemble estimators,
//!   principal-axis alignment and Gaussian KDE grids.
//! * [`experiments`]: the parameter-sweep engine behind the `tbridge` CLI.

// NaN-rejecting checks are written `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Published quadrature nodes and reference values keep all their digits.
#![allow(clippy::excessive_precision)]

pub mod analytic;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod kernel;
pub mod quadrature;
pub mod rng;
pub mod sampler;
mod sum;

pub use error::{Error, Result};
