//! Functional linear regression in a reproducing kernel Hilbert space, with
//! divide-and-conquer estimation and empirical verification of the associated
//! convergence rates at desk scale.
//!
//! The model is `Y = ∫ β₀(t) X(t) dt + ε` on the domain `[0, 1]`, where the
//! explanatory variable `X` is a random element of `L²([0,1])`. Estimation is
//! regularized least squares over an RKHS `H_K`, optionally split across `m`
//! disjoint shards whose local solutions are averaged.
//!
//! The crate is organized around the objects that drive both the estimators
//! and the theory:
//!
//! - [`grid`]: sampled functions on a uniform quadrature grid and their `L²`
//!   geometry;
//! - [`kernels`]: reproducing and covariance kernels, Gram matrices;
//! - [`operators`]: discretized integral operators `L_K`, `L_C`, their
//!   square roots, the composites `T` and `T_*`, spectra, effective
//!   dimension;
//! - [`synth`]: simultaneously diagonalizable ground-truth scenarios, slope
//!   functions satisfying a prescribed source condition, and dataset
//!   generation;
//! - [`estimator`]: the RLS estimator in representer and operator form, and
//!   the divide-and-conquer average;
//! - [`risk`]: excess prediction risk, its sample/approximation split, and
//!   the operator-deviation event probability;
//! - [`lowerbound`]: an executable minimax lower-bound certificate
//!   (Gilbert–Varshamov packing, Gaussian KL, Fano bound);
//! - [`experiments`]: config-driven rate sweeps with the (λ, m) schedules of
//!   the convergence theorems, and log-log slope fitting.

pub mod error;
pub mod estimator;
pub mod experiments;
pub mod grid;
pub mod kernels;
pub mod lowerbound;
pub mod operators;
pub mod risk;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
