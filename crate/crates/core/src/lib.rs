//! Error calculus for the Euler scheme on scalar SDEs.
//!
//! The asymptotic Euler error `sqrt(n) (X^n - X)` converges in law to the
//! solution `U` of a linear SDE driven by an extra Brownian motion. The same
//! law is produced by the sharp operator of a weighted Ornstein-Uhlenbeck
//! error structure on Wiener space with the adapted weight
//! `alpha_t = a'_x(X_t, t)^2 / 2`, which turns error propagation through
//! prices, hedges and stochastic integrals into a first-order calculus.
//!
//! Modules:
//! - [`error_algebra`]: finite-dimensional variance/bias propagation and the
//!   one-dimensional Ornstein-Uhlenbeck generator.
//! - [`sde_engine`]: seeded coupled drivers, Euler and reference solutions.
//! - [`limit_law`]: the limit error SDE, its variation-of-constants solution
//!   and the Rootzén integral error.
//! - [`wiener`]: the weighted Ornstein-Uhlenbeck structure (tangent SDE,
//!   `Γ` estimation, path perturbation, integration by parts).
//! - [`finance`]: level-volatility model and closed-form error formulas for
//!   prices and hedges.
//! - [`stats`]: estimators and Kolmogorov-Smirnov distance.
//! - [`experiments`]: configurable batch runs with JSON reports.

pub mod error;
pub mod error_algebra;
pub mod experiments;
pub mod finance;
pub mod limit_law;
pub mod sde_engine;
pub mod stats;
pub mod wiener;

pub use error::{Error, Result};
pub use stats::Estimate;
