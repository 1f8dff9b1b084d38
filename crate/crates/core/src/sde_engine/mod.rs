//! Seeded Brownian drivers and Euler schemes for scalar SDEs
//! `dX = a(X,t) dB + b(X,t) dt`.
//!
//! A coarse grid of `n` steps is nested in a fine grid of `n * refine`
//! steps. Coarse increments are sums of fine increments, so the Euler
//! approximation on the coarse grid and the fine-grid reference solution are
//! driven by the same Brownian path and their difference is the realized
//! discretization error.

mod drivers;
mod path;
mod scheme;
mod spec;

pub use drivers::{make_drivers, stream_rng, Channel, DriverPaths, Ensemble, TimeGrid};
pub use path::PathGrid;
pub use scheme::{
    euler_path, euler_values, reference_fine, reference_path, scaled_error_path, ReferenceMode,
};
pub use spec::{Coefficient, ExactSolution, SdeSpec};
