//! Configurable batch experiments with machine-readable reports.
//!
//! An experiment is described by one JSON document ([`ExperimentConfig`]);
//! [`run`] executes it and returns a [`Report`] listing every checked
//! criterion with its measured value, threshold and pass flag. Sample data
//! goes to CSV files next to `report.json`.

mod config;
mod report;
mod runs;

pub use config::{ExperimentConfig, ExperimentKind, ExperimentOptions, FunctionalKind, IntegrandKind};
pub use report::{Criterion, Report};
pub use runs::{
    donsker_argmax_fraction, donsker_brownian_samples, donsker_walk_samples, euler_limit_samples,
    feedback_variation, frozen_self_integral_errors, log_log_slope, lognormal_gamma_target, principle_samples, rootzen_limit_variance, rootzen_samples, EulerLimitSamples,
    PrincipleFunctional,
};

use std::path::Path;

use crate::error::Result;

/// Validates `cfg` and runs the configured experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::EulerVsLimit => runs::run_euler_vs_limit(cfg),
        ExperimentKind::Rootzen => runs::run_rootzen(cfg),
        ExperimentKind::GammaCheck => runs::run_gamma_check(cfg),
        ExperimentKind::FinanceReport => runs::run_finance_report(cfg),
        ExperimentKind::AsymptoticPrinciple => runs::run_asymptotic_principle(cfg),
        ExperimentKind::Donsker => runs::run_donsker(cfg),
    }
}

/// Runs `cfg` and writes `report.json` plus the CSV data files into `out`.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    std::fs::create_dir_all(out)?;
    let mut report = run(cfg)?;
    report.write_data(out)?;
    report.write_json(&out.join("report.json"))?;
    Ok(report)
}
