use std::num::NonZeroUsize;

use gauss_quad::{GaussHermite, GaussLegendre};
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::finance::{finance_point, model_path, model_path_along, ConditionalMethod, ModelBundle, Payoff};
use crate::limit_law::{rootzen_error, simulate_limit_pair, RootzenIntegrand};
use crate::sde_engine::{
    euler_path, reference_fine, stream_rng, Channel, DriverPaths, Ensemble, PathGrid, ReferenceMode, SdeSpec,
    TimeGrid,
};
use crate::stats::{correlation, ks_distance, map_paths, mean_stderr, Estimate};
use crate::wiener::{
    conditional_gamma, gamma_estimate, tangent_along, PathFunctional, PointValue, StochasticIntegral, WeightProcess,
};

use super::config::{ExperimentConfig, FunctionalKind, IntegrandKind};
use super::report::{Criterion, DataTable, Report};

/// `EΓ[X_t] = x0^2 exp((2r + sigma^2) t) sigma^4 t / 2` for the lognormal
/// model with the adapted weight.
pub fn lognormal_gamma_target(x0: f64, sigma: f64, r: f64, t: f64) -> f64 {
    x0 * x0 * ((2.0 * r + sigma * sigma) * t).exp() * sigma.powi(4) * t / 2.0
}

fn ensemble(cfg: &ExperimentConfig, horizon: f64) -> Result<Ensemble> {
    Ensemble::new(TimeGrid::new(cfg.n, cfg.refine, horizon)?, cfg.seed()?, cfg.n_paths)
}

fn new_report(cfg: &ExperimentConfig) -> Result<Report> {
    Ok(Report::new(cfg.experiment.name(), cfg.seed()?, cfg.n, cfg.refine, cfg.n_paths))
}

fn second_moment(samples: &[f64]) -> Result<Estimate> {
    let sq: Vec<f64> = samples.iter().map(|v| v * v).collect();
    mean_stderr(&sq)
}

/// Terminal samples of the scaled Euler error, the limit `U`, the sharp
/// `X^#` and `B`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EulerLimitSamples {
    pub scaled_error: Vec<f64>,
    pub limit: Vec<f64>,
    pub sharp: Vec<f64>,
    pub b_terminal: Vec<f64>,
}

/// `U` and `X^#` share `B` but use the independent `W` and `B̂` of the same
/// drivers.
pub fn euler_limit_samples(
    spec: &SdeSpec,
    weight: &WeightProcess,
    ensemble: &Ensemble,
    mode: ReferenceMode,
) -> Result<EulerLimitSamples> {
    let scale = (ensemble.grid.n() as f64).sqrt();
    let rows = map_paths(ensemble.n_paths, |p| {
        let drv = ensemble.drivers(p)?;
        let pair = simulate_limit_pair(spec, &drv, mode)?;
        let euler = euler_path(spec, &drv)?;
        let tangent = tangent_along(spec, weight, pair.x.values(), &drv)?;
        let b: f64 = drv.db_fine().iter().sum();
        Ok([
            scale * (euler.terminal() - pair.x.terminal()),
            pair.u.terminal(),
            tangent.sharp.terminal(),
            b,
        ])
    })?;
    let col = |i: usize| rows.iter().map(|r| r[i]).collect();
    Ok(EulerLimitSamples {
        scaled_error: col(0),
        limit: col(1),
        sharp: col(2),
        b_terminal: col(3),
    })
}

pub(crate) fn run_euler_vs_limit(cfg: &ExperimentConfig) -> Result<Report> {
    let bundle = cfg.bundle()?;
    let ens = ensemble(cfg, bundle.model.maturity)?;
    let mode = ReferenceMode::preferred(&bundle.sde);
    let s = euler_limit_samples(&bundle.sde, &bundle.weight, &ens, mode)?;
    let mut report = new_report(cfg)?;

    let (e2, u2, s2) = (second_moment(&s.scaled_error)?, second_moment(&s.limit)?, second_moment(&s.sharp)?);
    report.estimate("error_mean", &mean_stderr(&s.scaled_error)?);
    report.estimate("limit_mean", &mean_stderr(&s.limit)?);
    report.estimate("sharp_mean", &mean_stderr(&s.sharp)?);
    report.estimate("error_second_moment", &e2);
    report.estimate("limit_second_moment", &u2);
    report.estimate("sharp_second_moment", &s2);
    let corr_e = correlation(&s.scaled_error, &s.b_terminal)?;
    let corr_u = correlation(&s.limit, &s.b_terminal)?;
    report.metric("corr_error_b", corr_e);
    report.metric("corr_limit_b", corr_u);
    let ks_eu = ks_distance(&s.scaled_error, &s.limit)?;
    let ks_us = ks_distance(&s.limit, &s.sharp)?;
    report.metric("ks_error_limit", ks_eu);
    report.metric("ks_limit_sharp", ks_us);

    report.check(Criterion::at_most("KS(sqrt(n) U^n_T, U_T)", ks_eu, 0.05));
    report.check(Criterion::at_most("KS(U_T, X#_T)", ks_us, 0.03));
    report.check(Criterion::at_most(
        "|corr(sqrt(n) U^n_T, B_T) - corr(U_T, B_T)|",
        (corr_e - corr_u).abs(),
        0.05,
    ));
    if u2.mean > 0.0 {
        report.check(Criterion::relative("n E[(U^n_T)^2] / E[U_T^2]", e2.mean, u2.mean, 0.10));
    }
    if let Some((sigma, r)) = bundle.model.constant_parameters() {
        let target = lognormal_gamma_target(bundle.model.x0, sigma, r, bundle.model.maturity);
        report.metric("gamma_target", target);
        report.check(Criterion::relative("n E[(X^n_T - X_T)^2] vs EΓ[X_T]", e2.mean, target, 0.10));
    }

    let mut table = DataTable::new("samples.csv", &["path", "scaled_error", "limit", "sharp", "b"]);
    for (i, (((e, u), x), b)) in s
        .scaled_error
        .iter()
        .zip(&s.limit)
        .zip(&s.sharp)
        .zip(&s.b_terminal)
        .enumerate()
    {
        table.push(vec![i as f64, *e, *u, *x, *b]);
    }
    report.table(table);
    Ok(report)
}

fn integrand(kind: IntegrandKind) -> RootzenIntegrand {
    match kind {
        IntegrandKind::Constant { value } => RootzenIntegrand::constant(value),
        IntegrandKind::Identity => RootzenIntegrand::identity(),
        IntegrandKind::Sine => RootzenIntegrand::sine(),
    }
}

/// `½ ∫_0^T E[f'_x(B_s, s)^2] ds` by Gauss-Legendre in time and
/// Gauss-Hermite in space.
pub fn rootzen_limit_variance(integrand: &RootzenIntegrand, horizon: f64) -> f64 {
    let time = GaussLegendre::new(NonZeroUsize::new(48).expect("nonzero"));
    let space = GaussHermite::new(NonZeroUsize::new(48).expect("nonzero"));
    let norm = std::f64::consts::PI.sqrt();
    let inner = |s: f64| {
        // E[g(sqrt(s) Z)] = π^{-1/2} ∫ e^{-u^2} g(sqrt(2 s) u) du
        space.integrate(|u| {
            let v = integrand.f_x((2.0 * s).sqrt() * u, s);
            v * v
        }) / norm
    };
    0.5 * time.integrate(0.0, horizon, inner)
}

/// Scaled errors and limit draws, one per path.
pub fn rootzen_samples(integrand: &RootzenIntegrand, ensemble: &Ensemble) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = map_paths(ensemble.n_paths, |p| {
        let drv = ensemble.drivers(p)?;
        let s = rootzen_error(integrand, &drv)?;
        Ok((s.scaled_error, s.limit_sample))
    })?;
    Ok(rows.into_iter().unzip())
}

pub(crate) fn run_rootzen(cfg: &ExperimentConfig) -> Result<Report> {
    let f = integrand(cfg.options.integrand.unwrap_or(IntegrandKind::Identity));
    let ens = ensemble(cfg, 1.0)?;
    let (errors, limits) = rootzen_samples(&f, &ens)?;
    let mut report = new_report(cfg)?;
    let oracle = rootzen_limit_variance(&f, 1.0);
    let var = second_moment(&errors)?;
    report.estimate("error_mean", &mean_stderr(&errors)?);
    report.estimate("n_var_error", &var);
    report.estimate("limit_variance_mc", &second_moment(&limits)?);
    report.metric("limit_variance", oracle);
    report.metric("ks_error_limit", ks_distance(&errors, &limits)?);
    report.check(Criterion::within_stderr("n Var(error) vs ½∫E[f'^2]", &var, oracle, 3.0));
    let mut table = DataTable::new("samples.csv", &["path", "scaled_error", "limit"]);
    for (i, (e, l)) in errors.iter().zip(&limits).enumerate() {
        table.push(vec![i as f64, *e, *l]);
    }
    report.table(table);
    Ok(report)
}

pub(crate) fn run_gamma_check(cfg: &ExperimentConfig) -> Result<Report> {
    let bundle = cfg.bundle()?;
    let horizon = bundle.model.maturity;
    let ens = ensemble(cfg, horizon)?;
    let mode = ReferenceMode::preferred(&bundle.sde);
    let (sde, weight) = (&bundle.sde, &bundle.weight);
    let mut report = new_report(cfg)?;

    let state = PointValue::state(horizon);
    let eg = gamma_estimate(sde, weight, &state, &ens, mode)?;
    report.estimate("e_gamma_x_terminal", &eg);
    if let Some((sigma, r)) = bundle.model.constant_parameters() {
        let target = lognormal_gamma_target(bundle.model.x0, sigma, r, horizon);
        report.metric("gamma_target", target);
        report.check(Criterion::within_stderr("E[(X#_T)^2] vs EΓ[X_T]", &eg, target, 3.0));
    }

    let fixed = cfg.options.fixed_paths.unwrap_or(100);
    let replicas = cfg.options.replicas.unwrap_or(256);
    let square = PointValue::new(|x| x * x, |x| 2.0 * x, horizon);
    let rows = map_paths(fixed, |p| {
        let drv = ens.drivers(p)?;
        let path = model_path(&bundle, &drv, mode)?;
        let closed = path.gamma_x(horizon);
        let tangent = conditional_gamma(sde, weight, &state, &drv, replicas, mode)?;
        let composed = conditional_gamma(sde, weight, &square, &drv, replicas, mode)?;
        let x = path.state_at(horizon).0;
        let chain = 4.0 * x * x * tangent.mean;
        Ok((closed, tangent, (composed.mean - chain).abs() / chain.abs().max(f64::MIN_POSITIVE)))
    })?;
    let inside = rows.iter().filter(|(c, e, _)| e.within(*c, 3.0)).count();
    let chain_dev = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    report.metric("fixed_paths", fixed as f64);
    report.metric("replicas", replicas as f64);
    report.check(
        Criterion::at_least("paths with |Ê(X#_T)^2 - Γ[X_T]| <= 3 se", inside as f64, 0.95 * fixed as f64)
            .with_detail(format!("{inside} of {fixed}")),
    );
    report.check(Criterion::at_most("chain rule Γ[X_T^2] = 4 X_T^2 Γ[X_T] (relative)", chain_dev, 1e-10));
    let mut table = DataTable::new("fixed_paths.csv", &["path", "gamma_x", "tangent_mean", "tangent_stderr"]);
    for (i, (c, e, _)) in rows.iter().enumerate() {
        table.push(vec![i as f64, *c, e.mean, e.stderr]);
    }
    report.table(table);
    Ok(report)
}

fn black_scholes_call(x: f64, strike: f64, sigma: f64, r: f64, tau: f64) -> (f64, f64) {
    let n = Normal::standard();
    let d1 = ((x / strike).ln() + (r + 0.5 * sigma * sigma) * tau) / (sigma * tau.sqrt());
    let d2 = d1 - sigma * tau.sqrt();
    (x * n.cdf(d1) - strike * (-r * tau).exp() * n.cdf(d2), n.cdf(d1))
}

fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub(crate) fn run_finance_report(cfg: &ExperimentConfig) -> Result<Report> {
    let bundle = cfg.bundle()?;
    let model = &bundle.model;
    let horizon = model.maturity;
    let seed = cfg.seed()?;
    let ens = ensemble(cfg, horizon)?;
    let mode = ReferenceMode::preferred(&bundle.sde);
    let method = cfg
        .options
        .conditional
        .unwrap_or_else(|| ConditionalMethod::preferred(&bundle, seed));
    let grid = ens.grid;
    let mut report = new_report(cfg)?;

    // one sampled path on the coarse times
    let sample = cfg.options.sample_path.unwrap_or(0);
    let path = model_path(&bundle, &ens.drivers(sample)?, mode)?;
    let points = map_paths(grid.n() + 1, |k| {
        finance_point(&bundle, &path, grid.coarse_time(k as usize), method, sample)
    })?;
    let mut table = DataTable::new(
        "finance_path.csv",
        &["t", "X", "V", "H", "gammaX", "gammaV", "gammaH", "feedback"],
    );
    for p in &points {
        table.push(vec![
            p.t,
            p.x,
            p.v.mean,
            p.h.mean,
            p.gamma_x,
            p.gamma_v,
            p.gamma_h.unwrap_or(f64::NAN),
            p.feedback,
        ]);
    }
    report.table(table);
    let path_identity = points
        .iter()
        .map(|p| relative_gap(p.gamma_v, p.h.mean * p.h.mean * p.gamma_x))
        .fold(0.0, f64::max);

    if let Some((sigma, r)) = model.constant_parameters() {
        let feedback_dev = points
            .iter()
            .map(|p| (p.feedback - sigma * (p.t / 2.0).sqrt()).abs())
            .fold(0.0, f64::max);
        report.check(Criterion::at_most("feedback rate = sigma sqrt(t/2)", feedback_dev, 1e-10));
        if let (Payoff::Call { strike }, ConditionalMethod::ClosedForm) = (model.payoff, method) {
            let (v0, h0) = black_scholes_call(model.x0, strike, sigma, r, horizon);
            report.check(Criterion::at_most("|H_0 - Φ(d1)|", (points[0].h.mean - h0).abs(), 1e-10));
            report.check(Criterion::at_most("|V_0 - Black-Scholes|", (points[0].v.mean - v0).abs(), 1e-6));
        }
    }

    // ensemble summaries at T/2 and T
    let half = 0.5 * horizon;
    let rows = map_paths(ens.n_paths, |p| {
        let drv = ens.drivers(p)?;
        let path = model_path(&bundle, &drv, mode)?;
        let point = finance_point(&bundle, &path, half, method, p)?;
        let mut cs_ok = true;
        for (s, t) in [(0.25 * horizon, 0.75 * horizon), (half, horizon), (0.1 * horizon, horizon)] {
            let c = path.gamma_x_cov(s, t);
            cs_ok &= c * c <= path.gamma_x(s) * path.gamma_x(t) * (1.0 + 1e-12);
        }
        Ok((path.gamma_x(horizon), point, cs_ok))
    })?;
    let gx: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let gv: Vec<f64> = rows.iter().map(|r| r.1.gamma_v).collect();
    let egx = mean_stderr(&gx)?;
    report.estimate("e_gamma_x_terminal", &egx);
    report.estimate("e_gamma_v_half", &mean_stderr(&gv)?);
    let gh: Option<Vec<f64>> = rows.iter().map(|r| r.1.gamma_h).collect();
    if let Some(gh) = gh {
        report.estimate("e_gamma_h_half", &mean_stderr(&gh)?);
    }
    let identity = rows
        .iter()
        .map(|r| relative_gap(r.1.gamma_v, r.1.h.mean * r.1.h.mean * r.1.gamma_x))
        .fold(path_identity, f64::max);
    report.check(Criterion::at_most("Γ[V_t] = H_t^2 Γ[X_t] (relative)", identity, 1e-10));
    let cs_failures = rows.iter().filter(|r| !r.2).count();
    report.check(Criterion::at_most("Cauchy-Schwarz violations", cs_failures as f64, 0.0));
    if let Some((sigma, r)) = model.constant_parameters() {
        let target = lognormal_gamma_target(model.x0, sigma, r, horizon);
        report.metric("gamma_target", target);
        report.check(Criterion::within_stderr("EΓ[X_T] vs closed form", &egx, target, 3.0));
    }

    // tangent cross-check on fixed paths
    let fixed = cfg.options.fixed_paths.unwrap_or(20);
    let replicas = cfg.options.replicas.unwrap_or(256);
    let state = PointValue::state(horizon);
    let checks = map_paths(fixed, |p| {
        let drv = ens.drivers(p)?;
        let x = reference_fine(&bundle.sde, &drv, mode)?;
        let path = model_path_along(&bundle, x, &drv)?;
        let e = conditional_gamma(&bundle.sde, &bundle.weight, &state, &drv, replicas, mode)?;
        Ok(e.within(path.gamma_x(horizon), 3.0))
    })?;
    let inside = checks.iter().filter(|&&ok| ok).count();
    report.check(
        Criterion::at_least("tangent cross-check paths within 3 se", inside as f64, 0.95 * fixed as f64)
            .with_detail(format!("{inside} of {fixed}")),
    );

    // finite variation of the feedback rate: Σ(ΔY)^2 ~ Δt
    if model.constant_parameters().is_none() && grid.refine() % 4 == 0 {
        let refines = [grid.refine() / 4, grid.refine() / 2, grid.refine()];
        let fixed_ens = Ensemble::new(grid, seed, fixed.max(2))?;
        let qv = feedback_variation(&bundle, &fixed_ens, &refines, mode)?;
        let means: Vec<f64> = qv.iter().map(|e| e.mean).collect();
        for (r, q) in refines.iter().zip(&qv) {
            report.estimate(&format!("feedback_qv_refine_{r}"), q);
        }
        let x: Vec<f64> = refines.iter().map(|&r| r as f64).collect();
        let slope = log_log_slope(&x, &means);
        report.metric("feedback_qv_slope", slope);
        report.check(Criterion::at_most("|feedback QV slope + 1|", (slope + 1.0).abs(), 0.3));
    }
    Ok(report)
}

/// Mean discrete quadratic variation `Σ (ΔY)^2` of the feedback rate `Y` on
/// the fine grids of each refinement in `refines`. Coarser levels reuse the
/// finest drivers through in-order summation, so all levels see the same
/// Brownian path.
pub fn feedback_variation(
    bundle: &ModelBundle,
    ensemble: &Ensemble,
    refines: &[usize],
    mode: ReferenceMode,
) -> Result<Vec<Estimate>> {
    let finest = ensemble.grid.refine();
    if refines.iter().any(|&r| r == 0 || finest % r != 0) {
        return Err(Error::InvalidArgument(format!(
            "refinements {refines:?} must divide the ensemble refinement {finest}"
        )));
    }
    let rows = map_paths(ensemble.n_paths, |p| {
        let drv = ensemble.drivers(p)?;
        refines
            .iter()
            .map(|&r| {
                let level = drv.coarsen(finest / r)?;
                let y = model_path(bundle, &level, mode)?.feedback_rate(bundle)?;
                Ok(y.values().windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>())
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    (0..refines.len())
        .map(|i| mean_stderr(&rows.iter().map(|r| r[i]).collect::<Vec<f64>>()))
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// A functional of the state path for the asymptotic-principle comparison.
pub enum PrincipleFunctional {
    /// `f(X_t)`
    Point(PointValue),
    /// `∫_0^T X dX`
    SelfIntegral,
}

/// `∫_0^T X^n dX^n` along the continuous-time Euler process, whose
/// quadratic variation is `a(X^n_{t_k})^2 dt` on each step:
/// `(X^n_T^2 - x_0^2)/2 - ½ Σ_k a(X^n_k, t_k)^2 Δt`.
fn euler_self_integral(spec: &SdeSpec, euler: &PathGrid, grid: &TimeGrid) -> f64 {
    let x = euler.values();
    let n = x.len() - 1;
    let qv: f64 = (0..n)
        .map(|k| {
            let a = spec.a(x[k], grid.coarse_time(k));
            a * a
        })
        .sum();
    0.5 * (x[n] * x[n] - x[0] * x[0]) - 0.5 * qv * grid.dt()
}

/// Left-point sum `Σ X^n_k (X^n_{k+1} - X^n_k)` on the coarse grid.
fn frozen_self_integral(euler: &PathGrid) -> f64 {
    euler.values().windows(2).map(|w| w[0] * (w[1] - w[0])).sum()
}

/// `∫_0^T X dX = (X_T^2 - x_0^2)/2 - ½∫_0^T a(X_s, s)^2 ds`, the time
/// integral by the trapezoid rule on the fine grid.
fn ito_self_integral(spec: &SdeSpec, x: &[f64], grid: &TimeGrid) -> f64 {
    let n = x.len() - 1;
    let q = |j: usize| {
        let a = spec.a(x[j], grid.fine_time(j));
        a * a
    };
    let mut qv = 0.5 * (q(0) + q(n));
    for j in 1..n {
        qv += q(j);
    }
    0.5 * (x[n] * x[n] - x[0] * x[0]) - 0.5 * qv * grid.dt_fine()
}

/// Scaled error of the coarse left-point sum `Σ X^n_k ΔX^n_k` for `∫ X dX`.
/// Unlike the integral along the continuous-time Euler process it carries an
/// extra Rootzén term, so its law differs from that of `(∫ X dX)^#`.
pub fn frozen_self_integral_errors(spec: &SdeSpec, ensemble: &Ensemble, mode: ReferenceMode) -> Result<Vec<f64>> {
    let scale = (ensemble.grid.n() as f64).sqrt();
    map_paths(ensemble.n_paths, |p| {
        let drv = ensemble.drivers(p)?;
        let x = reference_fine(spec, &drv, mode)?;
        let euler = euler_path(spec, &drv)?;
        Ok(scale * (frozen_self_integral(&euler) - ito_self_integral(spec, &x, drv.grid())))
    })
}

/// Samples of `sqrt(n)(F(X^n) - F(X))` and of `F(X)^#`.
pub fn principle_samples(
    spec: &SdeSpec,
    weight: &WeightProcess,
    functional: &PrincipleFunctional,
    ensemble: &Ensemble,
    mode: ReferenceMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let scale = (ensemble.grid.n() as f64).sqrt();
    let rows = map_paths(ensemble.n_paths, |p| {
        let drv: DriverPaths = ensemble.drivers(p)?;
        let x = reference_fine(spec, &drv, mode)?;
        let euler = euler_path(spec, &drv)?;
        let tangent = tangent_along(spec, weight, &x, &drv)?;
        let (error, sharp) = match functional {
            PrincipleFunctional::Point(f) => {
                let db = drv.db_coarse();
                let reference = PathGrid::new(euler.times().to_vec(), x.iter().step_by(drv.grid().refine()).copied().collect())?;
                let diff = f.value(&euler, &db)? - f.value(&reference, &db)?;
                (diff, f.sharp(&tangent, &drv)?)
            }
            PrincipleFunctional::SelfIntegral => {
                let grid = drv.grid();
                let diff = euler_self_integral(spec, &euler, grid) - ito_self_integral(spec, &x, grid);
                (diff, StochasticIntegral::self_integral().sharp(&tangent, &drv)?)
            }
        };
        Ok((scale * error, sharp))
    })?;
    Ok(rows.into_iter().unzip())
}

pub(crate) fn run_asymptotic_principle(cfg: &ExperimentConfig) -> Result<Report> {
    let bundle = cfg.bundle()?;
    let horizon = bundle.model.maturity;
    let ens = ensemble(cfg, horizon)?;
    let mode = ReferenceMode::preferred(&bundle.sde);
    let kind = cfg.options.functional.unwrap_or(FunctionalKind::State);
    let mut payoff = None;
    let functional = match kind {
        FunctionalKind::State => PrincipleFunctional::Point(PointValue::state(horizon)),
        FunctionalKind::SmoothedCall { strike, smoothing } => {
            let f = Payoff::SmoothedCall {
                strike,
                width: smoothing.unwrap_or(0.01) * strike,
            };
            payoff = Some(f);
            PrincipleFunctional::Point(PointValue::new(move |x| f.value(x), move |x| f.d1(x), horizon))
        }
        FunctionalKind::SelfIntegral => PrincipleFunctional::SelfIntegral,
        FunctionalKind::BrownianIntegral => {
            return Err(Error::Unsupported(
                "∫ h dB does not depend on the state path, so the scheme makes no error on it".into(),
            ))
        }
    };
    let (errors, sharps) = principle_samples(&bundle.sde, &bundle.weight, &functional, &ens, mode)?;
    let mut report = new_report(cfg)?;
    if kind == FunctionalKind::SelfIntegral {
        let frozen = frozen_self_integral_errors(&bundle.sde, &ens, mode)?;
        report.estimate("frozen_sum_error_second_moment", &second_moment(&frozen)?);
    }
    let (e2, s2) = (second_moment(&errors)?, second_moment(&sharps)?);
    report.estimate("error_second_moment", &e2);
    report.estimate("sharp_second_moment", &s2);
    report.estimate("error_mean", &mean_stderr(&errors)?);
    report.estimate("sharp_mean", &mean_stderr(&sharps)?);
    let ks = ks_distance(&errors, &sharps)?;
    report.metric("ks", ks);
    report.check(Criterion::at_most("KS(sqrt(n)(F(X^n) - F(X)), F(X)#)", ks, 0.06));
    if s2.mean > 0.0 {
        report.check(Criterion::relative("second moments of error and sharp", e2.mean, s2.mean, 0.10));
    }
    if let Some(f) = payoff {
        // E[f'(X_T)^2 Γ[X_T]] from the closed-form Γ
        let chain = map_paths(ens.n_paths, |p| {
            let path = model_path(&bundle, &ens.drivers(p)?, mode)?;
            let d = f.d1(path.state_at(horizon).0);
            Ok(d * d * path.gamma_x(horizon))
        })?;
        let target = mean_stderr(&chain)?;
        report.estimate("chain_rule_variance", &target);
        report.check(Criterion::relative("n E[error^2] vs E[f'(X_T)^2 Γ[X_T]]", e2.mean, target.mean, 0.10));
    }
    let mut table = DataTable::new("samples.csv", &["path", "scaled_error", "sharp"]);
    for (i, (e, s)) in errors.iter().zip(&sharps).enumerate() {
        table.push(vec![i as f64, *e, *s]);
    }
    report.table(table);
    Ok(report)
}

/// `k*/n` with `k* = argmax_{1<=k<=n} |S_k|` (smallest index on ties).
pub fn donsker_argmax_fraction(steps: &[f64]) -> f64 {
    let mut s = 0.0f64;
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0usize);
    for (k, u) in steps.iter().enumerate() {
        s += u;
        if s.abs() > best {
            best = s.abs();
            arg = k + 1;
        }
    }
    arg as f64 / steps.len() as f64
}

fn argmax_samples(steps: usize, n_paths: usize, seed: u64, channel: Channel) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    map_paths(n_paths, |p| {
        let mut rng = stream_rng(seed, p, 0, channel);
        let u: Vec<f64> = (0..steps).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(donsker_argmax_fraction(&u))
    })
}

/// `Γ` of the normalized running maximum of `n`-step Gaussian walks, one per
/// sample: `Γ = Σ_j (∂F/∂u_j)^2 = k*/n`.
pub fn donsker_walk_samples(n: usize, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    argmax_samples(n, n_paths, seed, Channel::Walk)
}

/// Time at which `|B|` peaks on a uniform grid of `points` steps over
/// `[0, 1]`.
pub fn donsker_brownian_samples(points: usize, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    argmax_samples(points, n_paths, seed, Channel::Brownian)
}

pub(crate) fn run_donsker(cfg: &ExperimentConfig) -> Result<Report> {
    let seed = cfg.seed()?;
    let points = cfg.options.grid_points.unwrap_or(1 << 14);
    let left = mean_stderr(&donsker_walk_samples(cfg.n, cfg.n_paths, seed)?)?.with_seed(seed);
    let right = mean_stderr(&donsker_brownian_samples(points, cfg.n_paths, seed)?)?.with_seed(seed);
    let mut report = new_report(cfg)?;
    report.estimate("e_gamma_walk_max", &left);
    report.estimate("e_argmax_time", &right);
    report.metric("grid_points", points as f64);
    report.check(Criterion::agree("EΓ[max|S|/sqrt(n)] vs E[argmax time of |B|]", &left, &right, 3.0, 0.01));
    Ok(report)
}
