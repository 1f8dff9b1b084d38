//! The weighted Ornstein-Uhlenbeck error structure on Wiener space.
//!
//! The structure is described through its sharp operator, a gradient with
//! values in an independent copy `B̂` of the Brownian motion:
//! `(∫ u dB)^# = ∫ sqrt(alpha) u dB̂` and `Γ[Y] = Ê[(Y^#)^2]`. For a diffusion
//! `X` the sharp `X^#` solves a linear SDE driven by `(B, B̂)`
//! ([`simulate_tangent`]); with the adapted weight `alpha = a'_x^2 / 2` its
//! law is that of the asymptotic Euler error.

mod functional;
mod tangent;
mod weight;

pub use functional::{BrownianIntegral, PathFunctional, PointValue, StochasticIntegral};
pub use tangent::{simulate_tangent, tangent_along, TangentPath};
pub use weight::{WeightProcess, DEFAULT_FLOOR};
pub(crate) use tangent::node_at as node_index;

use crate::error::{ensure_finite, Error, Result};
use crate::sde_engine::{reference_fine, DriverPaths, Ensemble, PathGrid, ReferenceMode, SdeSpec, TimeGrid};
use crate::stats::{map_paths, mean_stderr, Estimate};

/// Default number of `B̂` replicas for conditional `Γ` estimates.
pub const DEFAULT_BHAT_REPLICAS: usize = 64;

/// Samples of `(Y^#)^2` over independent `(B, B̂)` draws.
pub fn gamma_samples(
    spec: &SdeSpec,
    weight: &WeightProcess,
    functional: &dyn PathFunctional,
    ensemble: &Ensemble,
    mode: ReferenceMode,
) -> Result<Vec<f64>> {
    map_paths(ensemble.n_paths, |p| {
        let drv = ensemble.drivers(p)?;
        let tangent = simulate_tangent(spec, weight, &drv, mode)?;
        let s = functional.sharp(&tangent, &drv)?;
        Ok(s * s)
    })
}

/// Monte Carlo estimate of `E[Γ[Y]] = E[(Y^#)^2]`.
pub fn gamma_estimate(
    spec: &SdeSpec,
    weight: &WeightProcess,
    functional: &dyn PathFunctional,
    ensemble: &Ensemble,
    mode: ReferenceMode,
) -> Result<Estimate> {
    let samples = gamma_samples(spec, weight, functional, ensemble, mode)?;
    Ok(mean_stderr(&samples)?.with_seed(ensemble.seed))
}

/// `Γ[Y]` on the fixed `B` path of `drv`, estimated over `replicas`
/// independent `B̂` draws.
pub fn conditional_gamma(
    spec: &SdeSpec,
    weight: &WeightProcess,
    functional: &dyn PathFunctional,
    drv: &DriverPaths,
    replicas: usize,
    mode: ReferenceMode,
) -> Result<Estimate> {
    let x = reference_fine(spec, drv, mode)?;
    let samples = map_paths(replicas, |r| {
        let d = drv.with_bhat_replica(r)?;
        let tangent = tangent_along(spec, weight, &x, &d)?;
        let s = functional.sharp(&tangent, &d)?;
        Ok(s * s)
    })?;
    Ok(mean_stderr(&samples)?.with_seed(drv.seed()))
}

/// Sharp of an Itô integral of an adapted integrand on the fine grid:
/// `(∫ ξ dB)^# = ∫ ξ^# dB + ∫ ξ sqrt(alpha) dB̂`.
pub fn sharp_of_integral(xi: &PathGrid, xi_sharp: &PathGrid, alpha: &[f64], drv: &DriverPaths) -> Result<f64> {
    let n = drv.grid().n_fine();
    if xi.len() != n + 1 || xi_sharp.len() != n + 1 || alpha.len() < n {
        return Err(Error::Dimension(format!(
            "integrand ({}), sharp ({}) and weight ({}) must cover {} fine nodes",
            xi.len(),
            xi_sharp.len(),
            alpha.len(),
            n + 1
        )));
    }
    if xi.times() != xi_sharp.times() {
        return Err(Error::Dimension("integrand and its sharp use different grids".into()));
    }
    let (x, s) = (xi.values(), xi_sharp.values());
    let v: f64 = (0..n)
        .map(|j| s[j] * drv.db_fine()[j] + x[j] * alpha[j].sqrt() * drv.dbhat_fine()[j])
        .sum();
    ensure_finite(v, "sharp of integral")
}

/// Ornstein-Uhlenbeck perturbation of the Brownian increments at time `eps`:
/// `dB_k -> exp(-alpha(t_k) eps / 2) dB_k + sqrt(1 - exp(-alpha(t_k) eps)) dB̂_k`.
pub fn perturb_path(db: &[f64], eps: f64, weight: &WeightProcess, grid: &TimeGrid, dbhat: &[f64]) -> Result<Vec<f64>> {
    if !weight.is_deterministic() {
        return Err(Error::Unsupported(
            "path perturbation is only defined for deterministic weights".into(),
        ));
    }
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be >= 0, got {eps}")));
    }
    if db.len() != grid.n_fine() || dbhat.len() != db.len() {
        return Err(Error::Dimension(format!(
            "{} and {} increments for {} fine steps",
            db.len(),
            dbhat.len(),
            grid.n_fine()
        )));
    }
    db.iter()
        .zip(dbhat)
        .enumerate()
        .map(|(j, (d, e))| {
            let a = weight.eval_deterministic(grid.fine_time(j))? * eps;
            Ok((-0.5 * a).exp() * d + (-(-a).exp_m1()).sqrt() * e)
        })
        .collect()
}

/// Both sides of `E Γ[F, ∫ h dB] = E[F ∫ h alpha dB]` for deterministic `h`.
///
/// Returns `(lhs, rhs)`: `lhs` averages `F^# (∫ h dB)^#` with
/// `(∫ h dB)^# = ∫ h sqrt(alpha) dB̂`, `rhs` averages `F ∫ h alpha dB`.
pub fn ibp_pair(
    functional: &dyn PathFunctional,
    h: &BrownianIntegral,
    spec: &SdeSpec,
    weight: &WeightProcess,
    ensemble: &Ensemble,
    mode: ReferenceMode,
) -> Result<(Estimate, Estimate)> {
    let pairs = map_paths(ensemble.n_paths, |p| {
        let drv = ensemble.drivers(p)?;
        let tangent = simulate_tangent(spec, weight, &drv, mode)?;
        let f_sharp = functional.sharp(&tangent, &drv)?;
        let h_sharp = h.sharp(&tangent, &drv)?;
        let f = functional.value(&tangent.x, drv.db_fine())?;
        let weighted: f64 = tangent.x.times()[..drv.db_fine().len()]
            .iter()
            .zip(drv.db_fine())
            .zip(&tangent.alpha)
            .map(|((&t, d), a)| h.h(t) * a * d)
            .sum();
        Ok((f_sharp * h_sharp, f * weighted))
    })?;
    let (lhs, rhs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok((
        mean_stderr(&lhs)?.with_seed(ensemble.seed),
        mean_stderr(&rhs)?.with_seed(ensemble.seed),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde_engine::make_drivers;
    use proptest::prelude::*;

    fn unit_bm() -> SdeSpec {
        SdeSpec::from_fns(0.0, |_, _| 1.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0)
    }

    #[test]
    fn gamma_of_brownian_motion() {
        let ens = Ensemble::new(TimeGrid::new(8, 8, 1.0).unwrap(), 5, 20_000).unwrap();
        let alpha = |t: f64| 0.5 + t;
        let w = WeightProcess::deterministic(alpha);
        let y = BrownianIntegral::brownian_at(0.5);
        let e = gamma_estimate(&unit_bm(), &w, &y, &ens, ReferenceMode::FineEuler).unwrap();
        // the discrete sharp has variance Σ alpha(s_j) dt over left nodes,
        // a Riemann sum for ∫_0^{1/2} (0.5 + s) ds = 0.375
        let dt = 1.0 / 64.0;
        let discrete: f64 = (0..32).map(|j| alpha(j as f64 * dt) * dt).sum();
        assert!(e.within(discrete, 3.0), "{e:?} vs {discrete}");
        assert!((discrete - 0.375).abs() < 0.01);
    }

    #[test]
    fn constant_functional_has_no_error() {
        let ens = Ensemble::new(TimeGrid::new(4, 4, 1.0).unwrap(), 1, 10).unwrap();
        let spec = SdeSpec::lognormal(100.0, 0.2, 0.05);
        let y = PointValue::new(|_| 3.0, |_| 0.0, 1.0);
        let e = gamma_estimate(&spec, &WeightProcess::adapted(), &y, &ens, ReferenceMode::Exact).unwrap();
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn deterministic_integrand_sharp() {
        let drv = make_drivers(4, 4, 2).unwrap();
        let xi = PathGrid::uniform(1.0, (0..17).map(|j| (j as f64 * 0.3).cos()).collect()).unwrap();
        let zero = PathGrid::uniform(1.0, vec![0.0; 17]).unwrap();
        let alpha = vec![1.0; 17];
        let got = sharp_of_integral(&xi, &zero, &alpha, &drv).unwrap();
        let expected: f64 = (0..16).map(|j| xi.values()[j] * drv.dbhat_fine()[j]).sum();
        assert!((got - expected).abs() < 1e-14);
        assert_eq!(sharp_of_integral(&zero, &zero, &alpha, &drv).unwrap(), 0.0);
        assert!(sharp_of_integral(&xi.subsample(2).unwrap(), &zero, &alpha, &drv).is_err());
    }

    #[test]
    fn perturbation_identity_and_errors() {
        let drv = make_drivers(4, 4, 2).unwrap();
        let w = WeightProcess::constant(1.0);
        let same = perturb_path(drv.db_fine(), 0.0, &w, drv.grid(), drv.dbhat_fine()).unwrap();
        assert_eq!(same, drv.db_fine());
        assert!(matches!(
            perturb_path(drv.db_fine(), 0.1, &WeightProcess::adapted(), drv.grid(), drv.dbhat_fine()),
            Err(Error::Unsupported(_))
        ));
        assert!(perturb_path(drv.db_fine(), -0.1, &w, drv.grid(), drv.dbhat_fine()).is_err());
    }

    #[test]
    fn truncated_weight_leaves_earlier_state_unchanged() {
        let spec = SdeSpec::lognormal(100.0, 0.2, 0.05);
        let drv = make_drivers(8, 8, 6).unwrap();
        let full = simulate_tangent(&spec, &WeightProcess::adapted(), &drv, ReferenceMode::Exact).unwrap();
        let cut = simulate_tangent(&spec, &WeightProcess::adapted().truncated_at(0.5), &drv, ReferenceMode::Exact).unwrap();
        assert_eq!(full.sharp_at(0.5), cut.sharp_at(0.5));
        assert_ne!(full.sharp_at(1.0), cut.sharp_at(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn sharps_are_linear_in_bhat(seed in 0u64..1000, c in -3.0f64..3.0) {
            let spec = SdeSpec::lognormal(100.0, 0.2, 0.05);
            let w = WeightProcess::adapted();
            let drv = make_drivers(4, 8, seed).unwrap();
            let scaled = drv.with_bhat(drv.dbhat_fine().iter().map(|d| c * d).collect()).unwrap();
            let t1 = simulate_tangent(&spec, &w, &drv, ReferenceMode::Exact).unwrap();
            let t2 = simulate_tangent(&spec, &w, &scaled, ReferenceMode::Exact).unwrap();
            let functionals: [Box<dyn PathFunctional>; 3] = [
                Box::new(PointValue::new(|x| x * x, |x| 2.0 * x, 0.75)),
                Box::new(BrownianIntegral::new(|s| 1.0 + s)),
                Box::new(StochasticIntegral::self_integral()),
            ];
            for f in &functionals {
                let a = f.sharp(&t1, &drv).unwrap();
                let b = f.sharp(&t2, &scaled).unwrap();
                prop_assert!((c * a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }
}
