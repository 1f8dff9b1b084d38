//! Worked examples checked end to end against independent oracles.

use std::f64::consts::{E, FRAC_1_SQRT_2};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use dirichlet_euler::experiments::{
    principle_samples, rootzen_limit_variance, rootzen_samples, Criterion, PrincipleFunctional,
};
use dirichlet_euler::finance::{
    build_model, gamma_h, gamma_v, model_path, price_and_hedge, ConditionalMethod, ModelBundle, ModelParams,
    Payoff, PayoffSpec,
};
use dirichlet_euler::limit_law::{simulate_limit_pair, variation_of_constants, RootzenIntegrand};
use dirichlet_euler::sde_engine::{
    euler_path, reference_fine, scaled_error_path, DriverPaths, Ensemble, PathGrid, ReferenceMode, SdeSpec,
    TimeGrid,
};
use dirichlet_euler::stats::{ks_distance, map_paths, mean_stderr};
use dirichlet_euler::wiener::{
    gamma_estimate, perturb_path, sharp_of_integral, simulate_tangent, PointValue, WeightProcess,
};
use dirichlet_euler::Estimate;

const SEED: u64 = 7;

fn geometric() -> SdeSpec {
    SdeSpec::lognormal(1.0, 1.0, 0.0)
}

fn lognormal_call() -> ModelBundle {
    build_model(&ModelParams::lognormal_call(0.2, 0.05, 100.0, 100.0)).unwrap()
}

fn smoothed_call() -> ModelBundle {
    let mut p = ModelParams::lognormal_call(0.2, 0.05, 100.0, 100.0);
    p.payoff = PayoffSpec::SmoothedCall {
        strike: 100.0,
        smoothing: None,
    };
    build_model(&p).unwrap()
}

fn assert_passes(c: Criterion) {
    assert!(c.passed, "{c}");
}

fn squares(v: &[f64]) -> Estimate {
    mean_stderr(&v.iter().map(|x| x * x).collect::<Vec<_>>()).unwrap()
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (s / n as f64).sqrt()
}

#[test]
fn euler_chain_of_a_martingale_keeps_its_mean() {
    let ens = Ensemble::new(TimeGrid::new(64, 1, 1.0).unwrap(), SEED, 20_000).unwrap();
    let spec = geometric();
    let terminal = map_paths(ens.n_paths, |p| Ok(euler_path(&spec, &ens.drivers(p)?)?.terminal())).unwrap();
    assert_passes(Criterion::within_stderr("E[X^n_1]", &mean_stderr(&terminal).unwrap(), 1.0, 3.0));
}

#[test]
fn exact_lognormal_mean() {
    let ens = Ensemble::new(TimeGrid::new(16, 1, 1.0).unwrap(), SEED, 20_000).unwrap();
    let spec = SdeSpec::lognormal(100.0, 0.2, 0.05);
    let x = map_paths(ens.n_paths, |p| {
        Ok(*reference_fine(&spec, &ens.drivers(p)?, ReferenceMode::Exact)?.last().unwrap())
    })
    .unwrap();
    assert_passes(Criterion::within_stderr("E[X_1]", &mean_stderr(&x).unwrap(), 100.0 * 0.05f64.exp(), 3.0));
}

#[test]
fn fine_euler_converges_with_strong_order_one_half() {
    let spec = SdeSpec::lognormal(100.0, 0.2, 0.05);
    let refines = [16usize, 64, 256];
    let errors: Vec<f64> = refines
        .iter()
        .map(|&r| {
            let ens = Ensemble::new(TimeGrid::new(1, r, 1.0).unwrap(), SEED, 4000).unwrap();
            let d = map_paths(ens.n_paths, |p| {
                let drv = ens.drivers(p)?;
                let fine = reference_fine(&spec, &drv, ReferenceMode::FineEuler)?;
                let exact = reference_fine(&spec, &drv, ReferenceMode::Exact)?;
                Ok(fine.last().unwrap() - exact.last().unwrap())
            })
            .unwrap();
            rms(d.into_iter())
        })
        .collect();
    let lx: Vec<f64> = refines.iter().map(|&r| (r as f64).ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 3.0, ly.iter().sum::<f64>() / 3.0);
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}, errors {errors:?}");
}

#[test]
fn geometric_euler_error_and_limit_have_second_moment_e_over_two() {
    let ens = Ensemble::new(TimeGrid::new(256, 16, 1.0).unwrap(), SEED, 20_000).unwrap();
    let spec = geometric();
    let rows = map_paths(ens.n_paths, |p| {
        let drv = ens.drivers(p)?;
        let err = scaled_error_path(&spec, &drv, ReferenceMode::Exact)?.terminal();
        let u = simulate_limit_pair(&spec, &drv, ReferenceMode::Exact)?.u.terminal();
        Ok((err, u))
    })
    .unwrap();
    let (err, u): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    assert_passes(Criterion::relative("n E[(X^n_1 - X_1)^2]", squares(&err).mean, E / 2.0, 0.10));
    assert_passes(Criterion::within_stderr("E[U_1^2]", &squares(&u), E / 2.0, 3.0));
}

#[test]
fn geometric_limit_is_state_times_w_over_root_two() {
    let spec = geometric();
    for p in 0..20 {
        let drv = DriverPaths::generate(TimeGrid::new(16, 16, 1.0).unwrap(), SEED, p).unwrap();
        let pair = simulate_limit_pair(&spec, &drv, ReferenceMode::Exact).unwrap();
        let voc = variation_of_constants(&spec, &pair.x, &pair.m, &drv).unwrap();
        let w = drv.w_fine();
        for ((u, x), w) in voc.values().iter().zip(pair.x.values()).zip(&w) {
            let expected = x * w * FRAC_1_SQRT_2;
            assert!((u - expected).abs() <= 1e-10 * (1.0 + expected.abs()), "{u} vs {expected}");
        }
    }
}

#[test]
fn variation_of_constants_matches_direct_limit() {
    let spec = SdeSpec::lognormal(100.0, 0.2, 0.05);
    let ens = Ensemble::new(TimeGrid::new(16, 256, 1.0).unwrap(), SEED, 200).unwrap();
    let rows = map_paths(ens.n_paths, |p| {
        let drv = ens.drivers(p)?;
        let pair = simulate_limit_pair(&spec, &drv, ReferenceMode::Exact)?;
        let voc = variation_of_constants(&spec, &pair.x, &pair.m, &drv)?;
        Ok((voc.terminal() - pair.u.terminal(), pair.u.terminal()))
    })
    .unwrap();
    let gap = rms(rows.iter().map(|r| r.0)) / rms(rows.iter().map(|r| r.1));
    assert!(gap < 0.02, "relative RMS {gap}");
}

#[test]
fn unit_diffusion_with_unit_weight_has_sharp_equal_to_bhat() {
    let spec = SdeSpec::from_fns(0.0, |_, _| 1.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0);
    let drv = DriverPaths::generate(TimeGrid::new(16, 16, 1.0).unwrap(), SEED, 3).unwrap();
    let t = simulate_tangent(&spec, &WeightProcess::constant(1.0), &drv, ReferenceMode::FineEuler).unwrap();
    for (s, b) in t.sharp.values().iter().zip(drv.bhat_fine()) {
        assert!((s - b).abs() < 1e-12);
    }
}

#[test]
fn lognormal_gamma_expectation() {
    let b = lognormal_call();
    let ens = Ensemble::new(TimeGrid::new(16, 16, 1.0).unwrap(), SEED, 20_000).unwrap();
    let e = gamma_estimate(&b.sde, &b.weight, &PointValue::state(1.0), &ens, ReferenceMode::Exact).unwrap();
    let target = 100.0f64.powi(2) * 0.14f64.exp() * 0.2f64.powi(4) / 2.0;
    assert_passes(Criterion::within_stderr("E[(X#_1)^2]", &e, target, 3.0));
}

#[test]
fn sharp_of_integral_reproduces_tangent_for_linear_diffusion() {
    let spec = geometric();
    let weight = WeightProcess::adapted();
    let ens = Ensemble::new(TimeGrid::new(4, 256, 1.0).unwrap(), SEED, 100).unwrap();
    let rows = map_paths(ens.n_paths, |p| {
        let drv = ens.drivers(p)?;
        let t = simulate_tangent(&spec, &weight, &drv, ReferenceMode::FineEuler)?;
        let s = sharp_of_integral(&t.x, &t.sharp, &t.alpha, &drv)?;
        Ok((s - t.sharp.terminal(), t.sharp.terminal()))
    })
    .unwrap();
    let gap = rms(rows.iter().map(|r| r.0)) / rms(rows.iter().map(|r| r.1));
    assert!(gap < 0.02, "relative RMS {gap}");
}

#[test]
fn ou_perturbation_of_brownian_endpoint() {
    let eps = 0.01;
    let weight = WeightProcess::constant(1.0);
    let ens = Ensemble::new(TimeGrid::new(16, 1, 1.0).unwrap(), SEED, 100_000).unwrap();
    let q = map_paths(ens.n_paths, |p| {
        let drv = ens.drivers(p)?;
        let moved = perturb_path(drv.db_fine(), eps, &weight, drv.grid(), drv.dbhat_fine())?;
        let d: f64 = moved.iter().zip(drv.db_fine()).map(|(a, b)| a - b).sum();
        Ok(d * d / eps)
    })
    .unwrap();
    let target = 2.0 * (1.0 - (-eps / 2.0).exp()) / eps;
    assert_passes(Criterion::within_stderr("E[(B_1(eps) - B_1)^2]/eps", &mean_stderr(&q).unwrap(), target, 3.0));
}

#[test]
fn gamma_of_price_is_delta_squared_times_gamma_of_state() {
    let b = lognormal_call();
    let n = Normal::standard();
    let (sigma, r) = (0.2, 0.05);
    let ens = Ensemble::new(TimeGrid::new(16, 16, 1.0).unwrap(), SEED, 5).unwrap();
    for p in 0..5 {
        let path = model_path(&b, &ens.drivers(p).unwrap(), ReferenceMode::Exact).unwrap();
        assert_eq!(gamma_v(&b, &path, 0.0, ConditionalMethod::ClosedForm, p).unwrap(), 0.0);
        let t = 0.5;
        let x = path.state_at(t).0;
        let tau: f64 = 1.0 - t;
        let d1 = ((x / 100.0).ln() + (r + 0.5 * sigma * sigma) * tau) / (sigma * tau.sqrt());
        let expected = n.cdf(d1).powi(2) * x * x * sigma.powi(4) * t / 2.0;
        let got = gamma_v(&b, &path, t, ConditionalMethod::ClosedForm, p).unwrap();
        assert!((got / expected - 1.0).abs() < 1e-6, "{got} vs {expected}");
    }
}

/// Plain lognormal sampling of `E[f''(X_T) (X_T / x)^2]` given `X_t = x`.
fn gamma_factor_mc(f: &Payoff, x: f64, tau: f64, draws: usize) -> Estimate {
    let (sigma, r) = (0.2, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let v: Vec<f64> = (0..draws)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let ratio = ((r - 0.5 * sigma * sigma) * tau + sigma * tau.sqrt() * z).exp();
            f.d2(x * ratio).unwrap() * ratio * ratio
        })
        .collect();
    mean_stderr(&v).unwrap()
}

#[test]
fn gamma_of_hedge_matches_independent_factors() {
    let b = smoothed_call();
    let drv = DriverPaths::generate(TimeGrid::new(16, 16, 1.0).unwrap(), SEED, 0).unwrap();
    let path = model_path(&b, &drv, ReferenceMode::Exact).unwrap();
    let t = 0.5;
    let x = path.state_at(t).0;
    let gamma_x = x * x * 0.2f64.powi(4) * t / 2.0;
    let disc = (-0.05 * (1.0 - t)).exp();
    let got = gamma_h(&b, &path, t, ConditionalMethod::ClosedForm, 0).unwrap();
    // Γ[H_t] = disc^2 G^2 Γ[X_t] with G the second-order factor
    let factor = (got / gamma_x).sqrt() / disc;
    let oracle = gamma_factor_mc(&b.model.payoff, x, 1.0 - t, 400_000);
    assert_passes(Criterion::within_stderr("Γ[H_t] factor", &oracle, factor, 3.0));
}

#[test]
fn gamma_of_hedge_agrees_with_sharp_chain_rule() {
    let b = Arc::new(smoothed_call());
    let t = 0.5;
    let hedge = {
        let b = Arc::clone(&b);
        move |x: f64| price_and_hedge(&b, t, x, 1.0, ConditionalMethod::ClosedForm, 0).unwrap().1.mean
    };
    let slope = {
        let hedge = hedge.clone();
        move |x: f64| {
            let h = 1e-3 * x;
            (hedge(x + h) - hedge(x - h)) / (2.0 * h)
        }
    };
    let functional = PointValue::new(hedge, slope, t);
    let ens = Ensemble::new(TimeGrid::new(16, 16, 1.0).unwrap(), SEED, 4000).unwrap();
    let sharp = gamma_estimate(&b.sde, &b.weight, &functional, &ens, ReferenceMode::Exact).unwrap();
    let closed = map_paths(ens.n_paths, |p| {
        let path = model_path(&b, &ens.drivers(p)?, ReferenceMode::Exact)?;
        gamma_h(&b, &path, t, ConditionalMethod::ClosedForm, p)
    })
    .unwrap();
    assert_passes(Criterion::agree("E Γ[H_t]", &sharp, &mean_stderr(&closed).unwrap(), 3.0, 0.0));
}

fn principle(functional: &PrincipleFunctional) -> (Vec<f64>, Vec<f64>) {
    let b = lognormal_call();
    let ens = Ensemble::new(TimeGrid::new(256, 16, 1.0).unwrap(), SEED, 5000).unwrap();
    principle_samples(&b.sde, &b.weight, functional, &ens, ReferenceMode::Exact).unwrap()
}

#[test]
fn asymptotic_principle_for_the_state() {
    let (err, sharp) = principle(&PrincipleFunctional::Point(PointValue::state(1.0)));
    assert!(ks_distance(&err, &sharp).unwrap() < 0.06);
    assert_passes(Criterion::relative("E[(X#_1)^2]", squares(&sharp).mean, 9.2022, 0.10));
    assert_passes(Criterion::relative("n E[err^2]", squares(&err).mean, 9.2022, 0.10));
}

#[test]
fn asymptotic_principle_for_a_smoothed_call() {
    let f = smoothed_call().model.payoff;
    let point = PointValue::new(move |x| f.value(x), move |x| f.d1(x), 1.0);
    let (err, sharp) = principle(&PrincipleFunctional::Point(point));
    let b = lognormal_call();
    let ens = Ensemble::new(TimeGrid::new(16, 16, 1.0).unwrap(), SEED, 5000).unwrap();
    let chain = map_paths(ens.n_paths, |p| {
        let path = model_path(&b, &ens.drivers(p)?, ReferenceMode::Exact)?;
        let x = path.state_at(1.0).0;
        Ok(f.d1(x).powi(2) * path.gamma_x(1.0))
    })
    .unwrap();
    let target = mean_stderr(&chain).unwrap().mean;
    assert_passes(Criterion::relative("E[(f(X)#)^2]", squares(&sharp).mean, target, 0.10));
    assert_passes(Criterion::relative("n E[err^2]", squares(&err).mean, target, 0.10));
}

#[test]
fn asymptotic_principle_for_the_self_integral() {
    let (err, sharp) = principle(&PrincipleFunctional::SelfIntegral);
    let ks = ks_distance(&err, &sharp).unwrap();
    assert!(ks < 0.06, "KS {ks}");
}

#[test]
fn rootzen_sine_matches_quadrature() {
    let f = RootzenIntegrand::sine();
    let ens = Ensemble::new(TimeGrid::new(64, 16, 1.0).unwrap(), SEED, 50_000).unwrap();
    let (err, _) = rootzen_samples(&f, &ens).unwrap();
    let target = rootzen_limit_variance(&f, 1.0);
    assert!((target - 0.25 * (1.0 + (1.0 - (-2.0f64).exp()) / 2.0)).abs() < 1e-10);
    assert_passes(Criterion::within_stderr("n Var(error), sine", &squares(&err), target, 3.0));
}

#[test]
fn rootzen_constant_integrand_has_no_error() {
    let ens = Ensemble::new(TimeGrid::new(64, 16, 1.0).unwrap(), SEED, 100).unwrap();
    let (err, _) = rootzen_samples(&RootzenIntegrand::constant(2.0), &ens).unwrap();
    assert!(err.iter().all(|e| e.abs() < 1e-12));
}

#[test]
fn path_grids_reject_mismatched_lengths() {
    assert!(PathGrid::new(vec![0.0, 1.0], vec![1.0]).is_err());
}
