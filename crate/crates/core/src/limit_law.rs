//! The asymptotic Euler error.
//!
//! `sqrt(n) (X^n - X)` converges in law, jointly with `B`, to the solution of
//!
//! ```text
//! dU = a'_x(X,t) U dB + b'_x(X,t) U dt + a'_x(X,t) a(X,t) / sqrt(2) dW,  U_0 = 0
//! ```
//!
//! with `W` independent of `B`. Here `U` is simulated directly by Euler on the
//! fine grid and, independently, through the variation-of-constants formula
//! `U_t = M_t ∫ a a'_x / (sqrt(2) M_s) dW_s`, where `M` is the stochastic
//! exponential of `∫ a'_x dB + ∫ b'_x ds`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use crate::error::{ensure_finite, Error, Result};
use crate::sde_engine::{reference_fine, DriverPaths, PathGrid, ReferenceMode, SdeSpec};

/// Reference solution `X`, limit error `U` and exponential `M`, all on the
/// fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPair {
    pub x: PathGrid,
    pub u: PathGrid,
    pub m: PathGrid,
    refine: usize,
}

impl LimitPair {
    /// `U` on the coarse grid.
    pub fn u_coarse(&self) -> PathGrid {
        self.u
            .subsample(self.refine)
            .expect("fine grid is a refinement of the coarse grid")
    }
}

fn fine_times(drv: &DriverPaths) -> Vec<f64> {
    (0..=drv.grid().n_fine())
        .map(|j| drv.grid().fine_time(j))
        .collect()
}

/// `M_t = exp{∫ a'_x dB - 1/2 ∫ a'_x^2 ds + ∫ b'_x ds}` by left-point sums
/// along the fine-grid path `x`.
pub fn exponential_path(spec: &SdeSpec, x: &[f64], drv: &DriverPaths) -> Result<Vec<f64>> {
    let grid = drv.grid();
    if x.len() != grid.n_fine() + 1 {
        return Err(Error::Dimension(format!(
            "path of length {} on a grid of {} fine steps",
            x.len(),
            grid.n_fine()
        )));
    }
    let dt = grid.dt_fine();
    let mut log_m = 0.0;
    let mut out = Vec::with_capacity(x.len());
    out.push(1.0);
    for (j, db) in drv.db_fine().iter().enumerate() {
        let t = grid.fine_time(j);
        let ax = spec.a_x(x[j], t);
        log_m += ax * db - 0.5 * ax * ax * dt + spec.b_x(x[j], t) * dt;
        let m = log_m.exp();
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::NonPositiveExponential { step: j + 1 });
        }
        out.push(m);
    }
    Ok(out)
}

/// Simulates `(X, U, M)`: `X` by the reference scheme, `U` by Euler on the
/// fine grid of the limit SDE driven by `(B, W)`, `M` by exponentiating the
/// discretized integrals.
pub fn simulate_limit_pair(spec: &SdeSpec, drv: &DriverPaths, mode: ReferenceMode) -> Result<LimitPair> {
    let grid = drv.grid();
    let x = reference_fine(spec, drv, mode)?;
    let m = exponential_path(spec, &x, drv)?;
    let dt = grid.dt_fine();
    let mut u = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    u.push(acc);
    for (j, (db, dw)) in drv.db_fine().iter().zip(drv.dw_fine()).enumerate() {
        let t = grid.fine_time(j);
        let xj = x[j];
        let ax = spec.a_x(xj, t);
        acc += ax * acc * db + spec.b_x(xj, t) * acc * dt + FRAC_1_SQRT_2 * ax * spec.a(xj, t) * dw;
        if !acc.is_finite() {
            return Err(Error::BlowUp {
                step: j + 1,
                time: grid.fine_time(j + 1),
            });
        }
        u.push(acc);
    }
    let times = fine_times(drv);
    Ok(LimitPair {
        x: PathGrid::new(times.clone(), x)?,
        u: PathGrid::new(times.clone(), u)?,
        m: PathGrid::new(times, m)?,
        refine: grid.refine(),
    })
}

/// `U_t = M_t Σ_{s_j < t} a(X_j) a'_x(X_j) / (sqrt(2) M_j) dW_j` on the fine grid.
pub fn variation_of_constants(spec: &SdeSpec, x: &PathGrid, m: &PathGrid, drv: &DriverPaths) -> Result<PathGrid> {
    let grid = drv.grid();
    let n = grid.n_fine();
    if x.len() != n + 1 || m.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "X ({}) and M ({}) must live on the {} fine nodes",
            x.len(),
            m.len(),
            n + 1
        )));
    }
    let (xs, ms) = (x.values(), m.values());
    if let Some(j) = ms.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonPositiveExponential { step: j });
    }
    let mut integral = 0.0;
    let mut u = Vec::with_capacity(n + 1);
    u.push(0.0);
    for (j, dw) in drv.dw_fine().iter().enumerate() {
        let t = grid.fine_time(j);
        integral += spec.a(xs[j], t) * spec.a_x(xs[j], t) * FRAC_1_SQRT_2 / ms[j] * dw;
        u.push(ensure_finite(ms[j + 1] * integral, "variation of constants")?);
    }
    PathGrid::new(x.times().to_vec(), u)
}

type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Integrand `f(x, s)` of `∫ f(B_s, s) dB_s`, with `f'_x`, and optionally an
/// Itô primitive `G` (`G'_x = f`) with its time derivative `G'_s`.
#[derive(Clone)]
pub struct RootzenIntegrand {
    f: Fn2,
    f_x: Fn2,
    primitive: Option<(Fn2, Fn2)>,
}

impl std::fmt::Debug for RootzenIntegrand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RootzenIntegrand")
            .field("has_primitive", &self.primitive.is_some())
            .finish_non_exhaustive()
    }
}

impl RootzenIntegrand {
    pub fn new<F, D>(f: F, f_x: D) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        RootzenIntegrand {
            f: Arc::new(f),
            f_x: Arc::new(f_x),
            primitive: None,
        }
    }

    /// With a primitive the reference integral is evaluated by Itô's formula,
    /// `∫ f dB = G(B_T, T) - G(0, 0) - ∫ (G'_s + f'_x / 2) ds`, instead of a
    /// fine-grid sum.
    pub fn with_primitive<G, GS>(mut self, g: G, g_s: GS) -> Self
    where
        G: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        GS: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.primitive = Some((Arc::new(g), Arc::new(g_s)));
        self
    }

    pub fn constant(c: f64) -> Self {
        RootzenIntegrand::new(move |_, _| c, |_, _| 0.0)
    }

    /// `f(x, s) = x`.
    pub fn identity() -> Self {
        RootzenIntegrand::new(|x, _| x, |_, _| 1.0).with_primitive(|x, _| 0.5 * x * x, |_, _| 0.0)
    }

    /// `f(x, s) = sin x`.
    pub fn sine() -> Self {
        RootzenIntegrand::new(|x, _| x.sin(), |x, _| x.cos()).with_primitive(|x, _| -x.cos(), |_, _| 0.0)
    }

    pub fn f(&self, x: f64, s: f64) -> f64 {
        (self.f)(x, s)
    }

    pub fn f_x(&self, x: f64, s: f64) -> f64 {
        (self.f_x)(x, s)
    }
}

/// One draw of the scaled integral error and of its limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootzenSample {
    /// `sqrt(n) (∫ ψ_n dB - ∫ f(B_s, s) dB_s)` at the horizon, with `ψ_n`
    /// frozen at the coarse nodes.
    pub scaled_error: f64,
    /// `(1/sqrt 2) ∫ f'_x(B_s, s) dW_s` on the fine grid.
    pub limit_sample: f64,
}

/// Euler error of `∫ f(B_s, s) dB_s` at coarse grid times, and a draw of the
/// Rootzén limit from the independent `W` of the same drivers.
pub fn rootzen_error(integrand: &RootzenIntegrand, drv: &DriverPaths) -> Result<RootzenSample> {
    let grid = drv.grid();
    let (refine, dt) = (grid.refine(), grid.dt_fine());
    let b = drv.b_fine();
    let mut coarse = 0.0;
    let mut fine_diff = 0.0;
    let mut limit = 0.0;
    for (j, (db, dw)) in drv.db_fine().iter().zip(drv.dw_fine()).enumerate() {
        let node = j - j % refine;
        let frozen = integrand.f(b[node], grid.fine_time(node));
        let (bj, s) = (b[j], grid.fine_time(j));
        coarse += frozen * db;
        fine_diff += (frozen - integrand.f(bj, s)) * db;
        limit += integrand.f_x(bj, s) * dw;
    }
    let error = match &integrand.primitive {
        None => fine_diff,
        Some((g, g_s)) => {
            let n = grid.n_fine();
            let correction = |j: usize| {
                let s = grid.fine_time(j);
                g_s(b[j], s) + 0.5 * integrand.f_x(b[j], s)
            };
            let mut drift = 0.5 * (correction(0) + correction(n));
            for j in 1..n {
                drift += correction(j);
            }
            let exact = g(b[n], grid.horizon()) - g(0.0, 0.0) - drift * dt;
            coarse - exact
        }
    };
    Ok(RootzenSample {
        scaled_error: ensure_finite((grid.n() as f64).sqrt() * error, "Rootzén error")?,
        limit_sample: ensure_finite(FRAC_1_SQRT_2 * limit, "Rootzén limit")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde_engine::{make_drivers, DriverPaths, TimeGrid};
    use crate::stats::mean_stderr;

    #[test]
    fn state_independent_diffusion_has_no_error() {
        let spec = SdeSpec::from_fns(0.5, |_, t| 1.0 + t, |x, _| -x, |_, _| 0.0, |_, _| -1.0, |_, _| 0.0);
        let drv = make_drivers(8, 8, 3).unwrap();
        let pair = simulate_limit_pair(&spec, &drv, ReferenceMode::FineEuler).unwrap();
        assert!(pair.u.values().iter().all(|&u| u == 0.0));
        assert_eq!(pair.u.initial(), 0.0);
        assert_eq!(pair.m.initial(), 1.0);
        let voc = variation_of_constants(&spec, &pair.x, &pair.m, &drv).unwrap();
        assert!(voc.values().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn zero_derivatives_give_zero_u() {
        let spec = SdeSpec::from_fns(0.5, |_, _| 0.3, |_, _| 0.1, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0);
        let drv = make_drivers(4, 16, 9).unwrap();
        let pair = simulate_limit_pair(&spec, &drv, ReferenceMode::FineEuler).unwrap();
        assert!(pair.u.values().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn voc_is_linear_in_w() {
        let spec = SdeSpec::lognormal(100.0, 0.2, 0.05);
        let drv = make_drivers(8, 16, 4).unwrap();
        let pair = simulate_limit_pair(&spec, &drv, ReferenceMode::Exact).unwrap();
        let u1 = variation_of_constants(&spec, &pair.x, &pair.m, &drv).unwrap();
        let doubled = drv.with_w(drv.dw_fine().iter().map(|w| 2.0 * w).collect()).unwrap();
        let u2 = variation_of_constants(&spec, &pair.x, &pair.m, &doubled).unwrap();
        for (a, b) in u1.values().iter().zip(u2.values()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn voc_for_geometric_diffusion_is_x_times_w() {
        // a = x, b = 0: M = X / x0 and U_t = X_t W_t / sqrt 2
        let spec = SdeSpec::lognormal(1.0, 1.0, 0.0);
        let drv = make_drivers(16, 16, 21).unwrap();
        let pair = simulate_limit_pair(&spec, &drv, ReferenceMode::Exact).unwrap();
        let u = variation_of_constants(&spec, &pair.x, &pair.m, &drv).unwrap();
        let w = drv.w_fine();
        for j in 0..u.len() {
            let expected = pair.x.values()[j] * w[j] * FRAC_1_SQRT_2;
            assert!((u.values()[j] - expected).abs() < 1e-10 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn voc_rejects_non_positive_m() {
        let spec = SdeSpec::lognormal(1.0, 0.2, 0.0);
        let drv = make_drivers(2, 2, 1).unwrap();
        let x = PathGrid::uniform(1.0, vec![1.0; 5]).unwrap();
        let m = PathGrid::uniform(1.0, vec![1.0, 0.5, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            variation_of_constants(&spec, &x, &m, &drv),
            Err(Error::NonPositiveExponential { step: 2 })
        ));
    }

    #[test]
    fn constant_integrand_has_no_error() {
        let drv = make_drivers(16, 8, 5).unwrap();
        let s = rootzen_error(&RootzenIntegrand::constant(1.7), &drv).unwrap();
        assert_eq!(s.scaled_error, 0.0);
        assert_eq!(s.limit_sample, 0.0);
    }

    #[test]
    fn identity_error_is_chi_square_deviation() {
        // Euler error of ∫ B dB is (T - Σ ΔB_k^2) / 2
        let drv = make_drivers(32, 4, 8).unwrap();
        let s = rootzen_error(&RootzenIntegrand::identity(), &drv).unwrap();
        let qv: f64 = drv.db_coarse().iter().map(|d| d * d).sum();
        let expected = (32f64).sqrt() * (1.0 - qv) / 2.0;
        assert!((s.scaled_error - expected).abs() < 1e-12);
    }

    #[test]
    fn identity_error_variance_is_one_half() {
        let grid = TimeGrid::new(64, 1, 1.0).unwrap();
        let samples: Vec<f64> = (0..20_000)
            .map(|p| {
                let d = DriverPaths::generate(grid, 77, p).unwrap();
                rootzen_error(&RootzenIntegrand::identity(), &d).unwrap().scaled_error.powi(2)
            })
            .collect();
        let e = mean_stderr(&samples).unwrap();
        assert!(e.within(0.5, 3.0), "{e:?}");
    }

    #[test]
    fn fine_sum_and_primitive_agree_for_sine() {
        let drv = make_drivers(8, 512, 12).unwrap();
        let with = rootzen_error(&RootzenIntegrand::sine(), &drv).unwrap();
        let without = rootzen_error(&RootzenIntegrand::new(|x, _| x.sin(), |x, _| x.cos()), &drv).unwrap();
        assert!((with.scaled_error - without.scaled_error).abs() < 0.1);
        assert_eq!(with.limit_sample, without.limit_sample);
    }
}
