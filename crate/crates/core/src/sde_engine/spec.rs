use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::error_algebra::compare;

/// A coefficient `(x, t) -> value`.
pub type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Closed-form solution `(t, B_t) -> X_t`, for models that have one.
pub type ExactSolution = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `dX = a(X,t) dB + b(X,t) dt`, `X_0 = x0`, on `[0, horizon]`, together with
/// the x-derivatives the error calculus needs.
#[derive(Clone)]
pub struct SdeSpec {
    pub diffusion: Coefficient,
    pub drift: Coefficient,
    pub diffusion_dx: Coefficient,
    pub drift_dx: Coefficient,
    pub diffusion_dxx: Coefficient,
    pub x0: f64,
    pub horizon: f64,
    pub exact: Option<ExactSolution>,
}

impl fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSpec")
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .field("exact", &self.exact.is_some())
            .finish_non_exhaustive()
    }
}

fn coef<F: Fn(f64, f64) -> f64 + Send + Sync + 'static>(f: F) -> Coefficient {
    Arc::new(f)
}

impl SdeSpec {
    /// Diffusion `a`, drift `b` and the derivatives `a'_x`, `b'_x`, `a''_xx`.
    pub fn from_fns<A, B, DA, DB, DDA>(x0: f64, a: A, b: B, a_x: DA, b_x: DB, a_xx: DDA) -> Self
    where
        A: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        B: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        DA: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        DB: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        DDA: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        SdeSpec {
            diffusion: coef(a),
            drift: coef(b),
            diffusion_dx: coef(a_x),
            drift_dx: coef(b_x),
            diffusion_dxx: coef(a_xx),
            x0,
            horizon: 1.0,
            exact: None,
        }
    }

    /// `a = b = 0`.
    pub fn zero(x0: f64) -> Self {
        SdeSpec::from_fns(x0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0)
    }

    /// `a(x,t) = sigma x`, `b(x,t) = r x`, with the exact lognormal solution.
    pub fn lognormal(x0: f64, sigma: f64, r: f64) -> Self {
        SdeSpec::linear(x0, sigma, r).with_exact(move |t, b| {
            x0 * ((r - 0.5 * sigma * sigma) * t + sigma * b).exp()
        })
    }

    /// `a(x,t) = sigma x`, `b(x,t) = r x` without a closed-form solution
    /// attached.
    pub fn linear(x0: f64, sigma: f64, r: f64) -> Self {
        SdeSpec::from_fns(
            x0,
            move |x, _| sigma * x,
            move |x, _| r * x,
            move |_, _| sigma,
            move |_, _| r,
            |_, _| 0.0,
        )
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_exact<F: Fn(f64, f64) -> f64 + Send + Sync + 'static>(mut self, exact: F) -> Self {
        self.exact = Some(Arc::new(exact));
        self
    }

    #[inline]
    pub fn a(&self, x: f64, t: f64) -> f64 {
        (self.diffusion)(x, t)
    }

    #[inline]
    pub fn b(&self, x: f64, t: f64) -> f64 {
        (self.drift)(x, t)
    }

    #[inline]
    pub fn a_x(&self, x: f64, t: f64) -> f64 {
        (self.diffusion_dx)(x, t)
    }

    #[inline]
    pub fn b_x(&self, x: f64, t: f64) -> f64 {
        (self.drift_dx)(x, t)
    }

    #[inline]
    pub fn a_xx(&self, x: f64, t: f64) -> f64 {
        (self.diffusion_dxx)(x, t)
    }

    /// Probe points around `x0` at `t in {0, T/2, T}`.
    pub fn probe_grid(&self) -> Vec<(f64, f64)> {
        let scale = 0.5 * self.x0.abs().max(1.0);
        let xs = [-1.0, -0.5, 0.0, 0.5, 1.0].map(|u| self.x0 + u * scale);
        let ts = [0.0, 0.5 * self.horizon, self.horizon];
        xs.iter()
            .flat_map(|&x| ts.iter().map(move |&t| (x, t)))
            .collect()
    }

    /// Checks the supplied derivatives against central differences (relative
    /// tolerance `1e-5`) and that the coefficients stay finite with finite
    /// linear-growth constants on the probe grid.
    pub fn validate(&self) -> Result<()> {
        self.validate_on(&self.probe_grid())
    }

    pub fn validate_on(&self, probes: &[(f64, f64)]) -> Result<()> {
        if !self.x0.is_finite() {
            return Err(Error::InvalidArgument("x0 must be finite".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", self.horizon)));
        }
        const TOL: f64 = 1e-5;
        for &(x, t) in probes {
            let h = 1e-5 * x.abs().max(1.0);
            let fd = |f: &Coefficient| (f(x + h, t) - f(x - h, t)) / (2.0 * h);
            let p = [x, t];
            compare("a'_x", &p, self.a_x(x, t), fd(&self.diffusion), TOL)?;
            compare("b'_x", &p, self.b_x(x, t), fd(&self.drift), TOL)?;
            compare("a''_xx", &p, self.a_xx(x, t), fd(&self.diffusion_dx), TOL)?;
            for (name, v) in [("a", self.a(x, t)), ("b", self.b(x, t))] {
                let growth = v.abs() / (1.0 + x.abs());
                if !growth.is_finite() {
                    return Err(Error::NonFinite(format!("coefficient {name} at ({x}, {t})")));
                }
            }
        }
        Ok(())
    }
}
