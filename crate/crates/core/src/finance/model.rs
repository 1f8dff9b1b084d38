use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_algebra::compare;
use crate::sde_engine::SdeSpec;
use crate::wiener::WeightProcess;

/// Local volatility as a function of the price level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum SigmaSpec {
    Constant {
        sigma: f64,
    },
    /// `sigma(x) = sigma_ref (x / x_ref)^(beta - 1)`; `x_ref` defaults to `x0`.
    Cev {
        beta: f64,
        sigma_ref: f64,
        #[serde(default)]
        x_ref: Option<f64>,
    },
    /// Clamped cubic spline through `(x, sigma)` knots, flat outside.
    Table {
        x: Vec<f64>,
        sigma: Vec<f64>,
    },
}

/// Payoff `f(X_T)` of a European option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PayoffSpec {
    Call {
        #[serde(rename = "K")]
        strike: f64,
    },
    Put {
        #[serde(rename = "K")]
        strike: f64,
    },
    /// Call with a quadratic cap of width `smoothing * K` around the strike
    /// (default smoothing 0.01).
    SmoothedCall {
        #[serde(rename = "K")]
        strike: f64,
        #[serde(default)]
        smoothing: Option<f64>,
    },
    Constant {
        value: f64,
    },
    Linear {
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
}

/// Parameters of `dX = X sigma(X,t) dB + X r dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub sigma: SigmaSpec,
    pub r: f64,
    pub x0: f64,
    #[serde(rename = "T", default = "one")]
    pub maturity: f64,
    pub payoff: PayoffSpec,
}

fn one() -> f64 {
    1.0
}

impl ModelParams {
    /// Constant volatility call, the benchmark lognormal setting.
    pub fn lognormal_call(sigma: f64, r: f64, x0: f64, strike: f64) -> Self {
        ModelParams {
            sigma: SigmaSpec::Constant { sigma },
            r,
            x0,
            maturity: 1.0,
            payoff: PayoffSpec::Call { strike },
        }
    }
}

/// Clamped cubic spline with zero end slopes, constant beyond the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct Spline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// second derivatives at the knots
    m: Vec<f64>,
}

impl Spline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::Model(format!(
                "table needs at least two knots with matching values, got {} and {}",
                n,
                y.len()
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Model("table knots must be strictly increasing".into()));
        }
        // tridiagonal system for the knot second derivatives, clamped ends
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        diag[0] = h[0] / 3.0;
        upper[0] = h[0] / 6.0;
        rhs[0] = (y[1] - y[0]) / h[0];
        for i in 1..n - 1 {
            lower[i] = h[i - 1] / 6.0;
            diag[i] = (h[i - 1] + h[i]) / 3.0;
            upper[i] = h[i] / 6.0;
            rhs[i] = (y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1];
        }
        lower[n - 1] = h[n - 2] / 6.0;
        diag[n - 1] = h[n - 2] / 3.0;
        rhs[n - 1] = -(y[n - 1] - y[n - 2]) / h[n - 2];
        // Thomas algorithm
        for i in 1..n {
            let w = lower[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut m = vec![0.0; n];
        m[n - 1] = rhs[n - 1] / diag[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
        }
        Ok(Spline { x, y, m })
    }

    /// `(value, first derivative, second derivative)` at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.x.len();
        if t <= self.x[0] {
            return (self.y[0], 0.0, 0.0);
        }
        if t >= self.x[n - 1] {
            return (self.y[n - 1], 0.0, 0.0);
        }
        let i = self.x.partition_point(|&k| k <= t) - 1;
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let value = a * self.y[i] + b * self.y[i + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let slope = (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) * h / 6.0 * m0 + (3.0 * b * b - 1.0) * h / 6.0 * m1;
        let curvature = a * m0 + b * m1;
        (value, slope, curvature)
    }
}

/// Volatility function with its level derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum Volatility {
    Constant(f64),
    Cev { c: f64, beta: f64 },
    Table(Spline),
}

impl Volatility {
    fn from_spec(spec: &SigmaSpec, x0: f64) -> Result<Self> {
        Ok(match spec {
            SigmaSpec::Constant { sigma } => Volatility::Constant(*sigma),
            SigmaSpec::Cev { beta, sigma_ref, x_ref } => {
                let x_ref = x_ref.unwrap_or(x0);
                if !(x_ref > 0.0) {
                    return Err(Error::Model(format!("CEV reference level must be positive, got {x_ref}")));
                }
                Volatility::Cev {
                    c: sigma_ref * x_ref.powf(1.0 - beta),
                    beta: *beta,
                }
            }
            SigmaSpec::Table { x, sigma } => Volatility::Table(Spline::new(x.clone(), sigma.clone())?),
        })
    }

    /// `(sigma, sigma'_x, sigma''_xx)` at level `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        match self {
            Volatility::Constant(s) => (*s, 0.0, 0.0),
            Volatility::Cev { c, beta } => {
                let s = c * x.powf(beta - 1.0);
                (s, (beta - 1.0) * s / x, (beta - 1.0) * (beta - 2.0) * s / (x * x))
            }
            Volatility::Table(spline) => spline.eval(x),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Volatility::Constant(_))
    }
}

/// Twice-differentiable (almost everywhere) payoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    Call { strike: f64 },
    Put { strike: f64 },
    SmoothedCall { strike: f64, width: f64 },
    Constant(f64),
    Linear { slope: f64, intercept: f64 },
}

impl Payoff {
    fn from_spec(spec: &PayoffSpec) -> Result<Self> {
        let p = match *spec {
            PayoffSpec::Call { strike } => Payoff::Call { strike },
            PayoffSpec::Put { strike } => Payoff::Put { strike },
            PayoffSpec::SmoothedCall { strike, smoothing } => {
                let rel = smoothing.unwrap_or(0.01);
                if !(rel > 0.0) {
                    return Err(Error::Model(format!("smoothing must be positive, got {rel}")));
                }
                Payoff::SmoothedCall {
                    strike,
                    width: rel * strike,
                }
            }
            PayoffSpec::Constant { value } => Payoff::Constant(value),
            PayoffSpec::Linear { slope, intercept } => Payoff::Linear { slope, intercept },
        };
        Ok(p)
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Payoff::Call { strike } => (x - strike).max(0.0),
            Payoff::Put { strike } => (strike - x).max(0.0),
            Payoff::SmoothedCall { strike, width } => {
                let lo = strike - 0.5 * width;
                if x <= lo {
                    0.0
                } else if x >= strike + 0.5 * width {
                    x - strike
                } else {
                    (x - lo) * (x - lo) / (2.0 * width)
                }
            }
            Payoff::Constant(c) => c,
            Payoff::Linear { slope, intercept } => slope * x + intercept,
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            Payoff::Call { strike } => f64::from(u8::from(x > strike)),
            Payoff::Put { strike } => -f64::from(u8::from(x < strike)),
            Payoff::SmoothedCall { strike, width } => ((x - strike + 0.5 * width) / width).clamp(0.0, 1.0),
            Payoff::Constant(_) => 0.0,
            Payoff::Linear { slope, .. } => slope,
        }
    }

    /// Second derivative where it exists as a function; `None` for kinked
    /// payoffs.
    pub fn d2(&self, x: f64) -> Option<f64> {
        match *self {
            Payoff::Call { .. } | Payoff::Put { .. } => None,
            Payoff::SmoothedCall { strike, width } => {
                Some(if (x - strike).abs() < 0.5 * width { 1.0 / width } else { 0.0 })
            }
            Payoff::Constant(_) | Payoff::Linear { .. } => Some(0.0),
        }
    }

    pub fn has_second_derivative(&self) -> bool {
        self.d2(0.0).is_some()
    }

    /// Levels where the payoff or its derivatives jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Payoff::Call { strike } | Payoff::Put { strike } => vec![strike],
            Payoff::SmoothedCall { strike, width } => vec![strike - 0.5 * width, strike + 0.5 * width],
            Payoff::Constant(_) | Payoff::Linear { .. } => vec![],
        }
    }
}

/// Short rate `r(t)`.
#[derive(Clone)]
pub enum Rate {
    Constant(f64),
    Curve(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Constant(r) => write!(f, "Rate::Constant({r})"),
            Rate::Curve(_) => write!(f, "Rate::Curve(..)"),
        }
    }
}

impl Rate {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Rate::Constant(r) => *r,
            Rate::Curve(r) => r(t),
        }
    }

    /// `∫_s^t r(u) du` (Simpson's rule for curves).
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        match self {
            Rate::Constant(r) => r * (t - s),
            Rate::Curve(r) => {
                const PANELS: usize = 256;
                let h = (t - s) / PANELS as f64;
                let mut acc = r(s) + r(t);
                for i in 1..PANELS {
                    acc += if i % 2 == 1 { 4.0 } else { 2.0 } * r(s + i as f64 * h);
                }
                acc * h / 3.0
            }
        }
    }

    /// `exp(-∫_t^T r)`.
    pub fn discount(&self, t: f64, maturity: f64) -> f64 {
        (-self.integral(t, maturity)).exp()
    }
}

/// Level-volatility asset model with a European payoff.
#[derive(Debug, Clone)]
pub struct LevelVolModel {
    pub sigma: Volatility,
    pub rate: Rate,
    pub x0: f64,
    pub maturity: f64,
    pub payoff: Payoff,
}

impl LevelVolModel {
    /// `a''_xx = 2 sigma'_x + x sigma''_xx`.
    pub fn l_coefficient(&self, x: f64) -> f64 {
        let (_, s1, s2) = self.sigma.eval(x);
        2.0 * s1 + x * s2
    }

    /// Constant volatility and constant rate: the lognormal closed forms
    /// apply.
    pub fn constant_parameters(&self) -> Option<(f64, f64)> {
        match (&self.sigma, &self.rate) {
            (Volatility::Constant(s), Rate::Constant(r)) => Some((*s, *r)),
            _ => None,
        }
    }

    /// `a(x,t) = x sigma(x,t)`, `b(x,t) = x r(t)`.
    pub fn sde(&self) -> SdeSpec {
        let (v1, v2, v3, v4) = (self.sigma.clone(), self.sigma.clone(), self.sigma.clone(), self.rate.clone());
        let r2 = self.rate.clone();
        let mut spec = SdeSpec::from_fns(
            self.x0,
            move |x, _| x * v1.eval(x).0,
            move |x, t| x * v4.at(t),
            move |x, _| {
                let (s, s1, _) = v2.eval(x);
                s + x * s1
            },
            move |_, t| r2.at(t),
            move |x, _| {
                let (_, s1, s2) = v3.eval(x);
                2.0 * s1 + x * s2
            },
        )
        .with_horizon(self.maturity);
        if let Volatility::Constant(s) = self.sigma {
            let (x0, rate) = (self.x0, self.rate.clone());
            spec = spec.with_exact(move |t, b| x0 * (rate.integral(0.0, t) - 0.5 * s * s * t + s * b).exp());
        }
        spec
    }

    fn validate(&self, spec: &SdeSpec) -> Result<()> {
        if !(self.x0 > 0.0) {
            return Err(Error::Model(format!("x0 must be positive, got {}", self.x0)));
        }
        if !(self.maturity > 0.0) {
            return Err(Error::Model(format!("maturity must be positive, got {}", self.maturity)));
        }
        for (x, _) in spec.probe_grid() {
            let (s, s1, s2) = self.sigma.eval(x);
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Model(format!("sigma({x}) = {s} is not strictly positive")));
            }
            let h = 1e-5 * x.abs().max(1.0);
            let (up, dn) = (self.sigma.eval(x + h), self.sigma.eval(x - h));
            compare("sigma'_x", &[x], s1, (up.0 - dn.0) / (2.0 * h), 1e-5)?;
            compare("sigma''_xx", &[x], s2, (up.1 - dn.1) / (2.0 * h), 1e-5)?;
        }
        spec.validate()
    }
}

/// A validated model with its induced SDE and the adapted weight
/// `alpha = (sigma + x sigma'_x)^2 / 2`.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: LevelVolModel,
    pub sde: SdeSpec,
    pub weight: WeightProcess,
}

pub fn build_model(params: &ModelParams) -> Result<ModelBundle> {
    let model = LevelVolModel {
        sigma: Volatility::from_spec(&params.sigma, params.x0)?,
        rate: Rate::Constant(params.r),
        x0: params.x0,
        maturity: params.maturity,
        payoff: Payoff::from_spec(&params.payoff)?,
    };
    let sde = model.sde();
    model.validate(&sde)?;
    Ok(ModelBundle {
        model,
        sde,
        weight: WeightProcess::adapted(),
    })
}
