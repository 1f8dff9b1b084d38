use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::sde_engine::{stream_rng, Channel};
use crate::stats::{map_paths, mean_stderr, Estimate};

use super::model::{ModelBundle, Volatility};

/// Largest inner ensemble addressable by the per-path random streams.
pub const MAX_INNER_PATHS: usize = 1 << 20;
pub const DEFAULT_INNER_PATHS: usize = 1000;
pub const DEFAULT_INNER_STEPS: usize = 64;

const Z_RANGE: f64 = 12.0;
const GL_DEGREE: usize = 64;

/// How conditional expectations given `F_t` are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConditionalMethod {
    /// Lognormal quadrature; constant volatility and rate only.
    ClosedForm,
    /// Re-simulation from `(t, X_t, M_t)`.
    NestedMc {
        #[serde(default = "default_inner_paths")]
        inner_paths: usize,
        #[serde(default = "default_inner_steps")]
        inner_steps: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_inner_paths() -> usize {
    DEFAULT_INNER_PATHS
}

fn default_inner_steps() -> usize {
    DEFAULT_INNER_STEPS
}

impl ConditionalMethod {
    pub fn nested(seed: u64) -> Self {
        ConditionalMethod::NestedMc {
            inner_paths: DEFAULT_INNER_PATHS,
            inner_steps: DEFAULT_INNER_STEPS,
            seed,
        }
    }

    /// Closed form when the model allows it, nested MC otherwise.
    pub fn preferred(bundle: &ModelBundle, seed: u64) -> Self {
        if bundle.model.constant_parameters().is_some() {
            ConditionalMethod::ClosedForm
        } else {
            ConditionalMethod::nested(seed)
        }
    }
}

/// Conditional expectations at `(t, X_t = x, M_t = m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments {
    /// `exp(-∫_t^T r)`
    pub discount: f64,
    /// `E[f(X_T) | F_t]`
    pub payoff: Estimate,
    /// `E[f'(X_T) M_T / M_t | F_t]`
    pub delta: Estimate,
    /// `E[(M_T / M_t)(f''(X_T) M_T + f'(X_T) Z_t^T) | F_t]`; `None` when the
    /// payoff has no second derivative.
    pub gamma: Option<Estimate>,
}

fn exact(mean: f64) -> Estimate {
    Estimate {
        mean,
        stderr: 0.0,
        n_samples: 0,
        seed: 0,
    }
}

pub fn conditional_moments(
    bundle: &ModelBundle,
    t: f64,
    x: f64,
    m: f64,
    method: ConditionalMethod,
    outer: u64,
) -> Result<ConditionalMoments> {
    let model = &bundle.model;
    let horizon = model.maturity;
    if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, {horizon}]")));
    }
    if !(x > 0.0 && m > 0.0) {
        return Err(Error::InvalidArgument(format!("conditioning state X = {x}, M = {m} must be positive")));
    }
    let t = t.min(horizon);
    let discount = model.rate.discount(t, horizon);
    match method {
        ConditionalMethod::ClosedForm => closed_form(bundle, t, x, m, discount),
        ConditionalMethod::NestedMc {
            inner_paths,
            inner_steps,
            seed,
        } => nested(bundle, t, x, m, discount, inner_paths, inner_steps, seed, outer),
    }
}

fn closed_form(bundle: &ModelBundle, t: f64, x: f64, m: f64, discount: f64) -> Result<ConditionalMoments> {
    let model = &bundle.model;
    let (sigma, r) = model.constant_parameters().ok_or_else(|| {
        Error::Unsupported("closed-form conditional expectations need constant volatility and rate".into())
    })?;
    let f = model.payoff;
    let smooth = f.has_second_derivative();
    let tau = model.maturity - t;
    if tau <= 0.0 {
        return Ok(ConditionalMoments {
            discount,
            payoff: exact(f.value(x)),
            delta: exact(f.d1(x)),
            gamma: f.d2(x).map(|d2| exact(d2 * m)),
        });
    }
    let drift = (r - 0.5 * sigma * sigma) * tau;
    let vol = sigma * tau.sqrt();
    let mut cuts = vec![-Z_RANGE];
    cuts.extend(
        f.breakpoints()
            .into_iter()
            .filter(|&k| k > 0.0)
            .map(|k| ((k / x).ln() - drift) / vol)
            .filter(|z| z.abs() < Z_RANGE),
    );
    cuts.push(Z_RANGE);
    cuts.sort_by(f64::total_cmp);
    let rule = GaussLegendre::new(NonZeroUsize::new(GL_DEGREE).expect("nonzero degree"));
    let norm = (2.0 * PI).sqrt();
    let integrate = |g: &dyn Fn(f64, f64) -> f64| -> f64 {
        cuts.windows(2)
            .map(|w| {
                rule.integrate(w[0], w[1], |z| {
                    let ratio = (drift + vol * z).exp();
                    g(x * ratio, ratio) * (-0.5 * z * z).exp() / norm
                })
            })
            .sum()
    };
    let payoff = integrate(&|xt, _| f.value(xt));
    let delta = integrate(&|xt, ratio| f.d1(xt) * ratio);
    // for constant sigma M_T / M_t = X_T / X_t and Z vanishes
    let gamma = smooth.then(|| integrate(&|xt, ratio| f.d2(xt).unwrap_or(0.0) * m * ratio * ratio));
    Ok(ConditionalMoments {
        discount,
        payoff: exact(ensure_finite(payoff, "E[f(X_T)]")?),
        delta: exact(ensure_finite(delta, "E[f'(X_T) M_T/M_t]")?),
        gamma: gamma.map(|g| ensure_finite(g, "gamma weight").map(exact)).transpose()?,
    })
}

#[allow(clippy::too_many_arguments)]
fn nested(
    bundle: &ModelBundle,
    t: f64,
    x: f64,
    m: f64,
    discount: f64,
    inner_paths: usize,
    inner_steps: usize,
    seed: u64,
    outer: u64,
) -> Result<ConditionalMoments> {
    if inner_paths > MAX_INNER_PATHS {
        return Err(Error::InvalidArgument(format!(
            "nested budget of {inner_paths} inner paths exceeds {MAX_INNER_PATHS}"
        )));
    }
    if inner_paths < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: inner_paths,
        });
    }
    if inner_steps == 0 {
        return Err(Error::InvalidArgument("nested MC needs at least one inner step".into()));
    }
    let model = &bundle.model;
    let sde = &bundle.sde;
    let f = model.payoff;
    let smooth = f.has_second_derivative();
    let tau = model.maturity - t;
    let dt = tau / inner_steps as f64;
    let sqrt_dt = dt.sqrt();
    let samples = map_paths(inner_paths, |i| {
        let mut rng = stream_rng(seed, outer, i, Channel::Inner);
        let (mut xs, mut log_ratio, mut z) = (x, 0.0f64, 0.0f64);
        for k in 0..inner_steps {
            let u = t + k as f64 * dt;
            let z_k: f64 = StandardNormal.sample(&mut rng);
            let db = sqrt_dt * z_k;
            let ax = sde.a_x(xs, u);
            let l = model.l_coefficient(xs);
            let alpha = bundle.weight.eval(sde, xs, u)?;
            z += l * db - alpha.sqrt() * l * m * log_ratio.exp() * dt;
            log_ratio += ax * db - 0.5 * ax * ax * dt + sde.b_x(xs, u) * dt;
            xs = match model.sigma {
                Volatility::Constant(s) => {
                    let r = model.rate.integral(u, u + dt);
                    xs * (r - 0.5 * s * s * dt + s * db).exp()
                }
                _ => xs + sde.a(xs, u) * db + sde.b(xs, u) * dt,
            };
            if !(xs > 0.0 && xs.is_finite()) {
                return Err(Error::BlowUp {
                    step: k + 1,
                    time: u + dt,
                });
            }
        }
        let ratio = log_ratio.exp();
        let g = f.d2(xs).map(|d2| ratio * (d2 * m * ratio + f.d1(xs) * z));
        Ok((f.value(xs), f.d1(xs) * ratio, g.unwrap_or(0.0)))
    })?;
    let payoff: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let delta: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let gamma: Vec<f64> = samples.iter().map(|s| s.2).collect();
    Ok(ConditionalMoments {
        discount,
        payoff: mean_stderr(&payoff)?.with_seed(seed),
        delta: mean_stderr(&delta)?.with_seed(seed),
        gamma: if smooth {
            Some(mean_stderr(&gamma)?.with_seed(seed))
        } else {
            None
        },
    })
}
