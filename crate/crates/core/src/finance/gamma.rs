use crate::error::{ensure_finite, Error, Result};
use crate::limit_law::exponential_path;
use crate::sde_engine::{reference_fine, DriverPaths, PathGrid, ReferenceMode};
use crate::stats::Estimate;

use super::conditional::{conditional_moments, ConditionalMethod, ConditionalMoments};
use super::model::ModelBundle;

/// Reference path `X`, exponential `M` and weight `alpha` on the fine grid,
/// with the running integral `∫_0^t X^2 sigma^2 alpha / M^2 ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPath {
    pub x: PathGrid,
    pub m: PathGrid,
    pub alpha: Vec<f64>,
    integral: Vec<f64>,
}

pub fn model_path(bundle: &ModelBundle, drv: &DriverPaths, mode: ReferenceMode) -> Result<ModelPath> {
    let x = reference_fine(&bundle.sde, drv, mode)?;
    model_path_along(bundle, x, drv)
}

/// Builds the path quantities along a given fine-grid reference path.
pub fn model_path_along(bundle: &ModelBundle, x: Vec<f64>, drv: &DriverPaths) -> Result<ModelPath> {
    let grid = drv.grid();
    let m = exponential_path(&bundle.sde, &x, drv)?;
    let dt = grid.dt_fine();
    let mut alpha = Vec::with_capacity(x.len());
    let mut integral = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for (j, (&xj, &mj)) in x.iter().zip(&m).enumerate() {
        let t = grid.fine_time(j);
        let a = bundle.weight.eval(&bundle.sde, xj, t)?;
        integral.push(acc);
        let diffusion = bundle.sde.a(xj, t);
        acc += diffusion * diffusion * a / (mj * mj) * dt;
        alpha.push(a);
    }
    let times: Vec<f64> = (0..x.len()).map(|j| grid.fine_time(j)).collect();
    Ok(ModelPath {
        x: PathGrid::new(times.clone(), x)?,
        m: PathGrid::new(times, m)?,
        alpha,
        integral,
    })
}

impl ModelPath {
    fn node(&self, t: f64) -> usize {
        crate::wiener::node_index(&self.x, t)
    }

    /// `(X_t, M_t)` at the last fine node at or before `t`.
    pub fn state_at(&self, t: f64) -> (f64, f64) {
        let k = self.node(t);
        (self.x.values()[k], self.m.values()[k])
    }

    /// `Γ[X_t] = M_t^2 ∫_0^t X_s^2 sigma^2 alpha_s / M_s^2 ds`.
    pub fn gamma_x(&self, t: f64) -> f64 {
        let k = self.node(t);
        let m = self.m.values()[k];
        m * m * self.integral[k]
    }

    /// `Γ[X_s, X_t] = M_s M_t ∫_0^{s∧t} X_u^2 sigma^2 alpha_u / M_u^2 du`.
    pub fn gamma_x_cov(&self, s: f64, t: f64) -> f64 {
        let (ks, kt) = (self.node(s), self.node(t));
        self.m.values()[ks] * self.m.values()[kt] * self.integral[ks.min(kt)]
    }

    /// `t -> Γ[X_t]` on the fine grid.
    pub fn gamma_x_path(&self) -> PathGrid {
        let values = self
            .m
            .values()
            .iter()
            .zip(&self.integral)
            .map(|(m, i)| m * m * i)
            .collect();
        PathGrid::new(self.x.times().to_vec(), values).expect("same grid as X")
    }

    /// The feedback rate `sqrt(Γ[X_t]) / (X_t sigma(X_t))` on the fine grid.
    pub fn feedback_rate(&self, bundle: &ModelBundle) -> Result<PathGrid> {
        let values = self
            .x
            .values()
            .iter()
            .zip(self.m.values().iter().zip(&self.integral))
            .map(|(&x, (&m, &i))| {
                let level = x * bundle.model.sigma.eval(x).0;
                ensure_finite(m * i.sqrt() / level, "feedback rate")
            })
            .collect::<Result<Vec<f64>>>()?;
        PathGrid::new(self.x.times().to_vec(), values)
    }
}

/// Pricing and error quantities at one time along one path, all built from
/// one set of conditional moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinancePoint {
    pub t: f64,
    pub x: f64,
    pub m: f64,
    pub v: Estimate,
    pub h: Estimate,
    pub gamma_x: f64,
    pub gamma_v: f64,
    pub gamma_h: Option<f64>,
    pub feedback: f64,
}

impl FinancePoint {
    pub fn from_moments(bundle: &ModelBundle, path: &ModelPath, t: f64, moments: &ConditionalMoments) -> Result<Self> {
        let (x, m) = path.state_at(t);
        let gx = path.gamma_x(t);
        let d = moments.discount;
        // E[f'(X_T) M_T | F_t]
        let weight = m * moments.delta.mean;
        let gamma_v = d * d * weight * weight * gx / (m * m);
        let gamma_h = moments.gamma.map(|g| d * d * g.mean * g.mean * gx / (m * m));
        let level = x * bundle.model.sigma.eval(x).0;
        Ok(FinancePoint {
            t,
            x,
            m,
            v: moments.payoff.scaled(d),
            h: moments.delta.scaled(d),
            gamma_x: gx,
            gamma_v: ensure_finite(gamma_v, "Γ[V_t]")?,
            gamma_h: gamma_h.map(|g| ensure_finite(g, "Γ[H_t]")).transpose()?,
            feedback: ensure_finite(gx.sqrt() / level, "feedback rate")?,
        })
    }
}

/// `(V_t, H_t)` at `X_t = x`, `M_t = m`.
pub fn price_and_hedge(
    bundle: &ModelBundle,
    t: f64,
    x: f64,
    m: f64,
    method: ConditionalMethod,
    outer: u64,
) -> Result<(Estimate, Estimate)> {
    let c = conditional_moments(bundle, t, x, m, method, outer)?;
    Ok((c.payoff.scaled(c.discount), c.delta.scaled(c.discount)))
}

/// All quantities at time `t` along `path`.
pub fn finance_point(
    bundle: &ModelBundle,
    path: &ModelPath,
    t: f64,
    method: ConditionalMethod,
    outer: u64,
) -> Result<FinancePoint> {
    let (x, m) = path.state_at(t);
    let c = conditional_moments(bundle, t, x, m, method, outer)?;
    FinancePoint::from_moments(bundle, path, t, &c)
}

/// `Γ[V_t] = exp(-2∫_t^T r) E[f'(X_T) M_T | F_t]^2 Γ[X_t] / M_t^2`.
pub fn gamma_v(bundle: &ModelBundle, path: &ModelPath, t: f64, method: ConditionalMethod, outer: u64) -> Result<f64> {
    Ok(finance_point(bundle, path, t, method, outer)?.gamma_v)
}

/// `Γ[V_s, V_t]`, the two-time covariance of the price errors.
pub fn gamma_v_cov(
    bundle: &ModelBundle,
    path: &ModelPath,
    s: f64,
    t: f64,
    method: ConditionalMethod,
    outer: u64,
) -> Result<f64> {
    let weight = |u: f64| -> Result<(f64, f64)> {
        let (x, m) = path.state_at(u);
        let c = conditional_moments(bundle, u, x, m, method, outer)?;
        Ok((c.discount * m * c.delta.mean, m))
    };
    let (ws, ms) = weight(s)?;
    let (wt, mt) = weight(t)?;
    ensure_finite(ws * wt * path.gamma_x_cov(s, t) / (ms * mt), "Γ[V_s, V_t]")
}

/// `Γ[H_t]`; the payoff must have a second derivative.
pub fn gamma_h(bundle: &ModelBundle, path: &ModelPath, t: f64, method: ConditionalMethod, outer: u64) -> Result<f64> {
    finance_point(bundle, path, t, method, outer)?.gamma_h.ok_or_else(|| {
        Error::Unsupported("Γ[H_t] needs a payoff with a second derivative; use a smoothed call".into())
    })
}
