use std::fmt;
use std::sync::Arc;

use crate::error::{ensure_finite, Error, Result};
use crate::sde_engine::{DriverPaths, PathGrid};

use super::tangent::{node_at, TangentPath};

/// A real functional of the path together with its sharp rule.
pub trait PathFunctional: Send + Sync {
    /// Value on `path`, where `db[k]` is the `B` increment over
    /// `[t_k, t_{k+1}]` of the same grid.
    fn value(&self, path: &PathGrid, db: &[f64]) -> Result<f64>;

    /// `Y^#` from the tangent process and the drivers that produced it.
    fn sharp(&self, tangent: &TangentPath, drv: &DriverPaths) -> Result<f64>;
}

fn check_increments(path: &PathGrid, db: &[f64]) -> Result<()> {
    if db.len() + 1 != path.len() {
        return Err(Error::Dimension(format!(
            "{} increments for a path of {} nodes",
            db.len(),
            path.len()
        )));
    }
    Ok(())
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `Y = f(X_t)`, `Y^# = f'(X_t) X^#_t`.
#[derive(Clone)]
pub struct PointValue {
    f: ScalarFn,
    f_x: ScalarFn,
    t: f64,
}

impl fmt::Debug for PointValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PointValue").field("t", &self.t).finish_non_exhaustive()
    }
}

impl PointValue {
    pub fn new<F, D>(f: F, f_x: D, t: f64) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        PointValue {
            f: Arc::new(f),
            f_x: Arc::new(f_x),
            t,
        }
    }

    /// `Y = X_t`.
    pub fn state(t: f64) -> Self {
        PointValue::new(|x| x, |_| 1.0, t)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.f_x)(x)
    }
}

impl PathFunctional for PointValue {
    fn value(&self, path: &PathGrid, _db: &[f64]) -> Result<f64> {
        ensure_finite((self.f)(path.values()[node_at(path, self.t)]), "f(X_t)")
    }

    fn sharp(&self, tangent: &TangentPath, _drv: &DriverPaths) -> Result<f64> {
        let j = node_at(&tangent.x, self.t);
        ensure_finite(
            (self.f_x)(tangent.x.values()[j]) * tangent.sharp.values()[j],
            "f'(X_t) X^#_t",
        )
    }
}

/// `Y = ∫ h(s) dB_s` for deterministic `h`; `Y^# = ∫ h sqrt(alpha) dB̂`.
#[derive(Clone)]
pub struct BrownianIntegral {
    h: ScalarFn,
}

impl fmt::Debug for BrownianIntegral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BrownianIntegral").finish_non_exhaustive()
    }
}

impl BrownianIntegral {
    pub fn new<H: Fn(f64) -> f64 + Send + Sync + 'static>(h: H) -> Self {
        BrownianIntegral { h: Arc::new(h) }
    }

    /// `B_t`, i.e. `h = 1{s < t}`.
    pub fn brownian_at(t: f64) -> Self {
        BrownianIntegral::new(move |s| if s < t - 1e-12 { 1.0 } else { 0.0 })
    }

    pub fn h(&self, s: f64) -> f64 {
        (self.h)(s)
    }
}

impl PathFunctional for BrownianIntegral {
    fn value(&self, path: &PathGrid, db: &[f64]) -> Result<f64> {
        check_increments(path, db)?;
        let v = path.times()[..db.len()]
            .iter()
            .zip(db)
            .map(|(&t, d)| self.h(t) * d)
            .sum();
        ensure_finite(v, "∫ h dB")
    }

    fn sharp(&self, tangent: &TangentPath, drv: &DriverPaths) -> Result<f64> {
        let dbhat = drv.dbhat_fine();
        check_increments(&tangent.x, dbhat)?;
        let v = tangent.x.times()[..dbhat.len()]
            .iter()
            .zip(dbhat)
            .zip(&tangent.alpha)
            .map(|((&t, d), a)| self.h(t) * a.sqrt() * d)
            .sum();
        ensure_finite(v, "(∫ h dB)^#")
    }
}

/// `Y = ∫ f(X_s, s) dX_s`;
/// `Y^# = ∫ f'_x(X_s, s) X^#_s dX_s + ∫ f(X_s, s) dX^#_s`.
#[derive(Clone)]
pub struct StochasticIntegral {
    f: Fn2,
    f_x: Fn2,
}

impl fmt::Debug for StochasticIntegral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StochasticIntegral").finish_non_exhaustive()
    }
}

impl StochasticIntegral {
    pub fn new<F, D>(f: F, f_x: D) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        StochasticIntegral {
            f: Arc::new(f),
            f_x: Arc::new(f_x),
        }
    }

    /// `∫ X dX`.
    pub fn self_integral() -> Self {
        StochasticIntegral::new(|x, _| x, |_, _| 1.0)
    }
}

impl PathFunctional for StochasticIntegral {
    fn value(&self, path: &PathGrid, _db: &[f64]) -> Result<f64> {
        let (t, x) = (path.times(), path.values());
        let v: f64 = (0..x.len() - 1)
            .map(|k| (self.f)(x[k], t[k]) * (x[k + 1] - x[k]))
            .sum();
        ensure_finite(v, "∫ f(X) dX")
    }

    fn sharp(&self, tangent: &TangentPath, _drv: &DriverPaths) -> Result<f64> {
        let (t, x, s) = (tangent.x.times(), tangent.x.values(), tangent.sharp.values());
        let v: f64 = (0..x.len() - 1)
            .map(|k| {
                let dx = x[k + 1] - x[k];
                let ds = s[k + 1] - s[k];
                (self.f_x)(x[k], t[k]) * s[k] * dx + (self.f)(x[k], t[k]) * ds
            })
            .sum();
        ensure_finite(v, "(∫ f(X) dX)^#")
    }
}
