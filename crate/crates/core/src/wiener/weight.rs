use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sde_engine::SdeSpec;

/// Default lower bound `k(t)` on the weight.
pub const DEFAULT_FLOOR: f64 = 1e-8;

type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Deterministic(TimeFn),
    /// `alpha_t = a'_x(X_t, t)^2 / 2`
    Adapted,
}

/// Weight `alpha(omega, t)` of the Ornstein-Uhlenbeck structure on Wiener
/// space, bounded below by a deterministic floor `k(t) > 0`.
#[derive(Clone)]
pub struct WeightProcess {
    kind: Kind,
    floor: TimeFn,
    cutoff: Option<f64>,
}

impl fmt::Debug for WeightProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            Kind::Deterministic(_) => "deterministic",
            Kind::Adapted => "adapted",
        };
        f.debug_struct("WeightProcess")
            .field("kind", &kind)
            .field("cutoff", &self.cutoff)
            .finish_non_exhaustive()
    }
}

impl WeightProcess {
    pub fn deterministic<F: Fn(f64) -> f64 + Send + Sync + 'static>(alpha: F) -> Self {
        WeightProcess {
            kind: Kind::Deterministic(Arc::new(alpha)),
            floor: Arc::new(|_| DEFAULT_FLOOR),
            cutoff: None,
        }
    }

    pub fn constant(alpha: f64) -> Self {
        WeightProcess::deterministic(move |_| alpha)
    }

    /// The weight under which the sharp reproduces the Euler error law.
    pub fn adapted() -> Self {
        WeightProcess {
            kind: Kind::Adapted,
            floor: Arc::new(|_| DEFAULT_FLOOR),
            cutoff: None,
        }
    }

    pub fn with_floor<F: Fn(f64) -> f64 + Send + Sync + 'static>(mut self, floor: F) -> Self {
        self.floor = Arc::new(floor);
        self
    }

    /// `alpha(t) 1{t <= s}`: the weight restricted to `[0, s]`.
    pub fn truncated_at(mut self, s: f64) -> Self {
        self.cutoff = Some(self.cutoff.map_or(s, |c| c.min(s)));
        self
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, Kind::Deterministic(_))
    }

    fn raw(&self, spec: &SdeSpec, x: f64, t: f64) -> f64 {
        match &self.kind {
            Kind::Deterministic(alpha) => alpha(t),
            Kind::Adapted => {
                let ax = spec.a_x(x, t);
                0.5 * ax * ax
            }
        }
    }

    fn checked(&self, alpha: f64, t: f64) -> Result<f64> {
        let floor = (self.floor)(t);
        if !(alpha >= floor) || !alpha.is_finite() {
            return Err(Error::WeightFloor { time: t, alpha, floor });
        }
        Ok(match self.cutoff {
            Some(c) if t > c => 0.0,
            _ => alpha,
        })
    }

    /// Weight at state `x` and time `t`; fails when the untruncated weight
    /// drops below the floor.
    pub fn eval(&self, spec: &SdeSpec, x: f64, t: f64) -> Result<f64> {
        self.checked(self.raw(spec, x, t), t)
    }

    /// Value of a deterministic weight at `t`.
    pub fn eval_deterministic(&self, t: f64) -> Result<f64> {
        match &self.kind {
            Kind::Deterministic(alpha) => self.checked(alpha(t), t),
            Kind::Adapted => Err(Error::Unsupported(
                "adapted weight has no path-free value".into(),
            )),
        }
    }
}
