//! Level-volatility asset model `dX = X sigma(X,t) dB + X r(t) dt` and the
//! closed-form error formulas for the asset, option price and hedge.
//!
//! With the adapted weight `alpha = a'_x^2 / 2` the error structure carries
//! the asymptotic Euler error, so `Γ[X_t]`, `Γ[V_t]` and `Γ[H_t]` are the
//! variances of the scheme's error on these quantities.

mod conditional;
mod gamma;
mod model;

pub use conditional::{
    conditional_moments, ConditionalMethod, ConditionalMoments, DEFAULT_INNER_PATHS, DEFAULT_INNER_STEPS,
    MAX_INNER_PATHS,
};
pub use gamma::{
    finance_point, gamma_h, gamma_v, gamma_v_cov, model_path, model_path_along, price_and_hedge, FinancePoint,
    ModelPath,
};
pub use model::{build_model, LevelVolModel, ModelBundle, ModelParams, Payoff, PayoffSpec, Rate, SigmaSpec, Spline, Volatility};
