use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finance::{build_model, ConditionalMethod, ModelBundle, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    EulerVsLimit,
    Rootzen,
    GammaCheck,
    FinanceReport,
    AsymptoticPrinciple,
    Donsker,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::EulerVsLimit => "euler-vs-limit",
            ExperimentKind::Rootzen => "rootzen",
            ExperimentKind::GammaCheck => "gamma-check",
            ExperimentKind::FinanceReport => "finance-report",
            ExperimentKind::AsymptoticPrinciple => "asymptotic-principle",
            ExperimentKind::Donsker => "donsker",
        }
    }

    /// Experiments comparing a coarse scheme with a fine-grid limit object.
    fn needs_refinement(self) -> bool {
        matches!(
            self,
            ExperimentKind::EulerVsLimit | ExperimentKind::AsymptoticPrinciple | ExperimentKind::Rootzen
        )
    }
}

/// Integrand `f(x, s)` of the Rootzén experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IntegrandKind {
    Constant { value: f64 },
    Identity,
    Sine,
}

/// Path functional of the asymptotic-principle experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FunctionalKind {
    /// `X_T`
    State,
    /// `f(X_T)` for the smoothed call of the model payoff.
    SmoothedCall {
        #[serde(rename = "K")]
        strike: f64,
        #[serde(default)]
        smoothing: Option<f64>,
    },
    /// `∫_0^T X dX`
    SelfIntegral,
    /// `∫_0^T h dB`; not a functional of `X`, rejected at run time.
    BrownianIntegral,
}

/// Experiment-specific knobs; unset fields take documented defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOptions {
    /// `B̂` replicas per fixed `B` path (default 256).
    pub replicas: Option<usize>,
    /// Number of fixed `B` paths for pathwise checks (default 100 for
    /// gamma-check, 20 for finance-report).
    pub fixed_paths: Option<usize>,
    pub integrand: Option<IntegrandKind>,
    pub functional: Option<FunctionalKind>,
    pub conditional: Option<ConditionalMethod>,
    /// Brownian grid size of the Donsker comparison (default 2^14).
    pub grid_points: Option<usize>,
    /// Path index written to the finance CSV (default 0).
    pub sample_path: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: Option<ModelParams>,
    pub n: usize,
    #[serde(default = "default_refine")]
    pub refine: usize,
    pub n_paths: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub options: ExperimentOptions,
}

fn default_refine() -> usize {
    64
}

pub(crate) const MIN_N: usize = 16;
pub(crate) const MIN_REFINE: usize = 16;
pub(crate) const MIN_PATHS: usize = 1000;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Model parameters, defaulting to the lognormal call benchmark
    /// (`sigma = 0.2`, `r = 0.05`, `x0 = K = 100`, `T = 1`).
    pub fn model_params(&self) -> ModelParams {
        self.model
            .clone()
            .unwrap_or_else(|| ModelParams::lognormal_call(0.2, 0.05, 100.0, 100.0))
    }

    pub fn bundle(&self) -> Result<ModelBundle> {
        build_model(&self.model_params())
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required for assertion runs (set \"seed\" or pass --seed)".into()))
    }

    /// Checks the budget invariants, the seed and the model.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if self.n < MIN_N {
            return Err(Error::Config(format!("n must be >= {MIN_N}, got {}", self.n)));
        }
        if self.experiment.needs_refinement() && self.refine < MIN_REFINE {
            return Err(Error::Config(format!(
                "refine must be >= {MIN_REFINE} for {}, got {}",
                self.experiment.name(),
                self.refine
            )));
        }
        if self.refine == 0 {
            return Err(Error::Config("refine must be positive".into()));
        }
        if self.n_paths < MIN_PATHS {
            return Err(Error::Config(format!("n_paths must be >= {MIN_PATHS}, got {}", self.n_paths)));
        }
        if let Some(r) = self.options.replicas {
            if r < 2 {
                return Err(Error::Config(format!("replicas must be >= 2, got {r}")));
            }
        }
        if let Some(0) = self.options.fixed_paths {
            return Err(Error::Config("fixed_paths must be positive".into()));
        }
        if let Some(g) = self.options.grid_points {
            if g < 2 {
                return Err(Error::Config(format!("grid_points must be >= 2, got {g}")));
            }
        }
        self.bundle()?;
        Ok(())
    }
}
