use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    PhaseTransitionAlpha,
    OutlierTradeoff,
    StepSizeStudy,
    JointModel,
    NiprStability,
    TheoremCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        Self::PhaseTransitionAlpha,
        Self::OutlierTradeoff,
        Self::StepSizeStudy,
        Self::JointModel,
        Self::NiprStability,
        Self::TheoremCheck,
    ];

    /// CLI subcommand name.
    pub fn command(self) -> &'static str {
        match self {
            Self::PhaseTransitionAlpha => "phase-alpha",
            Self::OutlierTradeoff => "outliers",
            Self::StepSizeStudy => "stepsize",
            Self::JointModel => "joint",
            Self::NiprStability => "nipr",
            Self::TheoremCheck => "theorem",
        }
    }

    fn config_name(self) -> &'static str {
        match self {
            Self::PhaseTransitionAlpha => "phase-transition-alpha",
            Self::OutlierTradeoff => "outlier-tradeoff",
            Self::StepSizeStudy => "step-size-study",
            Self::JointModel => "joint-model",
            Self::NiprStability => "nipr-stability",
            Self::TheoremCheck => "theorem-check",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.config_name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.config_name() == s || k.command() == s)
            .ok_or_else(|| Error::Parse(format!("unknown experiment '{s}'")))
    }
}

/// Parameters of one experiment run. Every experiment reads the same flat
/// set of keys; each ignores the ones it has no use for.
///
/// Noise levels are relative: the Gaussian noise standard deviation is
/// `gaussian_sigma * ||A x_hat|| / sqrt(m)` and outliers have amplitude
/// `outlier_amplitude * ||A x_hat|| / sqrt(m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub m: usize,
    pub n: usize,
    pub sparsity_grid: Vec<usize>,
    pub alpha_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
    pub outlier_grid: Vec<usize>,
    pub gaussian_sigma: f64,
    pub outlier_amplitude: f64,
    pub trials: usize,
    pub iterations: usize,
    pub centile: f64,
    pub seed: u64,
    pub output_path: String,
    /// Step size where the experiment does not sweep over it.
    pub mu: f64,
    pub success_tol: f64,
    /// Sparsity at which full convergence traces are emitted.
    pub trace_k: usize,
    pub latent_dim: usize,
    pub manifold_curvature: f64,
    pub manifold_scale: f64,
    pub train_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_noise: f64,
    pub lambda: f64,
    pub max_resamples: usize,
    pub eta: f64,
    pub model_error: f64,
}

impl ExperimentSpec {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            m: 150,
            n: 300,
            sparsity_grid: (2..=30).collect(),
            alpha_grid: vec![0.0, 0.3, 0.6],
            mu_grid: vec![0.3, 0.6],
            outlier_grid: vec![0],
            gaussian_sigma: 0.01,
            outlier_amplitude: 100.0,
            trials: 50,
            iterations: 500,
            centile: 0.95,
            seed: 1,
            output_path: format!("{}.csv", kind.command()),
            mu: 1.0,
            success_tol: 0.05,
            trace_k: 9,
            latent_dim: 3,
            manifold_curvature: 0.5,
            manifold_scale: 1.0,
            train_size: 256,
            epochs: 300,
            learning_rate: 0.05,
            batch_size: 32,
            train_noise: 0.1,
            lambda: crate::nipr::DEFAULT_LAMBDA,
            max_resamples: 200,
            eta: 0.0,
            model_error: 0.0,
        };
        match kind {
            ExperimentKind::PhaseTransitionAlpha => Self {
                gaussian_sigma: 0.001,
                mu: 0.8,
                ..base
            },
            ExperimentKind::OutlierTradeoff => Self {
                sparsity_grid: vec![4, 8, 12],
                outlier_grid: vec![0, 1, 2, 3, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 120, 149],
                iterations: 300,
                centile: 0.9,
                mu: 0.8,
                trace_k: 4,
                ..base
            },
            ExperimentKind::StepSizeStudy => Self {
                sparsity_grid: (1..=20).collect(),
                centile: 0.9,
                trace_k: 4,
                ..base
            },
            ExperimentKind::JointModel => Self {
                m: 100,
                n: 100,
                sparsity_grid: vec![2, 5, 8],
                outlier_grid: vec![0, 3, 6],
                gaussian_sigma: 0.0,
                trials: 20,
                iterations: 1000,
                centile: 0.9,
                mu: 0.5,
                trace_k: 5,
                ..base
            },
            ExperimentKind::NiprStability => Self {
                m: 10,
                n: 20,
                sparsity_grid: vec![],
                alpha_grid: vec![],
                mu_grid: vec![],
                gaussian_sigma: 0.01,
                trials: 10,
                iterations: 400,
                centile: 0.5,
                mu: 0.3,
                manifold_scale: 0.2,
                train_noise: 0.06,
                learning_rate: 1.25,
                ..base
            },
            ExperimentKind::TheoremCheck => Self {
                m: 8,
                n: 12,
                sparsity_grid: vec![1],
                alpha_grid: vec![],
                mu_grid: vec![],
                gaussian_sigma: 0.01,
                trials: 5,
                iterations: 60,
                centile: 1.0,
                eta: 0.01,
                model_error: 0.01,
                ..base
            },
        }
    }

    /// Parses a flat key-value file. The `experiment` key is required unless
    /// `kind` is given; missing keys take that experiment's defaults.
    pub fn from_config_str(text: &str, kind: Option<ExperimentKind>) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        if let Some((key, _)) = user.iter().find(|(_, v)| v.is_table()) {
            return Err(Error::Parse(format!("config must be flat, '{key}' is a table")));
        }
        let declared = match user.get("experiment") {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| Error::Parse("'experiment' must be a string".into()))?
                    .parse::<ExperimentKind>()?,
            ),
            None => None,
        };
        let kind = match (declared, kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::InvalidArgument(format!(
                    "config is for experiment '{a}' but '{b}' was requested"
                )))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(Error::Parse("missing 'experiment' key".into())),
        };
        let mut merged = toml::Table::try_from(Self::defaults(kind)).map_err(|e| Error::Parse(e.to_string()))?;
        for (k, v) in user {
            if k != "experiment" {
                merged.insert(k, v);
            }
        }
        let spec: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("spec fields are plain values")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.m == 0 || self.n == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.centile > 0.0 && self.centile <= 1.0) {
            return bad(format!("centile must lie in (0, 1], got {}", self.centile));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu must be positive".into());
        }
        for (name, v) in [
            ("gaussian_sigma", self.gaussian_sigma),
            ("outlier_amplitude", self.outlier_amplitude),
            ("success_tol", self.success_tol),
            ("eta", self.eta),
            ("model_error", self.model_error),
            ("lambda", self.lambda),
            ("train_noise", self.train_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a nonnegative number"));
            }
        }
        if let Some(k) = self.sparsity_grid.iter().find(|k| **k > self.n) {
            return bad(format!("sparsity {k} exceeds N = {}", self.n));
        }
        if self.alpha_grid.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("alpha values must be nonnegative".into());
        }
        if self.mu_grid.iter().any(|mu| !(*mu > 0.0 && mu.is_finite())) {
            return bad("step sizes must be positive".into());
        }
        let need = |grid: &str, empty: bool| {
            if empty {
                bad(format!("{grid} must be nonempty"))
            } else {
                Ok(())
            }
        };
        match self.experiment {
            ExperimentKind::PhaseTransitionAlpha => {
                need("sparsity_grid", self.sparsity_grid.is_empty())?;
                need("alpha_grid", self.alpha_grid.is_empty())?;
            }
            ExperimentKind::OutlierTradeoff | ExperimentKind::JointModel => {
                need("sparsity_grid", self.sparsity_grid.is_empty())?;
                need("outlier_grid", self.outlier_grid.is_empty())?;
                let limit = if self.experiment == ExperimentKind::JointModel {
                    self.m + 1
                } else {
                    self.m
                };
                if let Some(s) = self.outlier_grid.iter().find(|s| **s >= limit) {
                    return bad(format!("outlier count {s} must be below m = {}", self.m));
                }
            }
            ExperimentKind::StepSizeStudy => {
                need("sparsity_grid", self.sparsity_grid.is_empty())?;
                need("mu_grid", self.mu_grid.is_empty())?;
            }
            ExperimentKind::NiprStability => {
                if self.latent_dim == 0 || 2 * self.latent_dim > self.n {
                    return bad("latent_dim must satisfy 0 < 2 latent_dim <= N".into());
                }
                if self.m >= self.n {
                    return bad("compressed sensing needs m < N".into());
                }
                if !(self.manifold_scale > 0.0 && self.manifold_scale.is_finite()) {
                    return bad("manifold_scale must be positive".into());
                }
                if self.train_size == 0 || self.batch_size == 0 || self.epochs == 0 {
                    return bad("training sizes must be positive".into());
                }
            }
            ExperimentKind::TheoremCheck => {
                need("sparsity_grid", self.sparsity_grid.is_empty())?;
                if self.max_resamples == 0 {
                    return bad("max_resamples must be at least 1".into());
                }
            }
        }
        Ok(())
    }
}
