//! Experiment and dataset configuration schemas (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use linsub_core::nonlinear::FeatureMap;
use linsub_core::simulator::GenerationConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Which observation map the nonlinear experiment applies to the latent
/// trajectory.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    /// Standard hidden-subspace observations (`x = V h + z`).
    #[default]
    Linear,
    /// `x = signed-cube-root(M h)` with an invertible mixing `M`;
    /// exactly linearized by a degree-3 monomial dictionary.
    CubeRoot,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Multi-step inverse-model fit with ground-truth verification.
    FitLinear {
        samples: usize,
        /// Trajectory length; defaults to `r`.
        #[serde(default)]
        steps: Option<usize>,
        trials: usize,
        #[serde(default = "default_recovery_tol")]
        recovery_tol: f64,
    },
    /// Noisy one-step fits with the `||P_2||` bound check per sigma.
    FitNoisy {
        samples: usize,
        sigmas: Vec<f64>,
        trials: usize,
        #[serde(default = "default_slack")]
        slack: f64,
    },
    /// Feature-map inverse model, projection extraction, and latent
    /// dynamics on held-out data.
    FitNonlinear {
        samples: usize,
        heldout_samples: usize,
        tau: usize,
        feature_map: FeatureMap,
        #[serde(default)]
        observation: ObservationKind,
    },
    /// Success rate of exact recovery versus sample count.
    SweepSamples {
        grid: Vec<usize>,
        trials: usize,
        #[serde(default)]
        steps: Option<usize>,
        #[serde(default = "default_recovery_tol")]
        recovery_tol: f64,
    },
    /// Recovered-subspace dimension versus trajectory length.
    SweepTau {
        samples: usize,
        tau_max: usize,
        trials: usize,
    },
    /// Diagnostics only: assumption checks on a generated system.
    Verify { samples: usize, steps: usize },
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::FitLinear { .. } => "fit-linear",
            ExperimentKind::FitNoisy { .. } => "fit-noisy",
            ExperimentKind::FitNonlinear { .. } => "fit-nonlinear",
            ExperimentKind::SweepSamples { .. } => "sweep-samples",
            ExperimentKind::SweepTau { .. } => "sweep-tau",
            ExperimentKind::Verify { .. } => "verify",
        }
    }
}

fn default_recovery_tol() -> f64 {
    1e-6
}

fn default_slack() -> f64 {
    0.25
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub master_seed: u64,
    pub generation: GenerationConfig,
    #[serde(flatten)]
    pub kind: ExperimentKind,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.generation
            .validate()
            .map_err(|e| invalid("generation", e.to_string()))?;
        match &self.kind {
            ExperimentKind::FitLinear { samples, trials, recovery_tol, steps } => {
                require_positive("samples", *samples)?;
                require_positive("trials", *trials)?;
                require_positive_f64("recovery_tol", *recovery_tol)?;
                if let Some(s) = steps {
                    require_positive("steps", *s)?;
                }
            }
            ExperimentKind::FitNoisy { samples, sigmas, trials, slack } => {
                require_positive("samples", *samples)?;
                require_positive("trials", *trials)?;
                if sigmas.is_empty() {
                    return Err(invalid("sigmas", "must be non-empty"));
                }
                if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
                    return Err(invalid("sigmas", "entries must be finite and >= 0"));
                }
                if !slack.is_finite() || *slack < 0.0 {
                    return Err(invalid("slack", "must be finite and >= 0"));
                }
            }
            ExperimentKind::FitNonlinear {
                samples,
                heldout_samples,
                tau,
                feature_map,
                observation,
            } => {
                require_positive("samples", *samples)?;
                require_positive("heldout_samples", *heldout_samples)?;
                require_positive("tau", *tau)?;
                let expected = match observation {
                    ObservationKind::Linear => self.generation.d,
                    ObservationKind::CubeRoot => self.generation.d,
                };
                if feature_map.input_dim() != expected {
                    return Err(invalid(
                        "feature_map",
                        format!(
                            "input dimension {} does not match observation dimension {}",
                            feature_map.input_dim(),
                            expected
                        ),
                    ));
                }
            }
            ExperimentKind::SweepSamples { grid, trials, recovery_tol, steps } => {
                if grid.is_empty() || grid.iter().any(|&n| n == 0) {
                    return Err(invalid("grid", "must be non-empty with positive entries"));
                }
                if *trials < 10 {
                    return Err(invalid("trials", "sweep needs at least 10 trials"));
                }
                require_positive_f64("recovery_tol", *recovery_tol)?;
                if let Some(s) = steps {
                    require_positive("steps", *s)?;
                }
            }
            ExperimentKind::SweepTau { samples, tau_max, trials } => {
                require_positive("samples", *samples)?;
                require_positive("tau_max", *tau_max)?;
                require_positive("trials", *trials)?;
            }
            ExperimentKind::Verify { samples, steps } => {
                require_positive("samples", *samples)?;
                require_positive("steps", *steps)?;
            }
        }
        Ok(())
    }
}

fn require_positive(field: &str, value: usize) -> Result<(), ConfigError> {
    if value == 0 {
        return Err(invalid(field, "must be positive"));
    }
    Ok(())
}

fn require_positive_f64(field: &str, value: f64) -> Result<(), ConfigError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(invalid(field, "must be finite and positive"));
    }
    Ok(())
}

/// Config for `dataset-export`: what to generate before writing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub generation: GenerationConfig,
    pub samples: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: DatasetConfig = serde_json::from_str(&text)?;
        config
            .generation
            .validate()
            .map_err(|e| invalid("generation", e.to_string()))?;
        if config.samples == 0 || config.horizon == 0 {
            return Err(invalid("samples/horizon", "must be positive"));
        }
        Ok(config)
    }
}
