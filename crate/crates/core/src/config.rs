//! The JSON experiment configuration shared by every command.
//!
//! Every section has defaults, unknown keys are rejected, and all component
//! invariants are checked by [`ExperimentConfig::from_json`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::SamplingPlan;
use crate::schedule::NoiseSchedule;
use crate::timenoise::TimeNoiseParams;
use crate::train::{MotionConditioning, TimeSampler, TrainConfig, TrainMode};
use crate::world::{GaussianWorld, LeakyDenoiser};

/// Training settings apart from the mode (chosen per run) and the seed
/// (the experiment seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub t_sampler: TimeSampler,
    pub hidden: usize,
    pub time_features: usize,
    pub motion: MotionConditioning,
    pub heldout_size: usize,
    pub sigma_data: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainSettings {
            steps: c.steps,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            t_sampler: c.t_sampler,
            hidden: c.hidden,
            time_features: c.time_features,
            motion: c.motion,
            heldout_size: c.heldout_size,
            sigma_data: c.sigma_data,
        }
    }
}

impl TrainSettings {
    pub fn with_mode(&self, mode: TrainMode, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            t_sampler: self.t_sampler,
            hidden: self.hidden,
            time_features: self.time_features,
            motion: self.motion,
            heldout_size: self.heldout_size,
            sigma_data: self.sigma_data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakParams {
    pub lambda_max: f64,
    pub power: f64,
}

impl Default for LeakParams {
    fn default() -> Self {
        LeakParams {
            lambda_max: 0.8,
            power: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsParams {
    pub t_grid: Vec<f64>,
    pub eval_items: usize,
    pub motion_targets: Vec<f64>,
    pub sweep_samples: usize,
    pub ablation_start_times: Vec<f64>,
    pub ablation_samples: usize,
    pub optimality_start_times: Vec<f64>,
}

impl Default for DiagnosticsParams {
    fn default() -> Self {
        DiagnosticsParams {
            t_grid: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0],
            eval_items: crate::diagnostics::MIN_EVAL_ITEMS,
            motion_targets: vec![1.5, 2.0, 3.0, 4.0, 5.0],
            sweep_samples: 1000,
            ablation_start_times: vec![1.0, 0.96, 0.92, 0.88, 0.84, 0.8],
            ablation_samples: 2000,
            optimality_start_times: vec![0.8, 0.9, 0.96],
        }
    }
}

impl DiagnosticsParams {
    fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: &[f64]| {
            if v.is_empty() || v.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
                Err(Error::config(format!("{name} must be a nonempty list in (0, 1]")))
            } else {
                Ok(())
            }
        };
        unit("t_grid", &self.t_grid)?;
        unit("ablation_start_times", &self.ablation_start_times)?;
        unit("optimality_start_times", &self.optimality_start_times)?;
        if self.eval_items < crate::diagnostics::MIN_EVAL_ITEMS {
            return Err(Error::config(format!(
                "eval_items must be >= {}, got {}",
                crate::diagnostics::MIN_EVAL_ITEMS,
                self.eval_items
            )));
        }
        if self.motion_targets.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::config("motion targets must be > 0"));
        }
        if self.sweep_samples < 2 || self.ablation_samples < 2 {
            return Err(Error::config("sweep and ablation need at least 2 samples"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: GaussianWorld,
    pub schedule: NoiseSchedule,
    pub timenoise: TimeNoiseParams,
    /// Conditioning noise of the fixed-level mode; `0.1 beta_m` when absent.
    pub cdm_beta: Option<f64>,
    pub train: TrainSettings,
    pub sampler: SamplingPlan,
    pub leaky: LeakParams,
    pub diagnostics: DiagnosticsParams,
    pub seed: u64,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: GaussianWorld::default(),
            schedule: NoiseSchedule::vp_default(),
            timenoise: TimeNoiseParams::additive(2.0, 5.0).expect("valid defaults"),
            cdm_beta: None,
            train: TrainSettings::default(),
            sampler: SamplingPlan::default(),
            leaky: LeakParams::default(),
            diagnostics: DiagnosticsParams::default(),
            seed: 0,
            output_dir: "out".into(),
        }
    }
}

/// Training-mode names accepted on the command line.
pub const MODE_NAMES: [&str; 4] = ["naive", "timenoise", "cdm", "constant"];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.schedule.validate()?;
        self.timenoise.validate()?;
        if let Some(beta) = self.cdm_beta {
            if !(beta.is_finite() && beta >= 0.0) {
                return Err(Error::config(format!("cdm_beta must be >= 0, got {beta}")));
            }
        }
        let train = self.train.with_mode(TrainMode::Naive, self.seed);
        train.validate()?;
        if train.steps == 0 {
            return Err(Error::config("train.steps must be >= 1"));
        }
        if !(self.sampler.start_time > 0.0 && self.sampler.start_time <= 1.0) || self.sampler.steps == 0 {
            return Err(Error::config("sampler needs start_time in (0, 1] and steps >= 1"));
        }
        self.sampler.inference_condition.validate()?;
        LeakyDenoiser::new(&self.world, self.leaky.lambda_max, self.leaky.power)?;
        self.diagnostics.validate()
    }

    pub fn cdm_beta(&self) -> f64 {
        self.cdm_beta.unwrap_or(0.1 * self.timenoise.beta_m)
    }

    pub fn train_mode(&self, name: &str) -> Result<TrainMode> {
        Ok(match name {
            "naive" => TrainMode::Naive,
            "timenoise" => TrainMode::TimeNoise { params: self.timenoise },
            "cdm" => TrainMode::CdmFixed { beta: self.cdm_beta() },
            "constant" => TrainMode::ConstantBeta { params: self.timenoise },
            other => {
                return Err(Error::config(format!(
                    "unknown training mode {other:?}; expected one of {MODE_NAMES:?}"
                )))
            }
        })
    }

    pub fn train_config(&self, mode: &str) -> Result<TrainConfig> {
        Ok(self.train.with_mode(self.train_mode(mode)?, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn round_trip_is_identical() {
        let c = ExperimentConfig {
            schedule: NoiseSchedule::ve_default(),
            cdm_beta: Some(0.1 + 0.2),
            world: GaussianWorld {
                s_w: 1.0 / 3.0,
                ..GaussianWorld::default()
            },
            ..ExperimentConfig::default()
        };
        let text = c.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"wrld": {}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"world": {"frames": 8, "dim": 4, "extra": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"sampler": {"start_time": 1.0, "steps": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"train": {"steps": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"diagnostics": {"eval_items": 10}}"#).is_err());
    }

    #[test]
    fn modes_resolve() {
        let c = ExperimentConfig::default();
        for name in MODE_NAMES {
            assert_eq!(c.train_mode(name).unwrap().name(), name);
        }
        assert_eq!(c.train_mode("cdm").unwrap(), TrainMode::CdmFixed { beta: 0.2 });
        assert!(c.train_mode("fancy").is_err());
    }
}
