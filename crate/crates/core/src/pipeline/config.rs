//! Pipeline configuration with JSON-friendly defaults.

use serde::{Deserialize, Serialize};

use crate::imgproc::JitterParams;
use crate::regularizers::{ThresholdConfig, TripletConfig};
use crate::segmodel::ModelConfig;
use crate::tensorcore::OptimizerConfig;
use crate::{Error, Result};

/// Which pipeline components are active.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Toggles {
    pub use_gpa: bool,
    pub use_ctl: bool,
    pub use_tcr: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            use_gpa: true,
            use_ctl: true,
            use_tcr: true,
        }
    }
}

/// Weights of the three loss terms; at the defaults the total is the plain
/// sum of segmentation, triplet and consistency losses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub seg: f64,
    pub triplet: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            seg: 1.0,
            triplet: 1.0,
            consistency: 1.0,
        }
    }
}

/// All pipeline scalars.
///
/// `k_steps` counts every outer step including the coarse one, so
/// `k_steps = 1` trains the coarse-alignment model only. The optimizer
/// schedules restart each step: `total_iters` is overridden with
/// `iters_per_step` at use, and momentum buffers start fresh per step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub k_steps: usize,
    pub iters_per_step: usize,
    pub seed: u64,
    pub beta: f64,
    pub thresholds: ThresholdConfig,
    pub triplet: TripletConfig,
    pub jitter: JitterParams,
    pub model: ModelConfig,
    pub step0_optimizer: OptimizerConfig,
    pub finetune_optimizer: OptimizerConfig,
    pub toggles: Toggles,
    pub loss_weights: LossWeights,
}

impl Default for TrainingConfig {
    /// Desk-scale defaults: K=3 outer steps of U=2000 iterations. The
    /// finetune learning rate is half the coarse-step rate.
    fn default() -> Self {
        let iters = 2000;
        Self {
            k_steps: 3,
            iters_per_step: iters,
            seed: 42,
            beta: crate::imgproc::DEFAULT_BETA,
            thresholds: ThresholdConfig::default(),
            triplet: TripletConfig::default(),
            jitter: JitterParams::default(),
            model: ModelConfig::default(),
            step0_optimizer: OptimizerConfig {
                base_lr: 5e-4,
                momentum: 0.9,
                weight_decay: 1e-4,
                poly_power: 0.9,
                total_iters: iters,
            },
            finetune_optimizer: OptimizerConfig {
                base_lr: 2.5e-4,
                momentum: 0.9,
                weight_decay: 1e-4,
                poly_power: 0.9,
                total_iters: iters,
            },
            toggles: Toggles::default(),
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_steps == 0 {
            return Err(Error::Config("k_steps must be >= 1".into()));
        }
        if self.iters_per_step == 0 {
            return Err(Error::Config("iters_per_step must be >= 1".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        self.thresholds.validate()?;
        self.triplet.validate()?;
        self.model.validate()?;
        self.step0_optimizer.validate()?;
        self.finetune_optimizer.validate()?;
        Ok(())
    }

    /// Step-0 schedule, restarted over this run's iteration count.
    pub(crate) fn step0_schedule(&self) -> OptimizerConfig {
        OptimizerConfig {
            total_iters: self.iters_per_step,
            ..self.step0_optimizer
        }
    }

    /// Finetune schedule, restarted per step.
    pub(crate) fn finetune_schedule(&self) -> OptimizerConfig {
        OptimizerConfig {
            total_iters: self.iters_per_step,
            ..self.finetune_optimizer
        }
    }
}

/// A full run description: data manifests plus training scalars. This is
/// the JSON config file the CLI consumes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub source_manifest: String,
    pub target_train_manifest: String,
    pub target_eval_manifest: String,
    /// Default output directory; CLI flags and the environment override it.
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("read config {path:?}"), e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("parse config: {e}")))?;
        cfg.training.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_partial_json_fills_in() {
        TrainingConfig::default().validate().unwrap();
        let cfg: TrainingConfig = serde_json::from_str(r#"{"k_steps": 2, "seed": 7}"#).unwrap();
        assert_eq!(cfg.k_steps, 2);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.iters_per_step, 2000);
        assert_eq!(cfg.thresholds.p_h, 0.9);
        assert_eq!(cfg.thresholds.p_percent, 10.0);
        assert_eq!(cfg.triplet.margin, 0.2);
        assert_eq!(cfg.beta, 0.01);
        assert_eq!(cfg.step0_optimizer.momentum, 0.9);
        assert_eq!(cfg.step0_optimizer.base_lr * 0.5, cfg.finetune_optimizer.base_lr);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = TrainingConfig::default();
        cfg.k_steps = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainingConfig::default();
        cfg.thresholds.p_h = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainingConfig::default();
        cfg.triplet.margin = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_serialization_is_stable() {
        let cfg = TrainingConfig::default();
        let a = serde_json::to_string_pretty(&cfg).unwrap();
        let b = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(a, b);
        let back: TrainingConfig = serde_json::from_str(&a).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&cfg).unwrap());
    }
}
