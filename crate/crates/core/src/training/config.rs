use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::fields::{MlpConfig, ModelConfig, ModelDims};

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_g: f64,
    pub w_k: f64,
    pub w_t: f64,
    pub w_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_g: 1.0,
            w_k: 0.5,
            w_t: 0.5,
            w_p: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, w) in [("w_g", self.w_g), ("w_k", self.w_k), ("w_t", self.w_t), ("w_p", self.w_p)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be a nonnegative number, got {w}")));
            }
        }
        Ok(())
    }
}

/// Points drawn per step. SDF and surface budgets are split evenly over the
/// instances of the step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub sdf: usize,
    pub surface: usize,
    pub template: usize,
    /// Instances per step; 0 means all of them.
    #[serde(default)]
    pub instances: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            sdf: 4096,
            surface: 2048,
            template: 1024,
            instances: 0,
        }
    }
}

/// Sample counts drawn per instance when a dataset is prepared.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub sdf: usize,
    pub surface: usize,
    pub held_out_sdf: usize,
    pub held_out_surface: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            sdf: 200_000,
            surface: 100_000,
            held_out_sdf: 20_000,
            held_out_surface: 20_000,
        }
    }
}

fn default_clamp() -> Option<f64> {
    Some(0.1)
}

fn default_code_reg() -> f64 {
    1e-4
}

fn default_code_init_sigma() -> f64 {
    0.01
}

fn default_steps() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub dims: ModelDims,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub batch: BatchConfig,
    #[serde(default)]
    pub samples: SampleConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pose_conditioning: bool,
    /// Truncation of SDF values inside the instance geometry loss; `null`
    /// disables it.
    #[serde(default = "default_clamp")]
    pub clamp: Option<f64>,
    /// Weight of the `‖z‖²` penalty on the codes of each step.
    #[serde(default = "default_code_reg")]
    pub code_reg: f64,
    #[serde(default = "default_code_init_sigma")]
    pub code_init_sigma: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl TrainConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            dims: self.dims,
            mlp: self.mlp,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.weights.validate()?;
        let b = self.batch;
        if b.sdf == 0 || b.surface == 0 || b.template == 0 {
            return Err(TrainError::Config("batch sizes must be positive".into()));
        }
        if let Some(c) = self.clamp {
            if !(c > 0.0) {
                return Err(TrainError::Config(format!("clamp must be positive, got {c}")));
            }
        }
        if !(self.code_reg >= 0.0) || !(self.code_init_sigma >= 0.0) {
            return Err(TrainError::Config("code_reg and code_init_sigma must be nonnegative".into()));
        }
        let o = self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(TrainError::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        let config: Self =
            serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
