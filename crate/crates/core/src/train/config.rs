use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::AdamConfig;

/// Optimization hyperparameters. One full training view per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: u64,
    pub adam: AdamConfig,
    pub lambda_perc: f64,
    pub lambda_vq: f64,
    /// Commitment weight of the codebook loss.
    pub vq_beta: f64,
    /// Steps trained on raw features before codebooks are created.
    pub vq_warmup: u64,
    /// Codes idle for this many consecutive steps are reseeded; 0 disables.
    pub reseed_window: u32,
    pub pyramid_levels: usize,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// 0 disables periodic validation.
    pub validate_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            iterations: 20_000,
            adam: AdamConfig::default(),
            lambda_perc: 0.05,
            lambda_vq: 1.0,
            vq_beta: 0.25,
            vq_warmup: 500,
            reseed_window: 100,
            pyramid_levels: 4,
            seed: 0,
            checkpoint_every: 0,
            validate_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invariant(format!("train.{name}"), format!("must be finite and >= 0, got {v}")))
            }
        };
        finite_nonneg("learning_rate", self.learning_rate)?;
        finite_nonneg("lambda_perc", self.lambda_perc)?;
        finite_nonneg("lambda_vq", self.lambda_vq)?;
        finite_nonneg("vq_beta", self.vq_beta)?;
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(Error::invariant("train.adam", "betas must lie in [0, 1) and epsilon > 0"));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::invariant("train.pyramid_levels", "must be >= 1"));
        }
        Ok(())
    }
}
