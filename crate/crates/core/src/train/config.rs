use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    pub epochs: usize,
    /// Weight of the mean clamped-L1 data term.
    pub w_dec: f64,
    pub lambda_reg: f64,
    pub delta: f64,
    pub lr_decoder: f64,
    pub lr_codes: f64,
    pub code_sigma: f64,
    /// Samples of each shape used per step; an epoch covers all of them.
    pub batch_per_shape: usize,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            epochs: 500,
            w_dec: 2.0,
            lambda_reg: 1e-4,
            delta: 0.1,
            lr_decoder: 5e-4,
            lr_codes: 1e-3,
            code_sigma: 0.01,
            batch_per_shape: 16384,
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_decoder > 0.0 && self.lr_codes > 0.0) {
            return Err(arg_err!("stage 1 learning rates must be positive"));
        }
        if self.batch_per_shape == 0 || !(self.delta > 0.0) || !(self.code_sigma >= 0.0) {
            return Err(arg_err!("stage 1 batch, clamp and code sigma must be positive"));
        }
        if self.w_dec < 0.0 || self.lambda_reg < 0.0 {
            return Err(arg_err!("stage 1 weights must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    pub epochs: usize,
    pub w_dec: f64,
    pub w_gan: f64,
    pub w_z: f64,
    /// Uniform points in every discriminator sample set; the scan points
    /// are added to them.
    pub dis_uniform: usize,
    /// Ground-truth samples per shape used for the data term each step.
    pub gt_samples: usize,
    pub lr_encoder: f64,
    pub lr_discriminator: f64,
    /// Shapes per step; at least 2 for the encoder's batch norm.
    pub batch: usize,
    pub delta: f64,
    /// Train the discriminator and use its term; off for the encoder-only ablation.
    pub adversarial: bool,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            epochs: 200,
            w_dec: 2.0,
            w_gan: 1.0,
            w_z: 1.0,
            dis_uniform: 4096,
            gt_samples: 1024,
            lr_encoder: 1e-4,
            lr_discriminator: 1e-4,
            batch: 8,
            delta: 0.1,
            adversarial: true,
            seed: 0,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        if [self.w_dec, self.w_gan, self.w_z].iter().any(|w| !(*w >= 0.0)) {
            return Err(arg_err!("stage 2 weights must be non-negative"));
        }
        if self.dis_uniform < 2 || self.batch < 2 || self.gt_samples == 0 {
            return Err(arg_err!("stage 2 needs at least 2 discriminator points, 2 shapes per batch and 1 sample"));
        }
        if !(self.lr_encoder > 0.0 && self.lr_discriminator > 0.0) {
            return Err(arg_err!("stage 2 learning rates must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub w_data: f64,
    pub w_anchor: f64,
    pub w_gan: f64,
    pub dis_uniform: usize,
    pub lr: f64,
    pub batch: usize,
    pub delta: f64,
    pub use_discriminator: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            w_data: 2.0,
            w_anchor: 1.0,
            w_gan: 1.0,
            dis_uniform: 4096,
            lr: 1e-4,
            batch: 8,
            delta: 0.1,
            use_discriminator: true,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.w_data, self.w_anchor, self.w_gan].iter().any(|w| !(*w >= 0.0)) {
            return Err(arg_err!("fine-tuning weights must be non-negative"));
        }
        if self.batch == 0 || !(self.lr > 0.0) || self.dis_uniform < 2 {
            return Err(arg_err!("fine-tuning batch, rate and point count must be positive"));
        }
        Ok(())
    }
}
