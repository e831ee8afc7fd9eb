use serde::{Deserialize, Serialize};

use super::tape::{BatchMoments, Tape, Var};
use super::tensor::Tensor;
use crate::error::{dim_err, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Which sample population a batch belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Real,
    Fake,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Real => "real",
            Branch::Fake => "fake",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; running statistics updated.
    Train,
    /// Batch statistics; running statistics left alone.
    Batch,
    /// Running statistics only.
    Eval,
}

/// Exponential running mean / variance of one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[features]),
            var: Tensor::filled(&[features], 1.0),
        }
    }

    /// `r ← (1 − m)·r + m·batch`, with the unbiased batch variance.
    pub fn update(&mut self, moments: &BatchMoments, momentum: f64) -> Result<()> {
        if moments.mean.len() != self.mean.len() {
            return Err(dim_err!(
                "running stats for {} features, batch has {}",
                self.mean.len(),
                moments.mean.len()
            ));
        }
        let n = moments.count as f64;
        let correction = n / (n - 1.0);
        for (r, b) in self.mean.data_mut().iter_mut().zip(&moments.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.data_mut().iter_mut().zip(&moments.var) {
            *r = (1.0 - momentum) * *r + momentum * b * correction;
        }
        Ok(())
    }

    pub fn apply(
        &mut self,
        tape: &mut Tape,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
    ) -> Result<Var> {
        match mode {
            NormMode::Train => {
                let (y, m) = tape.batch_norm(x, gamma, beta, BN_EPS)?;
                self.update(&m, BN_MOMENTUM)?;
                Ok(y)
            }
            NormMode::Batch => Ok(tape.batch_norm(x, gamma, beta, BN_EPS)?.0),
            NormMode::Eval => tape.normalize(
                x,
                gamma,
                beta,
                self.mean.data(),
                self.var.data(),
                BN_EPS,
            ),
        }
    }
}

/// Batch norm that keeps separate running statistics for real and fake
/// batches. The branches never share or mix statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct DualBatchNorm {
    pub real: RunningStats,
    pub fake: RunningStats,
}

impl DualBatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            real: RunningStats::new(features),
            fake: RunningStats::new(features),
        }
    }

    pub fn branch_mut(&mut self, branch: Branch) -> &mut RunningStats {
        match branch {
            Branch::Real => &mut self.real,
            Branch::Fake => &mut self.fake,
        }
    }

    pub fn branch(&self, branch: Branch) -> &RunningStats {
        match branch {
            Branch::Real => &self.real,
            Branch::Fake => &self.fake,
        }
    }
}

/// Normalizes `x[n × d]` with the statistics of `branch`.
pub fn dual_batchnorm(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    branch: Branch,
    state: &mut DualBatchNorm,
    mode: NormMode,
) -> Result<Var> {
    state.branch_mut(branch).apply(tape, x, gamma, beta, mode)
}
