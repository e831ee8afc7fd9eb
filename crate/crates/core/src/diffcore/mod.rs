//! Minimal reverse-mode differentiation: tensors, a gradient tape, batch
//! norm with per-branch statistics, Adam, and a finite-difference checker.

mod adam;
mod batchnorm;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{dual_batchnorm, Branch, DualBatchNorm, NormMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use gradcheck::gradcheck;
pub use params::{Bindings, GradMap, ParamEntry, ParamSet, PARAMS_FORMAT};
pub use tape::{apply_activation, Activation, BatchMoments, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
