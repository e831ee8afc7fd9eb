//! Inference: energies, latent-code optimization with and without the
//! learned priors, multi-code fusion, and mesh extraction.

mod energy;
mod extract;
mod observation;
mod optimize;

pub use energy::{
    build_energy, clamped_l1_mean, clamped_l1_sum, e_data, e_dis, e_reg, neg_log_d, rho, EnergyGraph, EnergyInputs,
    EnergyWeights,
};
pub use extract::{extract_mesh, field_grid};
pub use observation::{Observation, OFF_SURFACE_OFFSET};
pub use optimize::{
    field_at, fuse_multicode, jittered_codes, optimize_baseline, optimize_codes, optimize_regularized,
    optimize_regularized_from, random_code, EnergyRecord, FusionConfig, OptimConfig, OptimResult,
};

#[cfg(test)]
mod tests;
