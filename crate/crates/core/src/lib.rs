//! Neural implicit shape completion at desk scale.
//!
//! The pipeline learns a signed-distance decoder jointly with per-shape
//! latent codes, trains a point-cloud encoder and a shape discriminator
//! against the frozen decoder, and reconstructs partial scans by
//! optimizing a latent code under a data term, a code-norm term and a
//! discriminator prior.

pub mod diffcore;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod recon;
pub mod rng;
pub mod shapes;
pub mod train;

pub use error::{Error, Result};

/// Three-component point.
pub type Point = [f64; 3];
