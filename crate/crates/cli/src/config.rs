use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mend_core::nets::Architecture;
use mend_core::recon::{EnergyWeights, FusionConfig, OptimConfig};
use mend_core::rng::derive_seed;
use mend_core::train::{FinetuneConfig, Stage1Config, Stage2Config};

use crate::error::{usage, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchPreset {
    Large,
    Desk,
    Tiny,
}

impl ArchPreset {
    pub fn architecture(self) -> Architecture {
        match self {
            ArchPreset::Large => Architecture::large(),
            ArchPreset::Desk => Architecture::desk(),
            ArchPreset::Tiny => Architecture::tiny(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_shapes: usize,
    pub eval_shapes: usize,
    pub scans_per_shape: usize,
    /// Labeled SDF samples per training shape.
    pub samples_per_shape: usize,
    pub rays_per_axis: usize,
    pub max_scan_points: usize,
    pub viewpoint_distance: f64,
    /// Surface points of one inference observation.
    pub observation_points: usize,
    /// Oracle surface samples per evaluated object, before mirroring.
    pub gt_points: usize,
    /// Rays per axis and point cap of the sparse re-scans.
    pub sparse_rays: usize,
    pub sparse_points: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_shapes: 50,
            eval_shapes: 20,
            scans_per_shape: 5,
            samples_per_shape: 2048,
            rays_per_axis: 48,
            max_scan_points: 512,
            viewpoint_distance: 2.5,
            observation_points: 256,
            gt_points: 1024,
            sparse_rays: 16,
            sparse_points: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub resolution: usize,
    pub recall_threshold: f64,
    /// Lengths are multiplied by this in reports.
    pub scale: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            resolution: 40,
            recall_threshold: 0.1,
            scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2] }
    }
}

/// Everything a run depends on. Component seeds inside are overwritten
/// from `seed` by [`ExperimentConfig::resolved`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub arch: ArchPreset,
    pub data: DataConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub finetune: FinetuneConfig,
    pub optim: OptimConfig,
    pub fusion: FusionConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    /// Epochs between periodic training checkpoints.
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            arch: ArchPreset::Desk,
            data: DataConfig::default(),
            stage1: Stage1Config {
                epochs: 150,
                batch_per_shape: 512,
                lr_decoder: 1e-3,
                lr_codes: 1e-3,
                ..Default::default()
            },
            stage2: Stage2Config {
                epochs: 40,
                dis_uniform: 256,
                gt_samples: 512,
                lr_encoder: 5e-4,
                lr_discriminator: 1e-4,
                batch: 8,
                ..Default::default()
            },
            finetune: FinetuneConfig {
                epochs: 10,
                dis_uniform: 256,
                lr: 1e-4,
                ..Default::default()
            },
            optim: OptimConfig {
                iterations: 150,
                weights: EnergyWeights::default(),
                dis_uniform: 256,
                resample_every: 25,
                ..Default::default()
            },
            fusion: FusionConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
            checkpoint_every: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::error::CliError::Io(format!("{}: {e}", path.display())))?;
        let user: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        Self::from_partial(user).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    /// Builds a configuration from JSON that may omit any field at any
    /// depth; omitted fields keep their default values.
    pub fn from_partial(user: serde_json::Value) -> Result<Self, serde_json::Error> {
        let mut base = serde_json::to_value(Self::default())?;
        merge(&mut base, user);
        serde_json::from_value(base)
    }

    /// The configuration with every component seed derived from `seed`.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.stage1.seed = derive_seed(self.seed, "stage1", 0);
        c.stage2.seed = derive_seed(self.seed, "stage2", 0);
        c.finetune.seed = derive_seed(self.seed, "finetune", 0);
        c.optim.seed = derive_seed(self.seed, "recon", 0);
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }.resolved()
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

fn merge(base: &mut serde_json::Value, user: serde_json::Value) {
    match (base, user) {
        (serde_json::Value::Object(b), serde_json::Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Hex SHA-256 of the canonical JSON of `v`.
pub fn config_hash<T: Serialize>(v: &T) -> String {
    let value = serde_json::to_value(v).expect("configs serialize");
    let text = serde_json::to_string(&value).expect("values serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of training shape `i` or evaluation shape `i`.
pub fn shape_seed(root: u64, split: Split, i: usize) -> u64 {
    derive_seed(root, split.label(), i as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train-shape",
            Split::Eval => "eval-shape",
        }
    }
}
