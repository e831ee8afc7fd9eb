use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// Latent code width shared by every preset.
pub const CODE_DIM: usize = 256;
/// Largest point set the encoder accepts.
pub const MAX_ENCODER_POINTS: usize = 1024;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderArch {
    pub code_dim: usize,
    pub width: usize,
    /// Fully connected layers including the scalar output layer.
    pub layers: usize,
    /// Layer whose input re-injects the code and the query point.
    pub skip: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub code_dim: usize,
    pub block1: [usize; 2],
    pub block2: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorArch {
    pub widths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub decoder: DecoderArch,
    pub encoder: EncoderArch,
    pub discriminator: DiscriminatorArch,
}

impl Architecture {
    /// Full-size networks: 512-wide decoder, 128/256 + 512/1024 encoder,
    /// 64-64-64-128-1024 discriminator.
    pub fn large() -> Self {
        Self {
            decoder: DecoderArch {
                code_dim: CODE_DIM,
                width: 512,
                layers: 8,
                skip: 4,
            },
            encoder: EncoderArch {
                code_dim: CODE_DIM,
                block1: [128, 256],
                block2: [512, 1024],
            },
            discriminator: DiscriminatorArch {
                widths: vec![64, 64, 64, 128, 1024],
            },
        }
    }

    /// Same topology with narrower layers, sized for a single CPU core.
    pub fn desk() -> Self {
        Self {
            decoder: DecoderArch {
                code_dim: CODE_DIM,
                width: 64,
                layers: 8,
                skip: 4,
            },
            encoder: EncoderArch {
                code_dim: CODE_DIM,
                block1: [32, 64],
                block2: [128, 256],
            },
            discriminator: DiscriminatorArch {
                widths: vec![32, 32, 32, 64, 128],
            },
        }
    }

    /// Tiny networks for unit tests.
    pub fn tiny() -> Self {
        Self {
            decoder: DecoderArch {
                code_dim: 6,
                width: 8,
                layers: 8,
                skip: 4,
            },
            encoder: EncoderArch {
                code_dim: 6,
                block1: [5, 7],
                block2: [9, 11],
            },
            discriminator: DiscriminatorArch {
                widths: vec![4, 5, 6, 7, 8],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.decoder;
        if d.layers < 2 || d.skip == 0 || d.skip >= d.layers || d.width == 0 || d.code_dim == 0 {
            return Err(arg_err!("invalid decoder layout {d:?}"));
        }
        if self.encoder.code_dim != d.code_dim {
            return Err(arg_err!(
                "encoder emits {} codes, decoder takes {}",
                self.encoder.code_dim,
                d.code_dim
            ));
        }
        let e = &self.encoder;
        if e.block1.contains(&0) || e.block2.contains(&0) {
            return Err(arg_err!("invalid encoder layout {e:?}"));
        }
        if self.discriminator.widths.is_empty() || self.discriminator.widths.contains(&0) {
            return Err(arg_err!("invalid discriminator widths {:?}", self.discriminator.widths));
        }
        Ok(())
    }
}
