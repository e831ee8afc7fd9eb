//! The decoder, encoder and discriminator networks.

mod arch;
mod checkpoint;
mod decoder;
mod discriminator;
mod encoder;
mod init;

pub use arch::{Architecture, DecoderArch, DiscriminatorArch, EncoderArch, CODE_DIM, MAX_ENCODER_POINTS};
pub use checkpoint::{load_net, load_net_as, save_net, validate_shapes, Checkpointed};
pub use decoder::Decoder;
pub use discriminator::Discriminator;
pub use encoder::Encoder;
pub use init::{kaiming_uniform, xavier_uniform};
