//! The nine DAE-NR variants: backbone (CAE, VAE, VQ-VAE) × readout
//! (factorized, fully connected, fixed mask), each tapping one of the four
//! encoder layers.

mod arch;
pub mod checkpoint;
mod latent;
mod model;
pub mod readout;

pub use arch::{
    format_layers, parse_arch, parse_layers, ArchSpec, Backbone, CodebookSpec, LayerKind,
    LayerSpec, ModelConfig, ReadoutKind, DEFAULT_ARCH, INPUT_SIZE,
};
pub use latent::{
    quantize_straight_through, vae_sample, vq_quantize, Codebook, FrozenCodes, Quantized,
};
pub use model::{
    BatchNormState, EncoderOutput, ForwardOptions, ForwardOutput, LatentOut, Mode, Model, Param,
    ParamGroup,
};
pub use readout::{ReadoutParams, ReadoutVars};
