//! Network building blocks: parameter binding, basic layers, the
//! squeeze-excitation feature extractor, the post-attention residual
//! module, transformer blocks, long skips and resamplers.

mod layers;
mod par;
mod params;
mod resample;
mod se;
mod transformer;

pub use layers::{to_channels_first, to_channels_last, Conv2d, LayerNorm, Linear};
pub use par::{Mlp, Par};
pub use params::{Builder, Ctx, ParamId, ParamStore};
pub use resample::{Downsampler, Lsc, Upsampler};
pub use se::{FeatureExtractor, SeResBlock, SqueezeExcite};
pub use transformer::{BlockOptions, Layer, NormPlacement, TransformerBlock};
