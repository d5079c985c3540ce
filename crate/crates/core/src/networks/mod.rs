//! Learnable components: the GCN encoder and the conditional UNet denoiser.

mod denoiser;
mod encoder;
mod model;
mod params;

pub use denoiser::{
    denoise, time_embedding, Denoiser, DenoiserConfig, DenoiserOutput, DenoiserTrace,
};
pub use encoder::{encode, gcn_normalize, Encoder, EncoderConfig};
pub use model::{Ddgae, GraphStep, ModelConfig, ModelGrads};
pub use params::ParamStore;
