//! Discrete diffusion graph autoencoder.
//!
//! A GCN encoder maps a graph to a 64-dim code; a UNet denoiser, conditioned
//! on that code, learns to reverse an absorbing-state edge-deletion process
//! over the adjacency matrix. The graph representation is the encoder code
//! concatenated with a pooled bottleneck feature of the denoiser, evaluated
//! with an RBF-SVM under stratified 10-fold cross-validation.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod graph;
pub mod networks;
pub mod pipeline;
pub mod scalar;
pub mod training;

pub use error::{Error, ErrorClass, Result};
pub use scalar::{Field, Rational, Scalar};

pub use config::{ExperimentConfig, Precision};

/// Single-precision model, the default for training runs.
pub type Ddgae32 = networks::Ddgae<f32>;
/// Double-precision model, used by gradient checks and oracles.
pub type Ddgae64 = networks::Ddgae<f64>;
pub type TrainState32 = training::TrainState<f32>;
pub type TrainState64 = training::TrainState<f64>;
pub type PaddedGraph32 = graph::PaddedGraph<f32>;
pub type PaddedGraph64 = graph::PaddedGraph<f64>;
pub type PreparedDataset32 = graph::PreparedDataset<f32>;
pub type PreparedDataset64 = graph::PreparedDataset<f64>;
/// Exact schedule for rational oracles.
pub type RationalSchedule = diffusion::NoiseSchedule<Rational>;
