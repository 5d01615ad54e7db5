//! Zero-shot sketch-based image retrieval on top of a frozen latent-diffusion
//! denoiser: captured upsampling-block activations are pooled into retrieval
//! features, steered by learned pixel-border and conditioning prompts.

pub mod backbone;
pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod pca;
pub mod plot;
pub mod prompting;
pub mod retrieval;

pub use error::{Error, Result};
