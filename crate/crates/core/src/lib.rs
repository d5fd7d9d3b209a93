//! Mixed-type tabular diffusion: data preparation, a tensor engine with
//! reverse-mode gradients, diffusion processes, a conditional transformer
//! denoiser, training, sampling and evaluation.

pub mod data;
pub mod datasets;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod masking;
pub mod model;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod tensor;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};
