//! Emotion recognition from ECG and EEG with a 1-D CNN + Transformer backbone,
//! masked-value pre-training, fine-tuning, and late fusion.

pub mod autograd;
pub mod config;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
