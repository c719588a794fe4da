//! Layers, losses, optimizer, and schedules.

pub mod conv;
pub mod fcn;
pub mod linear;
pub mod loss;
pub mod optim;
pub mod param;
pub mod transformer;

pub use conv::{receptive_field, Conv1dLayer, Conv1dStack};
pub use fcn::Fcn;
pub use linear::Linear;
pub use loss::{bce_with_logits, mse_masked};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use param::{join, Ctx, Param, Parameters};
pub use transformer::{sinusoidal_positions, LayerNorm, MultiHeadAttention, TransformerEncoder};
