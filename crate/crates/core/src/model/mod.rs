//! Single-modality recognizers, the fused model, and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod fused;
pub mod single;

pub use checkpoint::{load_fused, load_model, read_meta, save_fused, save_model, CheckpointMeta};
pub use config::ModelConfig;
pub use fused::{FusedModel, FUSION_HIDDEN};
pub use single::{Mode, SingleModalityModel};
