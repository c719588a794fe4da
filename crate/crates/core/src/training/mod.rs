//! Training loops, run logs, and cross-validation.

pub mod config;
pub mod cv;
pub mod log;
pub mod loops;

pub use config::{Phase, TrainConfig, TrainSection};
pub use cv::{fold_rows, run_cross_validation, CvOptions, CvOutcome, FoldRows};
pub use log::{read_log, EpochRecord, RunLog};
pub use loops::{
    classify_logits, finetune_emotion, fused_logits, fusion_features, load_fusion_backbones, mvp_eval_loss,
    pretrain_mvp, train_fused, FitSummary, FusionItem,
};
