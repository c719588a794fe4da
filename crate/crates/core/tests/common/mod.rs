#![allow(dead_code)]

use std::path::Path;

use physfuse::dataset::{generate_synthetic, Manifest, SegmentTable, SyntheticSpec, Target};
use physfuse::dsp::{FilterPreset, Modality};
use physfuse::metrics::{Metric, ModelKind, RunReport};
use physfuse::model::ModelConfig;
use physfuse::nn::LrSchedule;
use physfuse::training::{CvOptions, Phase, TrainConfig, TrainSection};

/// Small single-modality architecture that trains in seconds on one core.
pub fn small_model() -> ModelConfig {
    ModelConfig {
        kernels: vec![9, 5, 3],
        conv_channels: vec![8, 16, 16],
        strides: vec![4, 4, 2],
        hidden_size: 16,
        num_layers: 1,
        num_heads: 2,
        ff_size: Some(32),
        mvp_hidden: vec![32],
        emotion_hidden: vec![16],
        ..ModelConfig::default()
    }
}

pub fn finetune(epochs: usize, lr: f64) -> TrainConfig {
    TrainSection {
        epochs: Some(epochs),
        batch_size: Some(16),
        schedule: Some(LrSchedule::StepDecay {
            initial: lr,
            factor: 0.65,
            period_epochs: 45,
        }),
        dropout: Some(0.1),
        ..Default::default()
    }
    .resolve(Phase::Finetune)
    .unwrap()
}

pub fn fuse(epochs: usize, lr: f64) -> TrainConfig {
    TrainSection {
        epochs: Some(epochs),
        batch_size: Some(16),
        schedule: Some(LrSchedule::StepDecay {
            initial: lr,
            factor: 0.65,
            period_epochs: 20,
        }),
        ..Default::default()
    }
    .resolve(Phase::Fuse)
    .unwrap()
}

pub fn pretrain(epochs: usize, peak: f64) -> TrainConfig {
    TrainSection {
        epochs: Some(epochs),
        batch_size: Some(16),
        l2_decay: Some(0.0),
        schedule: Some(LrSchedule::WarmupLinearDecay {
            peak,
            warmup_epochs: 2,
            total_epochs: epochs,
        }),
        ..Default::default()
    }
    .resolve(Phase::Pretrain)
    .unwrap()
}

pub fn arousal_cv(folds: usize, seed: u64, finetune: TrainConfig, fuse: TrainConfig) -> CvOptions {
    CvOptions {
        folds,
        seed,
        targets: vec![Target::Arousal],
        ecg: small_model(),
        eeg: small_model(),
        pretrain: None,
        finetune,
        fuse,
        fusion_hidden: vec![16],
        label_fraction: 1.0,
        jobs: 1,
        out: None,
    }
}

pub fn synth(dir: &Path, spec: &SyntheticSpec, seed: u64, keep: Option<Modality>) -> (Manifest, SegmentTable) {
    let mut manifest = generate_synthetic(spec, seed, dir).unwrap();
    if let Some(m) = keep {
        manifest.modalities = vec![m];
    }
    let table = SegmentTable::build(&manifest, &FilterPreset::named("amigos").unwrap()).unwrap();
    (manifest, table)
}

pub fn mean_metric(report: &RunReport, model: ModelKind, target: Target, metric: Metric) -> f64 {
    let v = report.values(model, target, metric);
    assert!(!v.is_empty(), "no {model} {metric:?} rows");
    v.iter().sum::<f64>() / v.len() as f64
}
