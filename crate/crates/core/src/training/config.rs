use serde::{Deserialize, Serialize};

use crate::dataset::{MaskConfig, Target};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, LrSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
    Fuse,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
            Phase::Fuse => "fuse",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

/// Effective settings for one training phase.
///
/// `dropout` lands where each phase uses it: inside the Transformer for
/// pre-training, in the emotion head for fine-tuning, and in the fusion head
/// for fusion training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub dropout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub mask: MaskConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            phase: Phase::Pretrain,
            epochs: 500,
            batch_size: 64,
            schedule: LrSchedule::WarmupLinearDecay {
                peak: 5e-4,
                warmup_epochs: 30,
                total_epochs: 500,
            },
            adam: AdamConfig::with_l2(5e-3),
            dropout: 0.1,
            grad_clip: None,
            mask: MaskConfig::default(),
            seed: 0,
            target: None,
        }
    }

    pub fn finetune() -> Self {
        Self {
            phase: Phase::Finetune,
            epochs: 100,
            schedule: LrSchedule::StepDecay {
                initial: 1e-4,
                factor: 0.65,
                period_epochs: 45,
            },
            adam: AdamConfig::with_l2(1e-5),
            dropout: 0.6,
            ..Self::pretrain()
        }
    }

    pub fn fuse() -> Self {
        Self {
            phase: Phase::Fuse,
            epochs: 52,
            schedule: LrSchedule::StepDecay {
                initial: 1e-5,
                factor: 0.65,
                period_epochs: 20,
            },
            adam: AdamConfig::with_l2(1e-5),
            dropout: 0.1,
            ..Self::pretrain()
        }
    }

    pub fn for_phase(phase: Phase) -> Self {
        match phase {
            Phase::Pretrain => Self::pretrain(),
            Phase::Finetune => Self::finetune(),
            Phase::Fuse => Self::fuse(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.phase.name();
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("{p}: epochs and batch_size must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("{p}: dropout {} must be in [0, 1)", self.dropout)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("{p}: grad_clip {c} must be positive")));
            }
        }
        self.schedule.validate()
    }

    pub(crate) fn stream_path(&self, extra: &[u64]) -> Vec<u64> {
        let mut v = vec![self.phase.tag()];
        v.extend_from_slice(extra);
        v
    }
}

/// Optional per-phase overrides as they appear in a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub schedule: Option<LrSchedule>,
    pub l2_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub dropout: Option<f64>,
    pub grad_clip: Option<f64>,
    pub mask_span: Option<usize>,
    pub mask_ratio: Option<f64>,
}

impl TrainSection {
    pub fn resolve(&self, phase: Phase) -> Result<TrainConfig> {
        let mut c = TrainConfig::for_phase(phase);
        if let Some(v) = self.epochs {
            c.epochs = v;
            // default warmup schedule: same 30/500 shape over the new horizon
            if self.schedule.is_none() {
                if let LrSchedule::WarmupLinearDecay { total_epochs, warmup_epochs, .. } = &mut c.schedule {
                    *warmup_epochs = ((*warmup_epochs * v) as f64 / *total_epochs as f64).round().max(1.0) as usize;
                    *warmup_epochs = (*warmup_epochs).min(v);
                    *total_epochs = v;
                }
            }
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.schedule {
            c.schedule = v;
        }
        if let Some(v) = self.l2_decay {
            c.adam.l2_decay = v;
        }
        if let Some(v) = self.beta1 {
            c.adam.beta1 = v;
        }
        if let Some(v) = self.beta2 {
            c.adam.beta2 = v;
        }
        if let Some(v) = self.epsilon {
            c.adam.epsilon = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        c.grad_clip = self.grad_clip;
        if let Some(v) = self.mask_span {
            c.mask.span_length = v;
        }
        if let Some(v) = self.mask_ratio {
            c.mask.mask_ratio = v;
        }
        c.validate()?;
        Ok(c)
    }
}
