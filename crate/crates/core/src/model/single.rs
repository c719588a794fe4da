use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::dsp::Modality;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::nn::{join, sinusoidal_positions, Conv1dLayer, Conv1dStack, Ctx, Fcn, Param, Parameters, TransformerEncoder};
use crate::rng::{stream, Stream};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pretrain,
    Finetune,
}

const CLS_STD: f64 = 0.02;

/// 1-D CNN encoder → width-1 projection → CLS + positions → Transformer, with
/// an MVP head (pre-training) or an emotion head (fine-tuning).
#[derive(Debug, Clone)]
pub struct SingleModalityModel<T: Scalar> {
    pub modality: Modality,
    pub config: ModelConfig,
    pub mode: Mode,
    pub encoder: Conv1dStack<T>,
    pub projection: Conv1dLayer<T>,
    pub cls: Param<T>,
    pub transformer: TransformerEncoder<T>,
    pub mvp_head: Option<Fcn<T>>,
    pub emotion_head: Option<Fcn<T>>,
}

fn modality_tag(m: Modality) -> u64 {
    match m {
        Modality::Ecg => 0,
        Modality::Eeg => 1,
    }
}

impl<T: Scalar> SingleModalityModel<T> {
    /// Backbone and each head draw from separate streams of `seed`, so two
    /// models with the same seed share their emotion-head initialization
    /// regardless of how the backbone was obtained.
    pub fn new(modality: Modality, config: ModelConfig, mode: Mode, seed: u64) -> Result<Self> {
        config.validate()?;
        let tag = modality_tag(modality);
        let mut rng = stream(seed, Stream::BackboneInit, &[tag]);
        let encoder = Conv1dStack::new(
            modality.channel_count(),
            &config.kernels,
            &config.conv_channels,
            &config.strides,
            &mut rng,
        )?;
        let projection = Conv1dLayer::new(encoder.out_channels(), config.hidden_size, 1, 1, false, &mut rng);
        let cls = Param::normal(&[1, config.hidden_size], CLS_STD, &mut rng);
        let transformer = TransformerEncoder::new(
            config.num_layers,
            config.num_heads,
            config.hidden_size,
            config.ff(),
            config.transformer_dropout,
            &mut rng,
        )?;
        let mut model = Self {
            modality,
            config,
            mode,
            encoder,
            projection,
            cls,
            transformer,
            mvp_head: None,
            emotion_head: None,
        };
        match mode {
            Mode::Pretrain => model.mvp_head = Some(model.fresh_mvp_head(seed)),
            Mode::Finetune => model.emotion_head = Some(model.fresh_emotion_head(seed, 0.0)),
        }
        Ok(model)
    }

    fn fresh_mvp_head(&self, seed: u64) -> Fcn<T> {
        let mut rng = stream(seed, Stream::MvpHeadInit, &[modality_tag(self.modality)]);
        let out = self.config.total_stride() * self.modality.channel_count();
        Fcn::new(self.config.hidden_size, &self.config.mvp_hidden, out, 0.0, &mut rng)
    }

    fn fresh_emotion_head(&self, seed: u64, dropout: f64) -> Fcn<T> {
        let mut rng = stream(seed, Stream::EmotionHeadInit, &[modality_tag(self.modality)]);
        Fcn::new(self.config.hidden_size, &self.config.emotion_hidden, 1, dropout, &mut rng)
    }

    /// Drops the MVP head and attaches a freshly initialized emotion head;
    /// encoder and Transformer weights are kept as they are.
    pub fn into_finetune(mut self, seed: u64) -> Self {
        self.mvp_head = None;
        self.emotion_head = Some(self.fresh_emotion_head(seed, 0.0));
        self.mode = Mode::Finetune;
        self
    }

    pub fn channels(&self) -> usize {
        self.modality.channel_count()
    }

    /// Width of the features handed to a fusion head.
    pub fn penultimate_size(&self) -> usize {
        self.emotion_head
            .as_ref()
            .map_or(*self.config.emotion_hidden.last().unwrap_or(&0), Fcn::penultimate_size)
    }

    pub fn set_head_dropout(&mut self, p: f64) {
        if let Some(h) = self.emotion_head.as_mut() {
            h.dropout_rate = p;
        }
        if let Some(h) = self.mvp_head.as_mut() {
            h.dropout_rate = p;
        }
    }

    /// Puts a `C×T` channel-major buffer on the graph.
    pub fn input(&self, ctx: &mut Ctx<T>, samples: &[T]) -> Result<Var> {
        let c = self.channels();
        if samples.len() != c * self.config.segment_len {
            return Err(Error::dim(
                "model_input",
                format!(
                    "{} values do not form {}×{} ({} segment)",
                    samples.len(),
                    c,
                    self.config.segment_len,
                    self.modality
                ),
            ));
        }
        Ok(ctx.graph.constant(Tensor::new([c, self.config.segment_len], samples.to_vec())?))
    }

    /// `C×T` signal → `(L+1)×d` contextual sequence with CLS at row 0.
    pub fn backbone(&self, ctx: &mut Ctx<T>, prefix: &str, x: Var) -> Result<Var> {
        let h = self.encoder.forward(ctx, &join(prefix, "encoder"), x)?;
        let p = self.projection.forward(ctx, &join(prefix, "projection"), h)?;
        let tokens = ctx.graph.transpose(p)?;
        let cls = ctx.param(&join(prefix, "cls"), &self.cls);
        let seq = ctx.graph.concat(&[cls, tokens], 0)?;
        let (len, d) = ctx.graph.value(seq).dims2()?;
        let pe = ctx.graph.constant(sinusoidal_positions(len, d));
        let seq = ctx.graph.add(seq, pe)?;
        self.transformer.forward(ctx, &join(prefix, "transformer"), seq)
    }

    /// Per-sample, per-channel predictions `T×C` for a masked input.
    pub fn forward_pretrain(&self, ctx: &mut Ctx<T>, prefix: &str, x: Var) -> Result<Var> {
        let head = match (&self.mode, &self.mvp_head) {
            (Mode::Pretrain, Some(h)) => h,
            _ => return Err(Error::Contract("forward_pretrain needs a model in pretrain mode".into())),
        };
        let seq = self.backbone(ctx, prefix, x)?;
        let (len, _) = ctx.graph.value(seq).dims2()?;
        let tokens = ctx.graph.slice(seq, 0, 1, len)?;
        let (out, _) = head.forward(ctx, &join(prefix, "mvp_head"), tokens)?;
        ctx.graph.reshape(out, &[self.config.segment_len, self.channels()])
    }

    /// Emotion head on row 0 of a backbone output: `(logit 1×1, penultimate 1×h)`.
    pub fn classify_sequence(&self, ctx: &mut Ctx<T>, prefix: &str, seq: Var) -> Result<(Var, Var)> {
        let head = match (&self.mode, &self.emotion_head) {
            (Mode::Finetune, Some(h)) => h,
            _ => return Err(Error::Contract("forward_classify needs a model in finetune mode".into())),
        };
        let cls_e = ctx.graph.slice(seq, 0, 0, 1)?;
        head.forward(ctx, &join(prefix, "emotion_head"), cls_e)
    }

    pub fn forward_classify(&self, ctx: &mut Ctx<T>, prefix: &str, x: Var) -> Result<(Var, Var)> {
        if self.mode != Mode::Finetune {
            return Err(Error::Contract("forward_classify needs a model in finetune mode".into()));
        }
        let seq = self.backbone(ctx, prefix, x)?;
        self.classify_sequence(ctx, prefix, seq)
    }

    /// Eval-mode `(logit, penultimate)` for one segment.
    pub fn predict(&self, samples: &[T]) -> Result<(T, Vec<T>)> {
        let mut ctx = Ctx::eval();
        let x = self.input(&mut ctx, samples)?;
        let (logit, pen) = self.forward_classify(&mut ctx, "", x)?;
        Ok((ctx.graph.value(logit).data()[0], ctx.graph.value(pen).data().to_vec()))
    }

    /// Visits only encoder, projection, CLS, and Transformer parameters.
    pub fn visit_backbone(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.projection.visit(&join(prefix, "projection"), f);
        f(&join(prefix, "cls"), &self.cls);
        self.transformer.visit(&join(prefix, "transformer"), f);
    }
}

impl<T: Scalar> Parameters<T> for SingleModalityModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.visit_backbone(prefix, f);
        if let Some(h) = &self.mvp_head {
            h.visit(&join(prefix, "mvp_head"), f);
        }
        if let Some(h) = &self.emotion_head {
            h.visit(&join(prefix, "emotion_head"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.projection.visit_mut(&join(prefix, "projection"), f);
        f(&join(prefix, "cls"), &mut self.cls);
        self.transformer.visit_mut(&join(prefix, "transformer"), f);
        if let Some(h) = &mut self.mvp_head {
            h.visit_mut(&join(prefix, "mvp_head"), f);
        }
        if let Some(h) = &mut self.emotion_head {
            h.visit_mut(&join(prefix, "emotion_head"), f);
        }
    }
}
