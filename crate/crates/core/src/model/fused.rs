use crate::autograd::Var;
use crate::dataset::{SegmentKey, Target};
use crate::dsp::Modality;
use crate::error::{Error, Result};
use crate::model::single::{Mode, SingleModalityModel};
use crate::nn::{join, Ctx, Fcn, Param, Parameters};
use crate::rng::{stream, Stream};
use crate::tensor::{Scalar, Tensor};

pub const FUSION_HIDDEN: [usize; 2] = [64, 32];

/// Two frozen fine-tuned backbones whose penultimate features are concatenated
/// and classified by a second-level head.
#[derive(Debug, Clone)]
pub struct FusedModel<T: Scalar> {
    pub target: Target,
    pub ecg: SingleModalityModel<T>,
    pub eeg: SingleModalityModel<T>,
    pub fusion_head: Fcn<T>,
}

impl<T: Scalar> FusedModel<T> {
    pub fn new(
        target: Target,
        ecg: SingleModalityModel<T>,
        eeg: SingleModalityModel<T>,
        hidden: &[usize],
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        if ecg.modality != Modality::Ecg || eeg.modality != Modality::Eeg {
            return Err(Error::Contract("fusion needs one ECG and one EEG model".into()));
        }
        if ecg.mode != Mode::Finetune || eeg.mode != Mode::Finetune {
            return Err(Error::Contract("fusion backbones must be fine-tuned classifiers".into()));
        }
        let width = ecg.penultimate_size() + eeg.penultimate_size();
        let mut rng = stream(seed, Stream::FusionHeadInit, &[]);
        let fusion_head = Fcn::new(width, hidden, 1, dropout, &mut rng);
        Ok(Self {
            target,
            ecg,
            eeg,
            fusion_head,
        })
    }

    pub fn fusion_width(&self) -> usize {
        self.fusion_head.input_size()
    }

    /// Penultimate features of both backbones in eval mode, detached.
    pub fn features(
        &self,
        ctx: &mut Ctx<T>,
        ecg: (&SegmentKey, &[T]),
        eeg: (&SegmentKey, &[T]),
    ) -> Result<Var> {
        if ecg.0 != eeg.0 {
            return Err(Error::Contract(format!(
                "fusion inputs are misaligned: ECG window {} vs EEG window {}",
                ecg.0, eeg.0
            )));
        }
        let parts = ctx.eval_scope(|ctx| -> Result<[Var; 2]> {
            let xe = self.ecg.input(ctx, ecg.1)?;
            let (_, pe) = self.ecg.forward_classify(ctx, "ecg", xe)?;
            let xg = self.eeg.input(ctx, eeg.1)?;
            let (_, pg) = self.eeg.forward_classify(ctx, "eeg", xg)?;
            Ok([pe, pg])
        })?;
        let [pe, pg] = parts;
        let (pe, pg) = (ctx.graph.detach(pe), ctx.graph.detach(pg));
        ctx.graph.concat(&[pe, pg], 1)
    }

    /// Fusion head on precomputed `1×width` features.
    pub fn head_forward(&self, ctx: &mut Ctx<T>, features: Var) -> Result<Var> {
        let (logit, _) = self.fusion_head.forward(ctx, "fusion_head", features)?;
        Ok(logit)
    }

    pub fn fused_forward(
        &self,
        ctx: &mut Ctx<T>,
        ecg: (&SegmentKey, &[T]),
        eeg: (&SegmentKey, &[T]),
    ) -> Result<Var> {
        let f = self.features(ctx, ecg, eeg)?;
        self.head_forward(ctx, f)
    }

    /// Eval-mode feature vector, for caching.
    pub fn feature_vector(&self, ecg: (&SegmentKey, &[T]), eeg: (&SegmentKey, &[T])) -> Result<Tensor<T>> {
        let mut ctx = Ctx::eval();
        let f = self.features(&mut ctx, ecg, eeg)?;
        Ok(ctx.graph.value(f).clone())
    }

    /// Hash over both backbones' parameters.
    pub fn backbone_hash(&self) -> String {
        Frozen(self).param_hash()
    }
}

/// Parameter view over the frozen backbones only.
struct Frozen<'a, T: Scalar>(&'a FusedModel<T>);

impl<T: Scalar> Parameters<T> for Frozen<'_, T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.0.ecg.visit(&join(prefix, "ecg"), f);
        self.0.eeg.visit(&join(prefix, "eeg"), f);
    }

    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<T>)) {
        unreachable!("read-only view")
    }
}

impl<T: Scalar> Parameters<T> for FusedModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.ecg.visit(&join(prefix, "ecg"), f);
        self.eeg.visit(&join(prefix, "eeg"), f);
        self.fusion_head.visit(&join(prefix, "fusion_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.ecg.visit_mut(&join(prefix, "ecg"), f);
        self.eeg.visit_mut(&join(prefix, "eeg"), f);
        self.fusion_head.visit_mut(&join(prefix, "fusion_head"), f);
    }
}
