//! Central finite-difference checks of the reverse-mode gradients.

use std::time::Instant;

use rand::Rng as _;
use serde::Serialize;

use crate::autograd::Var;
use crate::dataset::sample_mask;
use crate::dsp::Modality;
use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig, SingleModalityModel};
use crate::nn::{
    bce_with_logits, join, mse_masked, Conv1dLayer, Conv1dStack, Ctx, Fcn, LayerNorm, Linear, MultiHeadAttention,
    Param, Parameters, TransformerEncoder,
};
use crate::rng::{stream, Rng, Stream};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
/// Floor of the relative-error denominator, so entries whose true gradient is
/// essentially zero are judged on absolute error.
pub const DENOM_FLOOR: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
    /// Parameter entry with the largest error, as `name[index]`.
    pub worst: String,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn loss_value<M: Parameters<f64>>(module: &M, loss: &dyn Fn(&M, &mut Ctx<f64>) -> Result<Var>) -> Result<f64> {
    let mut ctx = Ctx::eval();
    let v = loss(module, &mut ctx)?;
    Ok(ctx.graph.value(v).data()[0])
}

fn probe_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|i| i * n / max).collect()
    }
}

/// Compares backward gradients of the scalar `loss` against central
/// differences for up to `probes_per_tensor` entries of every parameter.
pub fn check<M: Parameters<f64>>(
    name: &str,
    module: &mut M,
    probes_per_tensor: usize,
    loss: &dyn Fn(&M, &mut Ctx<f64>) -> Result<Var>,
) -> Result<GradReport> {
    let mut ctx = Ctx::eval();
    let out = loss(module, &mut ctx)?;
    if ctx.graph.value(out).numel() != 1 {
        return Err(Error::Contract(format!("gradcheck `{name}`: loss must be a scalar")));
    }
    ctx.graph.backward(out)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    module.visit("", &mut |pname, p| {
        let g = ctx
            .graph
            .param_grad(pname)
            .map_or_else(|| vec![0.0; p.value.numel()], <[f64]>::to_vec);
        analytic.push((pname.to_string(), g));
    });
    drop(ctx);

    let mut report = GradReport {
        name: name.to_string(),
        probes: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for (pname, grad) in &analytic {
        for i in probe_indices(grad.len(), probes_per_tensor) {
            let nudge = |delta: f64, module: &mut M| {
                module.visit_mut("", &mut |n, p| {
                    if n == pname {
                        p.value.data_mut()[i] += delta;
                    }
                });
            };
            let orig = {
                let mut v = 0.0;
                module.visit("", &mut |n, p| {
                    if n == pname {
                        v = p.value.data()[i];
                    }
                });
                v
            };
            nudge(STEP, module);
            let plus = loss_value(module, loss);
            nudge(-2.0 * STEP, module);
            let minus = loss_value(module, loss);
            // restore exactly
            module.visit_mut("", &mut |n, p| {
                if n == pname {
                    p.value.data_mut()[i] = orig;
                }
            });
            let numeric = (plus? - minus?) / (2.0 * STEP);
            let err = relative_error(grad[i], numeric);
            report.probes += 1;
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = format!("{pname}[{i}]");
            }
        }
    }
    Ok(report)
}

/// A module plus its input, so the input gradient is checked like a parameter.
pub struct Probe<M> {
    pub module: M,
    pub input: Param<f64>,
}

impl<M: Parameters<f64>> Parameters<f64> for Probe<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
        self.module.visit(&join(prefix, "module"), f);
        f(&join(prefix, "input"), &self.input);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        self.module.visit_mut(&join(prefix, "module"), f);
        f(&join(prefix, "input"), &mut self.input);
    }
}

fn random_tensor(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape")
}

/// `Σ w ⊙ out` with fixed random weights, so every output entry matters.
fn project(ctx: &mut Ctx<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = ctx.graph.shape(out).to_vec();
    let w = random_tensor(&shape, 1.0, &mut stream(seed, Stream::Synthetic, &[u64::MAX]));
    let w = ctx.graph.constant(w);
    let y = ctx.graph.mul(out, w)?;
    ctx.graph.sum(y, None)
}

/// Tiny architecture for the full-model checks: 32 samples, hidden width 8.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        segment_len: 32,
        kernels: vec![5, 3, 3],
        conv_channels: vec![4, 6, 8],
        strides: vec![1, 2, 1],
        hidden_size: 8,
        num_layers: 1,
        num_heads: 2,
        ff_size: Some(16),
        transformer_dropout: 0.0,
        mvp_hidden: vec![8],
        emotion_hidden: vec![6],
    }
}

fn probe<M>(module: M, shape: &[usize], rng: &mut Rng) -> Probe<M> {
    Probe {
        module,
        input: Param::new(random_tensor(shape, 1.0, rng)),
    }
}

/// Every layer type, both losses, and the full pre-training and
/// classification paths of a tiny single-modality model.
pub fn standard_suite(seed: u64, probes_per_tensor: usize) -> Result<Vec<GradReport>> {
    let mut rng = stream(seed, Stream::BackboneInit, &[777]);
    let mut out = Vec::new();
    let k = probes_per_tensor;

    let mut p = probe(Linear::new(5, 4, &mut rng), &[3, 5], &mut rng);
    out.push(check("linear", &mut p, k, &|m, ctx| {
        let x = ctx.param("input", &m.input);
        let y = m.module.forward(ctx, "module", x)?;
        project(ctx, y, seed)
    })?);

    let mut p = probe(Conv1dLayer::new(3, 4, 5, 2, true, &mut rng), &[3, 17], &mut rng);
    out.push(check("conv1d", &mut p, k, &|m, ctx| {
        let x = ctx.param("input", &m.input);
        let y = m.module.forward(ctx, "module", x)?;
        project(ctx, y, seed)
    })?);

    let stack = Conv1dStack::new(2, &[5, 3, 3], &[4, 6, 8], &[1, 2, 1], &mut rng)?;
    let mut p = probe(stack, &[2, 32], &mut rng);
    out.push(check("conv1d_stack", &mut p, k, &|m, ctx| {
        let x = ctx.param("input", &m.input);
        let y = m.module.forward(ctx, "module", x)?;
        project(ctx, y, seed)
    })?);

    let mut ln = LayerNorm::new(6);
    ln.gamma = Param::new(random_tensor(&[6], 1.5, &mut rng));
    ln.beta = Param::new(random_tensor(&[6], 0.5, &mut rng));
    let mut p = probe(ln, &[4, 6], &mut rng);
    out.push(check("layer_norm", &mut p, k, &|m, ctx| {
        let x = ctx.param("input", &m.input);
        let y = m.module.forward(ctx, "module", x)?;
        project(ctx, y, seed)
    })?);

    let mut p = probe(MultiHeadAttention::new(8, 2, &mut rng)?, &[5, 8], &mut rng);
    out.push(check("attention", &mut p, k, &|m, ctx| {
        let x = ctx.param("input", &m.input);
        let (y, _) = m.module.forward(ctx, "module", x, 0.0)?;
        project(ctx, y, seed)
    })?);

    let mut p = probe(TransformerEncoder::new(2, 2, 8, 16, 0.0, &mut rng)?, &[5, 8], &mut rng);
    out.push(check("transformer", &mut p, k, &|m, ctx| {
        let x = ctx.param("input", &m.input);
        let y = m.module.forward(ctx, "module", x)?;
        project(ctx, y, seed)
    })?);

    let mut p = probe(Fcn::new(8, &[6, 4], 1, 0.0, &mut rng), &[1, 8], &mut rng);
    out.push(check("fcn", &mut p, k, &|m, ctx| {
        let x = ctx.param("input", &m.input);
        let (y, _) = m.module.forward(ctx, "module", x)?;
        project(ctx, y, seed)
    })?);

    let mut p = probe(Linear::new(1, 1, &mut rng), &[4, 1], &mut rng);
    out.push(check("bce_with_logits", &mut p, k, &|m, ctx| {
        let x = ctx.param("input", &m.input);
        bce_with_logits(&mut ctx.graph, x, &[1.0, 0.0, 0.0, 1.0])
    })?);

    let target = random_tensor(&[6, 2], 1.0, &mut rng);
    let mut p = probe(Linear::new(1, 1, &mut rng), &[6, 2], &mut rng);
    out.push(check("mse_masked", &mut p, k, &|m, ctx| {
        let x = ctx.param("input", &m.input);
        mse_masked(&mut ctx.graph, x, &target, &[false, true, true, false, true, false])
    })?);

    let cfg = tiny_config();
    let model = SingleModalityModel::<f64>::new(Modality::Ecg, cfg.clone(), Mode::Pretrain, seed)?;
    let signal = random_tensor(&[1, cfg.segment_len], 1.0, &mut rng);
    let mask = sample_mask(cfg.segment_len, 4, 0.25, &mut rng)?;
    let mut masked = signal.data().to_vec();
    mask.apply(&mut masked);
    let target = signal.transpose2()?;
    let mut m = model;
    out.push(check("model_pretrain_ecg", &mut m, k, &|m, ctx| {
        let x = m.input(ctx, &masked)?;
        let pred = m.forward_pretrain(ctx, "", x)?;
        mse_masked(&mut ctx.graph, pred, &target, &mask.mask)
    })?);

    let mut model = SingleModalityModel::<f64>::new(Modality::Eeg, cfg.clone(), Mode::Finetune, seed)?;
    let signal = random_tensor(&[Modality::Eeg.channel_count(), cfg.segment_len], 1.0, &mut rng);
    out.push(check("model_classify_eeg", &mut model, k, &|m, ctx| {
        let x = m.input(ctx, signal.data())?;
        let (logit, _) = m.forward_classify(ctx, "", x)?;
        bce_with_logits(&mut ctx.graph, logit, &[1.0])
    })?);

    Ok(out)
}

/// Runs [`standard_suite`] and returns the reports with the elapsed seconds.
pub fn run_suite(seed: u64) -> Result<(Vec<GradReport>, f64)> {
    let start = Instant::now();
    let reports = standard_suite(seed, 48)?;
    Ok((reports, start.elapsed().as_secs_f64()))
}
