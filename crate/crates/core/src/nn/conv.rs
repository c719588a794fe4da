//! Stacked 1-D convolutional encoder.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::param::{join, Ctx, Param, Parameters};
use crate::rng::Rng;
use crate::tensor::Scalar;

/// One convolution: weight `out × in × kernel`, bias `out`, symmetric zero
/// padding of `(kernel − 1)/2` samples, followed by ReLU when `relu` is set.
#[derive(Debug, Clone)]
pub struct Conv1dLayer<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub relu: bool,
}

impl<T: Scalar> Conv1dLayer<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        relu: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel;
        Self {
            weight: Param::kaiming_uniform(&[out_channels, in_channels, kernel], fan_in, rng),
            bias: Param::kaiming_uniform(&[out_channels], fan_in, rng),
            stride,
            relu,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, ctx: &mut Ctx<T>, prefix: &str, x: Var) -> Result<Var> {
        let w = ctx.param(&join(prefix, "weight"), &self.weight);
        let b = ctx.param(&join(prefix, "bias"), &self.bias);
        let pad = (self.kernel() - 1) / 2;
        let y = ctx.graph.conv1d(x, w, b, self.stride, pad)?;
        Ok(if self.relu { ctx.graph.relu(y) } else { y })
    }
}

impl<T: Scalar> Parameters<T> for Conv1dLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct Conv1dStack<T: Scalar> {
    pub layers: Vec<Conv1dLayer<T>>,
}

impl<T: Scalar> Conv1dStack<T> {
    /// Builds a ReLU stack. `kernels`, `channels`, and `strides` must have equal
    /// length and every kernel must be odd so padding is symmetric.
    pub fn new(
        in_channels: usize,
        kernels: &[usize],
        channels: &[usize],
        strides: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        if kernels.is_empty() || kernels.len() != channels.len() || kernels.len() != strides.len()
        {
            return Err(Error::Contract(format!(
                "conv stack needs equal non-empty kernel/channel/stride lists, got {}/{}/{}",
                kernels.len(),
                channels.len(),
                strides.len()
            )));
        }
        if let Some(k) = kernels.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::Contract(format!("kernel size {k} must be odd")));
        }
        if strides.contains(&0) {
            return Err(Error::Contract("strides must be ≥ 1".into()));
        }
        let mut c_in = in_channels;
        let layers = kernels
            .iter()
            .zip(channels)
            .zip(strides)
            .map(|((&k, &c), &s)| {
                let layer = Conv1dLayer::new(c_in, c, k, s, true, rng);
                c_in = c;
                layer
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().expect("non-empty").out_channels()
    }

    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// `signal (channels × time)` → `features × ⌈time/stride⌉`.
    pub fn forward(&self, ctx: &mut Ctx<T>, prefix: &str, signal: Var) -> Result<Var> {
        let c = ctx.graph.shape(signal).first().copied().unwrap_or(0);
        if ctx.graph.shape(signal).len() != 2 || c != self.in_channels() {
            return Err(Error::dim(
                "conv1d_apply",
                format!(
                    "signal shape {:?} but encoder expects {} channels",
                    ctx.graph.shape(signal),
                    self.in_channels()
                ),
            ));
        }
        let mut h = signal;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(ctx, &join(prefix, &format!("conv{i}")), h)?;
        }
        Ok(h)
    }
}

impl<T: Scalar> Parameters<T> for Conv1dStack<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("conv{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("conv{i}")), f);
        }
    }
}

/// Number of input samples that influence one output position:
/// `1 + Σᵢ (kᵢ − 1)·Πⱼ<ᵢ sⱼ`.
pub fn receptive_field(kernels: &[usize], strides: &[usize]) -> Result<usize> {
    if kernels.is_empty() || kernels.len() != strides.len() {
        return Err(Error::Contract(format!(
            "receptive_field needs equal non-empty lists, got {} kernels and {} strides",
            kernels.len(),
            strides.len()
        )));
    }
    if kernels.iter().chain(strides).any(|&v| v == 0) {
        return Err(Error::Contract("kernels and strides must be ≥ 1".into()));
    }
    let mut rf = 1;
    let mut jump = 1;
    for (&k, &s) in kernels.iter().zip(strides) {
        rf += (k - 1) * jump;
        jump *= s;
    }
    Ok(rf)
}
