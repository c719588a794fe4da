use crate::autograd::Var;
use crate::error::Result;
use crate::nn::param::{join, Ctx, Param, Parameters};
use crate::rng::Rng;
use crate::tensor::Scalar;

/// Affine map `x·W + b` over the rows of `x`. `W` is stored `in × out`.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Param::kaiming_uniform(&[input, output], input, rng),
            bias: Param::kaiming_uniform(&[output], input, rng),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_size(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, ctx: &mut Ctx<T>, prefix: &str, x: Var) -> Result<Var> {
        let w = ctx.param(&join(prefix, "weight"), &self.weight);
        let b = ctx.param(&join(prefix, "bias"), &self.bias);
        let y = ctx.graph.matmul(x, w)?;
        ctx.graph.add_row(y, b)
    }
}

impl<T: Scalar> Parameters<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
