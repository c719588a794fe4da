use crate::autograd::Var;
use crate::error::Result;
use crate::nn::linear::Linear;
use crate::nn::param::{join, Ctx, Param, Parameters};
use crate::rng::Rng;
use crate::tensor::Scalar;

/// Fully-connected head: ReLU hidden layers with dropout, then a linear output.
#[derive(Debug, Clone)]
pub struct Fcn<T: Scalar> {
    pub layers: Vec<Linear<T>>,
    pub dropout_rate: f64,
}

impl<T: Scalar> Fcn<T> {
    pub fn new(input: usize, hidden: &[usize], output: usize, dropout_rate: f64, rng: &mut Rng) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Self {
            layers,
            dropout_rate,
        }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("non-empty").output_size()
    }

    /// Width of the last hidden activation (the input width if there are no
    /// hidden layers).
    pub fn penultimate_size(&self) -> usize {
        self.layers.last().expect("non-empty").input_size()
    }

    /// Returns `(output, last hidden activation)`. The hidden activation is
    /// taken after ReLU and before dropout.
    pub fn forward(&self, ctx: &mut Ctx<T>, prefix: &str, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        let mut penultimate = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(ctx, &join(prefix, &format!("fc{i}")), h)?;
            if i == last {
                return Ok((y, penultimate));
            }
            let a = ctx.graph.relu(y);
            penultimate = a;
            h = ctx.dropout(a, self.dropout_rate)?;
        }
        unreachable!("Fcn always has an output layer")
    }
}

impl<T: Scalar> Parameters<T> for Fcn<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("fc{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("fc{i}")), f);
        }
    }
}
