//! Post-norm Transformer encoder with multi-head scaled dot-product attention.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::linear::Linear;
use crate::nn::param::{join, Ctx, Param, Parameters};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct LayerNorm<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Param::ones(&[width]),
            beta: Param::zeros(&[width]),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<T>, prefix: &str, x: Var) -> Result<Var> {
        let g = ctx.param(&join(prefix, "gamma"), &self.gamma);
        let b = ctx.param(&join(prefix, "beta"), &self.beta);
        ctx.graph.layer_norm_rows(x, g, b)
    }
}

impl<T: Scalar> Parameters<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention<T: Scalar> {
    pub num_heads: usize,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(hidden: usize, num_heads: usize, rng: &mut Rng) -> Result<Self> {
        if num_heads == 0 || hidden % num_heads != 0 {
            return Err(Error::Contract(format!(
                "hidden size {hidden} not divisible by {num_heads} heads"
            )));
        }
        Ok(Self {
            num_heads,
            query: Linear::new(hidden, hidden, rng),
            key: Linear::new(hidden, hidden, rng),
            value: Linear::new(hidden, hidden, rng),
            output: Linear::new(hidden, hidden, rng),
        })
    }

    /// Returns the attended sequence and the per-head attention matrices.
    pub fn forward(
        &self,
        ctx: &mut Ctx<T>,
        prefix: &str,
        x: Var,
        dropout: f64,
    ) -> Result<(Var, Vec<Var>)> {
        let (_, d) = ctx.graph.value(x).dims2()?;
        let head_dim = d / self.num_heads;
        let q = self.query.forward(ctx, &join(prefix, "query"), x)?;
        let k = self.key.forward(ctx, &join(prefix, "key"), x)?;
        let v = self.value.forward(ctx, &join(prefix, "value"), x)?;
        let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());
        let mut heads = Vec::with_capacity(self.num_heads);
        let mut probs = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let (qh, kh, vh) = if self.num_heads == 1 {
                (q, k, v)
            } else {
                (
                    ctx.graph.slice(q, 1, lo, hi)?,
                    ctx.graph.slice(k, 1, lo, hi)?,
                    ctx.graph.slice(v, 1, lo, hi)?,
                )
            };
            let kt = ctx.graph.transpose(kh)?;
            let scores = ctx.graph.matmul(qh, kt)?;
            let scores = ctx.graph.scale(scores, scale);
            let p = ctx.graph.softmax_rows(scores)?;
            probs.push(p);
            let p = ctx.dropout(p, dropout)?;
            heads.push(ctx.graph.matmul(p, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            ctx.graph.concat(&heads, 1)?
        };
        let out = self.output.forward(ctx, &join(prefix, "output"), joined)?;
        Ok((out, probs))
    }
}

impl<T: Scalar> Parameters<T> for MultiHeadAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// `x ← LN(x + Drop(MHA(x)))`, then `x ← LN(x + Drop(W₂·Drop(relu(W₁x))))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer<T: Scalar> {
    pub attention: MultiHeadAttention<T>,
    pub norm1: LayerNorm<T>,
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub norm2: LayerNorm<T>,
}

impl<T: Scalar> EncoderLayer<T> {
    pub fn new(hidden: usize, heads: usize, ff: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(hidden, heads, rng)?,
            norm1: LayerNorm::new(hidden),
            ff1: Linear::new(hidden, ff, rng),
            ff2: Linear::new(ff, hidden, rng),
            norm2: LayerNorm::new(hidden),
        })
    }

    pub fn forward(
        &self,
        ctx: &mut Ctx<T>,
        prefix: &str,
        x: Var,
        dropout: f64,
    ) -> Result<(Var, Vec<Var>)> {
        let (a, probs) = self
            .attention
            .forward(ctx, &join(prefix, "attention"), x, dropout)?;
        let a = ctx.dropout(a, dropout)?;
        let x = ctx.graph.add(x, a)?;
        let x = self.norm1.forward(ctx, &join(prefix, "norm1"), x)?;
        let f = self.ff1.forward(ctx, &join(prefix, "ff1"), x)?;
        let f = ctx.graph.relu(f);
        let f = ctx.dropout(f, dropout)?;
        let f = self.ff2.forward(ctx, &join(prefix, "ff2"), f)?;
        let f = ctx.dropout(f, dropout)?;
        let x = ctx.graph.add(x, f)?;
        let x = self.norm2.forward(ctx, &join(prefix, "norm2"), x)?;
        Ok((x, probs))
    }
}

impl<T: Scalar> Parameters<T> for EncoderLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.attention.visit(&join(prefix, "attention"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
    }
}

#[derive(Debug, Clone)]
pub struct TransformerEncoder<T: Scalar> {
    pub hidden_size: usize,
    pub num_heads: usize,
    pub dropout_rate: f64,
    pub layers: Vec<EncoderLayer<T>>,
}

impl<T: Scalar> TransformerEncoder<T> {
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        hidden_size: usize,
        ff_size: usize,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let layers = (0..num_layers)
            .map(|_| EncoderLayer::new(hidden_size, num_heads, ff_size, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            hidden_size,
            num_heads,
            dropout_rate,
            layers,
        })
    }

    /// `seq ((L+1) × d)` → same shape. Also returns every layer's attention.
    pub fn forward_with_attention(
        &self,
        ctx: &mut Ctx<T>,
        prefix: &str,
        seq: Var,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let (_, d) = ctx.graph.value(seq).dims2()?;
        if d != self.hidden_size {
            return Err(Error::dim(
                "transformer_encode",
                format!("feature width {d} but hidden size is {}", self.hidden_size),
            ));
        }
        let mut x = seq;
        let mut all = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, probs) =
                layer.forward(ctx, &join(prefix, &format!("layer{i}")), x, self.dropout_rate)?;
            x = y;
            all.push(probs);
        }
        Ok((x, all))
    }

    pub fn forward(&self, ctx: &mut Ctx<T>, prefix: &str, seq: Var) -> Result<Var> {
        self.forward_with_attention(ctx, prefix, seq).map(|r| r.0)
    }
}

impl<T: Scalar> Parameters<T> for TransformerEncoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}

/// Fixed sinusoidal table: `sin(p/10000^{2i/d})` on even columns, `cos` on odd.
pub fn sinusoidal_positions<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for j in 0..d {
            let i2 = (j / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / d as f64);
            data.push(T::from_f64(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new([len, d], data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn heads_must_divide_hidden() {
        let mut rng = stream(0, Stream::BackboneInit, &[]);
        assert!(MultiHeadAttention::<f32>::new(10, 3, &mut rng).is_err());
    }

    #[test]
    fn output_shape_equals_input_shape() {
        let mut rng = stream(1, Stream::BackboneInit, &[]);
        let enc = TransformerEncoder::<f32>::new(2, 2, 256, 1024, 0.1, &mut rng).unwrap();
        let mut ctx = Ctx::eval();
        let x = Param::<f32>::normal(&[11, 256], 1.0, &mut rng).value;
        let xv = ctx.graph.constant(x);
        let y = enc.forward(&mut ctx, "t", xv).unwrap();
        assert_eq!(ctx.graph.shape(y), &[11, 256]);
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let mut rng = stream(1, Stream::BackboneInit, &[]);
        let enc = TransformerEncoder::<f32>::new(1, 2, 8, 32, 0.0, &mut rng).unwrap();
        let mut ctx = Ctx::eval();
        let xv = ctx.graph.constant(Tensor::zeros([4, 6]));
        assert!(matches!(
            enc.forward(&mut ctx, "t", xv),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn identical_tokens_attend_uniformly() {
        let mut rng = stream(2, Stream::BackboneInit, &[]);
        let enc = TransformerEncoder::<f64>::new(1, 2, 8, 32, 0.0, &mut rng).unwrap();
        let row: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let data: Vec<f64> = (0..5).flat_map(|_| row.clone()).collect();
        let mut ctx = Ctx::eval();
        let xv = ctx.graph.constant(Tensor::new([5, 8], data).unwrap());
        let (_, att) = enc.forward_with_attention(&mut ctx, "t", xv).unwrap();
        for &p in &att[0] {
            for &v in ctx.graph.value(p).data() {
                assert!((v - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sinusoid_table_first_rows() {
        let pe = sinusoidal_positions::<f64>(3, 4);
        assert_eq!(&pe.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.get(&[1, 0]) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.get(&[1, 2]) - (1.0 / 100.0f64).sin()).abs() < 1e-15);
    }
}
