use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{Scalar, Tensor};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self { value, grad: None }
    }

    /// Uniform in `[-bound, bound]` with `bound = 1/√fan_in`.
    pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
            .collect();
        Self::new(Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn normal(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let dist = rand_distr::Normal::new(0.0, std).expect("std > 0");
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(rand_distr::Distribution::sample(&dist, rng)))
            .collect();
        Self::new(Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape.to_vec()))
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::new(Tensor::ones(shape.to_vec()))
    }

    pub fn accumulate(&mut self, delta: &[T], scale: T) {
        let grad = self
            .grad
            .get_or_insert_with(|| Tensor::zeros(self.value.shape().to_vec()));
        for (g, &d) in grad.data_mut().iter_mut().zip(delta) {
            *g += d * scale;
        }
    }
}

/// Dotted parameter path.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything that owns named parameters.
pub trait Parameters<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.value.numel());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.grad = None);
    }

    /// Folds the gradients recorded on `graph` into the parameters, scaled.
    fn accumulate_grads(&mut self, prefix: &str, graph: &Graph<T>, scale: T) {
        self.visit_mut(prefix, &mut |name, p| {
            if let Some(g) = graph.param_grad(name) {
                p.accumulate(g, scale);
            }
        });
    }

    /// SHA-256 over names, shapes, and raw parameter bytes.
    fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        self.visit("", &mut |name, p| {
            h.update(name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            buf.clear();
            for &v in p.value.data() {
                v.to_le_bytes_vec(&mut buf);
            }
            h.update(&buf);
        });
        hex::encode(h.finalize())
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, p| ok &= p.value.all_finite());
        ok
    }
}

/// Per-pass state: the graph being recorded, train/eval mode, and dropout
/// randomness.
pub struct Ctx<T: Scalar> {
    pub graph: Graph<T>,
    pub train: bool,
    rng: Rng,
}

impl<T: Scalar> Ctx<T> {
    pub fn eval() -> Self {
        Self {
            graph: Graph::new(),
            train: false,
            rng: rng::stream(0, rng::Stream::Dropout, &[]),
        }
    }

    pub fn train(dropout_rng: Rng) -> Self {
        Self {
            graph: Graph::new(),
            train: true,
            rng: dropout_rng,
        }
    }

    pub fn param(&mut self, name: &str, p: &Param<T>) -> Var {
        self.graph.param(name, &p.value)
    }

    /// Inverted dropout: survivors are scaled by `1/(1−p)`; identity in eval.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !self.train || p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::Domain(format!("dropout rate {p} must be < 1")));
        }
        let shape = self.graph.shape(x).to_vec();
        let keep = T::from_f64(1.0 / (1.0 - p));
        let n = shape.iter().product();
        let mask = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let m = self.graph.constant(Tensor::new(shape, mask)?);
        self.graph.mul(x, m)
    }

    /// Runs `f` with dropout disabled.
    pub fn eval_scope<R>(&mut self, f: impl FnOnce(&mut Self) -> R) -> R {
        let was = self.train;
        self.train = false;
        let r = f(self);
        self.train = was;
        r
    }
}
