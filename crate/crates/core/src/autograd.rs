//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! A [`Graph`] owns every value produced during one forward pass. Nodes are
//! appended in execution order, so the tape is topologically sorted by
//! construction and [`Graph::backward`] walks it once in reverse.
//!
//! Parameters live outside the graph (see [`crate::nn::Param`]); a forward pass
//! copies them in as named leaves and the trainer reads their gradients back
//! out after `backward`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Reduce {
        x: Var,
        kind: Reduce,
        axis: Option<usize>,
        // Flat input index feeding each output element (max only).
        argmax: Vec<usize>,
    },
    Transpose(Var),
    Reshape(Var),
    AddRow(Var, Var),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<String, Var>,
    param_order: Vec<String>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const LN_EPS: f64 = 1e-5;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Leaf that participates in differentiation.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Registers a named trainable leaf. Repeated registration of the same
    /// name returns the existing node, so shared use accumulates gradients.
    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.variable(value.clone());
        self.params.insert(name.to_string(), v);
        self.param_order.push(name.to_string());
        v
    }

    /// Registers a named leaf as a constant (frozen parameter).
    pub fn frozen(&mut self, value: &Tensor<T>) -> Var {
        self.constant(value.clone())
    }

    /// Stop-gradient: a constant copy of `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// Registered parameter names in first-use order.
    pub fn param_names(&self) -> &[String] {
        &self.param_order
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grad(&self, name: &str) -> Option<&[T]> {
        self.param_var(name).and_then(|v| self.grad(v))
    }

    // ---- elementwise ---------------------------------------------------

    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(sa.to_vec())
        } else if self.value(b).numel() == 1 {
            Ok(sa.to_vec())
        } else if self.value(a).numel() == 1 {
            Ok(sb.to_vec())
        } else {
            Err(Error::dim(op, format!("cannot broadcast {:?} with {:?}", sa, sb)))
        }
    }

    fn zip_with(&self, a: Var, b: Var, shape: Vec<usize>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n = shape.iter().product::<usize>();
        let data = (0..n)
            .map(|i| {
                let x = if va.len() == 1 { va[0] } else { va[i] };
                let y = if vb.len() == 1 { vb[0] } else { vb[i] };
                f(x, y)
            })
            .collect();
        Tensor::new(shape, data).expect("broadcast shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape("add", a, b)?;
        let out = self.zip_with(a, b, shape, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape("sub", a, b)?;
        let out = self.zip_with(a, b, shape, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape("mul", a, b)?;
        let out = self.zip_with(a, b, shape, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, factor), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::AddScalar(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        let rg = self.rg(x);
        self.push(out, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|v| **v <= T::zero()) {
            return Err(Error::Domain(format!(
                "log of non-positive value {}",
                bad.as_f64()
            )));
        }
        let out = self.value(x).map(|v| v.ln());
        let rg = self.rg(x);
        Ok(self.push(out, Op::Log(x), rg))
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(Reduce::Sum, x, axis)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(Reduce::Mean, x, axis)
    }

    pub fn max(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(Reduce::Max, x, axis)
    }

    pub fn reduce(&mut self, kind: Reduce, x: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(Error::Domain("reduction over an empty tensor".into()));
        }
        let shape = t.shape().to_vec();
        let (outer, n, inner, out_shape) = match axis {
            None => (1, t.numel(), 1, vec![]),
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::dim(
                        "reduce",
                        format!("axis {} out of range for rank {}", ax, shape.len()),
                    ));
                }
                let outer = shape[..ax].iter().product();
                let inner = shape[ax + 1..].iter().product();
                let mut out_shape = shape.clone();
                out_shape.remove(ax);
                (outer, shape[ax], inner, out_shape)
            }
        };
        let data = t.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        let mut acc = T::zero();
                        for j in 0..n {
                            acc += data[at(j)];
                        }
                        if kind == Reduce::Mean {
                            acc = acc / T::from_f64(n as f64);
                        }
                        out.push(acc);
                    }
                    Reduce::Max => {
                        let mut best = at(0);
                        for j in 1..n {
                            // strict: first index wins on ties
                            if data[at(j)] > data[best] {
                                best = at(j);
                            }
                        }
                        argmax.push(best);
                        out.push(data[best]);
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::Reduce {
                x,
                kind,
                axis,
                argmax,
            },
            rg,
        ))
    }

    // ---- linear algebra and shape ---------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!(
                    "inner extents disagree: {:?} · {:?}",
                    self.shape(a),
                    self.shape(b)
                ),
            ));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose2()?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// `x (m×n) + row (n)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(row).numel() != n {
            return Err(Error::dim(
                "add_row",
                format!("row of {} values for {}×{}", self.value(row).numel(), m, n),
            ));
        }
        let r = self.value(row).data().to_vec();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, &b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.value(x).dims2()?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    /// Per-row layer normalization with affine `gamma`, `beta` of width n.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(Error::dim("layer_norm", "affine width mismatch"));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let nf = T::from_f64(n as f64);
        let eps = T::from_f64(LN_EPS);
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new([m, n], out)?,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Cross-correlation of `x (c_in×t)` with `w (c_out×c_in×k)` plus bias,
    /// zero padding `pad` on both sides.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, t) = self.value(x).dims2()?;
        let ws = self.shape(w).to_vec();
        let [c_out, wc_in, k] = ws[..] else {
            return Err(Error::dim("conv1d", format!("weight shape {:?}", ws)));
        };
        if wc_in != c_in {
            return Err(Error::dim(
                "conv1d",
                format!("input has {} channels, kernel expects {}", c_in, wc_in),
            ));
        }
        if self.value(b).numel() != c_out {
            return Err(Error::dim("conv1d", "bias width mismatch"));
        }
        if stride == 0 || t + 2 * pad < k {
            return Err(Error::dim(
                "conv1d",
                format!("length {} too short for kernel {} with padding {}", t, k, pad),
            ));
        }
        let t_out = (t + 2 * pad - k) / stride + 1;
        let xs = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); c_out * t_out];
        for co in 0..c_out {
            let orow = &mut out[co * t_out..(co + 1) * t_out];
            orow.iter_mut().for_each(|v| *v = bv[co]);
            for ci in 0..c_in {
                let xrow = &xs[ci * t..(ci + 1) * t];
                for kk in 0..k {
                    let wt = wv[(co * c_in + ci) * k + kk];
                    let off = kk as isize - pad as isize;
                    let (lo, hi) = conv_range(off, stride, t, t_out);
                    if lo >= hi {
                        continue;
                    }
                    if stride == 1 {
                        let base = (lo as isize + off) as usize;
                        for (o, &xv) in orow[lo..hi].iter_mut().zip(&xrow[base..]) {
                            *o += wt * xv;
                        }
                    } else {
                        for (to, o) in orow.iter_mut().enumerate().take(hi).skip(lo) {
                            let idx = (to * stride) as isize + off;
                            *o += wt * xrow[idx as usize];
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::new([c_out, t_out], out)?,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::dim("concat", "need at least one part and axis 0 or 1"));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.value(p).dims2())
            .collect::<Result<_>>()?;
        let out = if axis == 0 {
            let c = dims[0].1;
            if dims.iter().any(|d| d.1 != c) {
                return Err(Error::dim("concat", format!("column counts differ: {:?}", dims)));
            }
            let mut data = Vec::new();
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            let r = dims.iter().map(|d| d.0).sum::<usize>();
            Tensor::new([r, c], data)?
        } else {
            let r = dims[0].0;
            if dims.iter().any(|d| d.0 != r) {
                return Err(Error::dim("concat", format!("row counts differ: {:?}", dims)));
            }
            let c = dims.iter().map(|d| d.1).sum::<usize>();
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                for (&p, d) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&self.value(p).data()[i * d.1..(i + 1) * d.1]);
                }
            }
            Tensor::new([r, c], data)?
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Rows or columns `[start, end)` of a rank-2 tensor.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || start >= end || end > extent {
            return Err(Error::dim(
                "slice",
                format!("[{}, {}) on axis {} of {}×{}", start, end, axis, r, c),
            ));
        }
        let data = self.value(x).data();
        let out = if axis == 0 {
            Tensor::new([end - start, c], data[start * c..end * c].to_vec())?
        } else {
            let w = end - start;
            let mut v = Vec::with_capacity(r * w);
            for i in 0..r {
                v.extend_from_slice(&data[i * c + start..i * c + end]);
            }
            Tensor::new([r, w], v)?
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Slice { x, axis, start }, rg))
    }

    /// Mean binary cross-entropy of `logits` against {0,1} `labels`, in the
    /// stable form `max(z,0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != labels.len() {
            return Err(Error::dim(
                "bce_with_logits",
                format!("{} logits vs {} labels", z.len(), labels.len()),
            ));
        }
        if z.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != T::zero() && y != T::one()) {
            return Err(Error::Domain(format!("label {} outside {{0,1}}", bad.as_f64())));
        }
        let total: T = z
            .iter()
            .zip(labels)
            .map(|(&z, &y)| stable_bce(z, y))
            .sum();
        let loss = total / T::from_f64(z.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Populates gradients for every node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Gradient for a possibly scalar-broadcast operand.
    fn unbroadcast(&self, v: Var, full: Vec<T>) -> Vec<T> {
        if self.value(v).numel() == 1 && full.len() != 1 {
            vec![full.into_iter().sum()]
        } else {
            full
        }
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        // Borrow the op immutably while computing input gradients, then apply.
        let mut updates: Vec<(Var, Vec<T>)> = Vec::new();
        let node = &self.nodes[i];
        let out = node.value.data();
        let at = |v: Var| &self.nodes[v.0].value;
        let bcast = |v: Var, k: usize| -> T {
            let d = at(v).data();
            if d.len() == 1 {
                d[0]
            } else {
                d[k]
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.rg(*a) {
                    updates.push((*a, self.unbroadcast(*a, g.to_vec())));
                }
                if self.rg(*b) {
                    updates.push((*b, self.unbroadcast(*b, g.to_vec())));
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    updates.push((*a, self.unbroadcast(*a, g.to_vec())));
                }
                if self.rg(*b) {
                    let neg = g.iter().map(|&v| -v).collect();
                    updates.push((*b, self.unbroadcast(*b, neg)));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = g.iter().enumerate().map(|(k, &gv)| gv * bcast(*b, k)).collect();
                    updates.push((*a, self.unbroadcast(*a, d)));
                }
                if self.rg(*b) {
                    let d = g.iter().enumerate().map(|(k, &gv)| gv * bcast(*a, k)).collect();
                    updates.push((*b, self.unbroadcast(*b, d)));
                }
            }
            Op::Scale(x, f) => updates.push((*x, g.iter().map(|&v| v * *f).collect())),
            Op::AddScalar(x) => updates.push((*x, g.to_vec())),
            Op::Relu(x) => {
                let xs = at(*x).data();
                let d = g
                    .iter()
                    .zip(xs)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                updates.push((*x, d));
            }
            Op::Sigmoid(x) => {
                let d = g
                    .iter()
                    .zip(out)
                    .map(|(&gv, &s)| gv * s * (T::one() - s))
                    .collect();
                updates.push((*x, d));
            }
            Op::Exp(x) => {
                let d = g.iter().zip(out).map(|(&gv, &e)| gv * e).collect();
                updates.push((*x, d));
            }
            Op::Log(x) => {
                let xs = at(*x).data();
                let d = g.iter().zip(xs).map(|(&gv, &xv)| gv / xv).collect();
                updates.push((*x, d));
            }
            Op::Reduce {
                x,
                kind,
                axis,
                argmax,
            } => {
                let xt = at(*x);
                let shape = xt.shape();
                let (outer, n, inner) = match axis {
                    None => (1, xt.numel(), 1),
                    Some(ax) => (
                        shape[..*ax].iter().product(),
                        shape[*ax],
                        shape[ax + 1..].iter().product(),
                    ),
                };
                let mut d = vec![T::zero(); xt.numel()];
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        let scale = if *kind == Reduce::Mean {
                            T::one() / T::from_f64(n as f64)
                        } else {
                            T::one()
                        };
                        for o in 0..outer {
                            for ii in 0..inner {
                                let gv = g[o * inner + ii] * scale;
                                for j in 0..n {
                                    d[o * n * inner + j * inner + ii] = gv;
                                }
                            }
                        }
                    }
                    Reduce::Max => {
                        for (k, &src) in argmax.iter().enumerate() {
                            d[src] += g[k];
                        }
                    }
                }
                updates.push((*x, d));
            }
            Op::MatMul(a, b) => {
                let (m, k) = at(*a).dims2().expect("matrix");
                let (_, n) = at(*b).dims2().expect("matrix");
                if self.rg(*a) {
                    // g (m×n) · bᵀ (n×k)
                    updates.push((*a, matmul_nt_raw(g, at(*b).data(), m, n, k)));
                }
                if self.rg(*b) {
                    // aᵀ (k×m) · g (m×n)
                    updates.push((*b, matmul_tn_raw(at(*a).data(), g, m, k, n)));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = at(*x).dims2().expect("matrix");
                // output is c×r
                let mut d = vec![T::zero(); r * c];
                for i2 in 0..c {
                    for j in 0..r {
                        d[j * c + i2] = g[i2 * r + j];
                    }
                }
                updates.push((*x, d));
            }
            Op::Reshape(x) => updates.push((*x, g.to_vec())),
            Op::AddRow(x, row) => {
                let n = at(*row).numel();
                if self.rg(*x) {
                    updates.push((*x, g.to_vec()));
                }
                if self.rg(*row) {
                    let mut d = vec![T::zero(); n];
                    for chunk in g.chunks(n) {
                        for (a, &v) in d.iter_mut().zip(chunk) {
                            *a += v;
                        }
                    }
                    updates.push((*row, d));
                }
            }
            Op::SoftmaxRows(x) => {
                let (_, n) = at(*x).dims2().expect("matrix");
                let mut d = vec![T::zero(); g.len()];
                for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                updates.push((*x, d));
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = at(*x).dims2().expect("matrix");
                let gm = at(*gamma).data();
                if self.rg(*x) {
                    let nf = T::from_f64(n as f64);
                    let mut d = vec![T::zero(); m * n];
                    for r in 0..m {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..n {
                            let gh = g[r * n + j] * gm[j];
                            s1 += gh;
                            s2 += gh * xhat[r * n + j];
                        }
                        for j in 0..n {
                            let gh = g[r * n + j] * gm[j];
                            d[r * n + j] =
                                inv_std[r] / nf * (nf * gh - s1 - xhat[r * n + j] * s2);
                        }
                    }
                    updates.push((*x, d));
                }
                if self.rg(*gamma) {
                    let mut d = vec![T::zero(); n];
                    for r in 0..m {
                        for j in 0..n {
                            d[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                    updates.push((*gamma, d));
                }
                if self.rg(*beta) {
                    let mut d = vec![T::zero(); n];
                    for r in 0..m {
                        for j in 0..n {
                            d[j] += g[r * n + j];
                        }
                    }
                    updates.push((*beta, d));
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (c_in, t) = at(*x).dims2().expect("matrix");
                let ws = at(*w).shape();
                let (c_out, k) = (ws[0], ws[2]);
                let t_out = g.len() / c_out;
                let xs = at(*x).data();
                let wv = at(*w).data();
                let (need_x, need_w) = (self.rg(*x), self.rg(*w));
                let mut dx = if need_x { vec![T::zero(); c_in * t] } else { vec![] };
                let mut dw = if need_w { vec![T::zero(); wv.len()] } else { vec![] };
                for co in 0..c_out {
                    let grow = &g[co * t_out..(co + 1) * t_out];
                    for ci in 0..c_in {
                        let xrow = &xs[ci * t..(ci + 1) * t];
                        for kk in 0..k {
                            let widx = (co * c_in + ci) * k + kk;
                            let off = kk as isize - *pad as isize;
                            let (lo, hi) = conv_range(off, *stride, t, t_out);
                            if lo >= hi {
                                continue;
                            }
                            let wt = wv[widx];
                            let mut acc = T::zero();
                            for (to, &gv) in grow.iter().enumerate().take(hi).skip(lo) {
                                let idx = ((to * stride) as isize + off) as usize;
                                if need_x {
                                    dx[ci * t + idx] += wt * gv;
                                }
                                acc += gv * xrow[idx];
                            }
                            if need_w {
                                dw[widx] += acc;
                            }
                        }
                    }
                }
                if need_x {
                    updates.push((*x, dx));
                }
                if need_w {
                    updates.push((*w, dw));
                }
                if self.rg(*b) {
                    let db = g.chunks(t_out).map(|row| row.iter().copied().sum()).collect();
                    updates.push((*b, db));
                }
            }
            Op::Concat { parts, axis } => {
                let dims: Vec<(usize, usize)> = parts
                    .iter()
                    .map(|&p| at(p).dims2().expect("matrix"))
                    .collect();
                if *axis == 0 {
                    let mut offset = 0;
                    for (&p, d) in parts.iter().zip(&dims) {
                        let len = d.0 * d.1;
                        if self.rg(p) {
                            updates.push((p, g[offset..offset + len].to_vec()));
                        }
                        offset += len;
                    }
                } else {
                    let total_c: usize = dims.iter().map(|d| d.1).sum();
                    let mut col = 0;
                    for (&p, d) in parts.iter().zip(&dims) {
                        if self.rg(p) {
                            let mut v = Vec::with_capacity(d.0 * d.1);
                            for r in 0..d.0 {
                                v.extend_from_slice(&g[r * total_c + col..r * total_c + col + d.1]);
                            }
                            updates.push((p, v));
                        }
                        col += d.1;
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                let (r, c) = at(*x).dims2().expect("matrix");
                let mut d = vec![T::zero(); r * c];
                if *axis == 0 {
                    d[start * c..start * c + g.len()].copy_from_slice(g);
                } else {
                    let w = g.len() / r;
                    for i2 in 0..r {
                        d[i2 * c + start..i2 * c + start + w]
                            .copy_from_slice(&g[i2 * w..(i2 + 1) * w]);
                    }
                }
                updates.push((*x, d));
            }
            Op::BceWithLogits { logits, labels } => {
                let z = at(*logits).data();
                let scale = g[0] / T::from_f64(z.len() as f64);
                let d = z
                    .iter()
                    .zip(labels)
                    .map(|(&zv, &y)| (sigmoid(zv) - y) * scale)
                    .collect();
                updates.push((*logits, d));
            }
        }
        for (v, d) in updates {
            self.accumulate(v, d);
        }
    }
}

/// Output positions `[lo, hi)` whose tap at offset `off` lands inside `[0, t)`.
fn conv_range(off: isize, stride: usize, t: usize, t_out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let last = t as isize - 1 - off;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(t_out as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn stable_bce<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln()
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}
