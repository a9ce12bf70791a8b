//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value and enough
//! context to run its adjoint. Node indices are assigned in creation order,
//! which is a topological order, so the backward pass is a single reverse
//! sweep that visits each node once.

use std::collections::HashMap;

use super::kernels::{self, ImageDims};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    Sum(Var),
    MeanRows(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Powf(Var, f64),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    Slice { src: Var, offset: usize },
    Reshape(Var),
    Conv2d { input: Var, weight: Var, kernel: usize, cols: Vec<f64> },
    BatchNorm { input: Var, inv_std: Vec<f64> },
    AvgPool { input: Var, kernel: usize },
    MaxPool { input: Var, argmax: Vec<usize> },
    Downsample(Var),
    GlobalAvgPool(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records one forward computation. Single-threaded; build a fresh tape per
/// training step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

fn finite(what: &str, data: Vec<f64>, shape: Vec<usize>) -> Result<Tensor> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} output")));
    }
    Ok(Tensor::from_parts(shape, data))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Constants are leaves whose gradient nobody asks for.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    /// Records parameter `id` as a leaf; repeated calls return the same node
    /// so every use of a parameter feeds one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matmul output".into()));
        }
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(what, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        finite(what, data, ta.shape().to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    fn map(&mut self, a: Var, what: &str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        finite(what, data, t.shape().to_vec())
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.map(a, "scale", |x| x * k)?;
        Ok(self.push(value, Op::Scale(a, k)))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.map(a, "add_scalar", |x| x + k)?;
        Ok(self.push(value, Op::AddScalar(a)))
    }

    /// `[m, n] + [1, n]`, the row broadcast to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let (r, n2) = self.value(row).dims2()?;
        if r != 1 || n != n2 {
            return Err(shape_err("add_row", self.shape(a), self.shape(row)));
        }
        let (ta, tr) = (self.value(a).data(), self.value(row).data());
        let data = (0..m * n).map(|i| ta[i] + tr[i % n]).collect();
        let value = finite("add_row", data, vec![m, n])?;
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        let value = finite("sum", vec![s], vec![1])?;
        Ok(self.push(value, Op::Sum(a)))
    }

    /// Column means of a 2-D tensor: `[m, n]` → `[1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let t = self.value(a).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += t[i * n + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        let value = finite("mean_rows", out, vec![1, n])?;
        Ok(self.push(value, Op::MeanRows(a)))
    }

    /// `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, "relu", |x| if x > 0.0 { x } else { 0.0 })?;
        Ok(self.push(value, Op::Relu(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, "sigmoid", |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })?;
        Ok(self.push(value, Op::Sigmoid(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, "exp", f64::exp)?;
        Ok(self.push(value, Op::Exp(a)))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, "ln", f64::ln)?;
        Ok(self.push(value, Op::Ln(a)))
    }

    /// `x^p` for nonnegative `x`.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::Contract("powf of a negative value".into()));
        }
        let value = self.map(a, "powf", |x| x.powf(p))?;
        Ok(self.push(value, Op::Powf(a, p)))
    }

    /// Selects rows of a 2-D table (an embedding lookup).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (m, n) = t.dims2()?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::Vocabulary { index: bad, len: m });
        }
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(&t.data()[r * n..(r + 1) * n]);
        }
        let value = Tensor::new(vec![rows.len(), n], data)?;
        Ok(self.push(value, Op::GatherRows(table, rows.to_vec())))
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let n = self.value(*first).dims2()?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != n {
                return Err(shape_err("concat_rows", self.shape(*first), self.shape(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_parts(vec![rows, n], data);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Takes `prod(shape)` consecutive row-major values starting at `offset`
    /// and views them with `shape`.
    pub fn slice(&mut self, src: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        let t = self.value(src);
        if offset + len > t.numel() {
            return Err(Error::Shape(format!(
                "slice [{offset}, {}) of a tensor with {} values",
                offset + len,
                t.numel()
            )));
        }
        let value = Tensor::new(shape.to_vec(), t.data()[offset..offset + len].to_vec())?;
        Ok(self.push(value, Op::Slice { src, offset }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    fn image_dims(&self, v: Var, what: &str) -> Result<ImageDims> {
        ImageDims::from_shape(self.shape(v))
            .ok_or_else(|| Error::Shape(format!("{what} expects NCHW, got {:?}", self.shape(v))))
    }

    /// Same-padded stride-1 convolution; `weight` is `[Cout, Cin, k, k]`.
    pub fn conv2d(&mut self, input: Var, weight: Var) -> Result<Var> {
        let d = self.image_dims(input, "conv2d")?;
        let (cout, kernel) = match self.shape(weight) {
            &[co, ci, k1, k2] if ci == d.channels && k1 == k2 && k1 % 2 == 1 => (co, k1),
            s => return Err(shape_err("conv2d weight", s, &[d.channels])),
        };
        let cols = kernels::im2col(self.value(input).data(), d, kernel);
        let kk = d.channels * kernel * kernel;
        let p = d.batch * d.plane();
        let mut out = vec![0.0; cout * p];
        kernels::gemm(cout, kk, p, self.value(weight).data(), false, &cols, false, &mut out, false);
        let out = kernels::channel_major_to_batch_major(&out, d.batch, cout, d.plane());
        let value = finite("conv2d", out, vec![d.batch, cout, d.height, d.width])?;
        Ok(self.push(value, Op::Conv2d { input, weight, kernel, cols }))
    }

    pub fn batch_norm(&mut self, input: Var) -> Result<Var> {
        let d = self.image_dims(input, "batch_norm")?;
        let (out, inv_std) = kernels::batch_norm(self.value(input).data(), d);
        let value = finite("batch_norm", out, self.shape(input).to_vec())?;
        Ok(self.push(value, Op::BatchNorm { input, inv_std }))
    }

    pub fn avg_pool(&mut self, input: Var, kernel: usize) -> Result<Var> {
        let d = self.image_dims(input, "avg_pool")?;
        let out = kernels::avg_pool(self.value(input).data(), d, kernel);
        let value = Tensor::from_parts(self.shape(input).to_vec(), out);
        Ok(self.push(value, Op::AvgPool { input, kernel }))
    }

    pub fn max_pool(&mut self, input: Var, kernel: usize) -> Result<Var> {
        let d = self.image_dims(input, "max_pool")?;
        let (out, argmax) = kernels::max_pool(self.value(input).data(), d, kernel);
        let value = Tensor::from_parts(self.shape(input).to_vec(), out);
        Ok(self.push(value, Op::MaxPool { input, argmax }))
    }

    /// Halves the spatial size and doubles the channel count.
    pub fn downsample(&mut self, input: Var) -> Result<Var> {
        let d = self.image_dims(input, "downsample")?;
        if d.height % 2 != 0 || d.width % 2 != 0 {
            return Err(Error::Shape(format!(
                "downsample needs even spatial size, got {}x{}",
                d.height, d.width
            )));
        }
        let out = kernels::downsample(self.value(input).data(), d);
        let shape = vec![d.batch, 2 * d.channels, d.height / 2, d.width / 2];
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, Op::Downsample(input)))
    }

    /// `[B, C, H, W]` → `[B, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let d = self.image_dims(input, "global_avg_pool")?;
        let t = self.value(input).data();
        let out = t
            .chunks(d.plane())
            .map(|p| p.iter().sum::<f64>() / d.plane() as f64)
            .collect();
        let value = Tensor::from_parts(vec![d.batch, d.channels], out);
        Ok(self.push(value, Op::GlobalAvgPool(input)))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.value(logits).dims2()?;
        if labels.len() != b {
            return Err(Error::Shape(format!("{} labels for {b} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Contract(format!("label {bad} out of {c} classes")));
        }
        let t = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &t[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for j in 0..c {
                probs[i * c + j] = (row[j] - max).exp() / z;
            }
            loss += z.ln() + max - row[labels[i]];
        }
        let value = finite("cross_entropy", vec![loss / b as f64], vec![1])?;
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            out.push(match g {
                Some(g) => Some(finite("gradient", g, node.value.shape().to_vec())?),
                None => None,
            });
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, Var(i))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: out, params })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut send = |v: Var, delta: Vec<f64>| match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(delta),
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().expect("recorded 2-D");
                let n = val(*b).dims2().expect("recorded 2-D").1;
                let mut ga = vec![0.0; m * k];
                kernels::gemm(m, n, k, g, false, val(*b).data(), true, &mut ga, false);
                let mut gb = vec![0.0; k * n];
                kernels::gemm(k, m, n, val(*a).data(), true, g, false, &mut gb, false);
                send(*a, ga);
                send(*b, gb);
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                send(*a, g.iter().zip(tb).map(|(g, y)| g * y).collect());
                send(*b, g.iter().zip(ta).map(|(g, x)| g * x).collect());
            }
            Op::Scale(a, k) => send(*a, g.iter().map(|x| x * k).collect()),
            Op::AddScalar(a) => send(*a, g.to_vec()),
            Op::AddRow(a, row) => {
                let n = val(*row).numel();
                let mut gr = vec![0.0; n];
                for (i, x) in g.iter().enumerate() {
                    gr[i % n] += x;
                }
                send(*a, g.to_vec());
                send(*row, gr);
            }
            Op::Sum(a) => send(*a, vec![g[0]; val(*a).numel()]),
            Op::MeanRows(a) => {
                let (m, n) = val(*a).dims2().expect("recorded 2-D");
                let ga = (0..m * n).map(|i| g[i % n] / m as f64).collect();
                send(*a, ga);
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                send(*a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Exp(a) => {
                let y = node.value.data();
                send(*a, g.iter().zip(y).map(|(g, y)| g * y).collect());
            }
            Op::Ln(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| g / x).collect());
            }
            Op::Powf(a, p) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| g * p * x.powf(p - 1.0)).collect());
            }
            Op::GatherRows(table, rows) => {
                let (m, n) = val(*table).dims2().expect("recorded 2-D");
                let mut gt = vec![0.0; m * n];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        gt[r * n + j] += g[i * n + j];
                    }
                }
                send(*table, gt);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).numel();
                    send(p, g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::Slice { src, offset } => {
                let mut gs = vec![0.0; val(*src).numel()];
                gs[*offset..*offset + g.len()].copy_from_slice(g);
                send(*src, gs);
            }
            Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Conv2d { input, weight, kernel, cols } => {
                let d = ImageDims::from_shape(val(*input).shape()).expect("recorded NCHW");
                let cout = val(*weight).shape()[0];
                let kk = d.channels * kernel * kernel;
                let p = d.batch * d.plane();
                let gt = kernels::batch_major_to_channel_major(g, d.batch, cout, d.plane());
                let mut gw = vec![0.0; cout * kk];
                kernels::gemm(cout, p, kk, &gt, false, cols, true, &mut gw, false);
                let mut gcols = vec![0.0; kk * p];
                kernels::gemm(kk, cout, p, val(*weight).data(), true, &gt, false, &mut gcols, false);
                send(*weight, gw);
                send(*input, kernels::col2im(&gcols, d, *kernel));
            }
            Op::BatchNorm { input, inv_std } => {
                let d = ImageDims::from_shape(val(*input).shape()).expect("recorded NCHW");
                send(
                    *input,
                    kernels::batch_norm_backward(g, node.value.data(), inv_std, d),
                );
            }
            Op::AvgPool { input, kernel } => {
                let d = ImageDims::from_shape(val(*input).shape()).expect("recorded NCHW");
                send(*input, kernels::avg_pool_backward(g, d, *kernel));
            }
            Op::MaxPool { input, argmax } => {
                let mut gi = vec![0.0; g.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    gi[src] += g[o];
                }
                send(*input, gi);
            }
            Op::Downsample(input) => {
                let d = ImageDims::from_shape(val(*input).shape()).expect("recorded NCHW");
                send(*input, kernels::downsample_backward(g, d));
            }
            Op::GlobalAvgPool(input) => {
                let d = ImageDims::from_shape(val(*input).shape()).expect("recorded NCHW");
                let plane = d.plane();
                let gi = (0..val(*input).numel()).map(|i| g[i / plane] / plane as f64).collect();
                send(*input, gi);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = g[0] / b as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    gl[i * c + l] -= scale;
                }
                send(*logits, gl);
            }
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a recorded value, `None` if the loss does
    /// not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for every parameter the loss reached.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g)))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, v)| self.wrt(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_sign_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

        let n = tape.leaf(Tensor::full(&[2, 2], -0.5));
        let z = tape.relu(n).unwrap();
        assert_eq!(tape.value(z), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn relu_kink_has_zero_subgradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sum_gives_ones_and_half_square_gives_identity() {
        let mut store = ParamStore::new();
        let p = store
            .insert("p", Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.5]).unwrap())
            .unwrap();

        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let s = tape.sum(v).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(p).unwrap(), &Tensor::full(&[2, 3], 1.0));

        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq).unwrap();
        let half = tape.scale(s, 0.5).unwrap();
        let g = tape.backward(half).unwrap();
        assert_eq!(g.param(p).unwrap(), store.get(p));
    }

    #[test]
    fn repeated_param_use_sums_contributions() {
        let mut store = ParamStore::new();
        let p = store.insert("p", Tensor::scalar(3.0)).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, p);
        let b = tape.param(&store, p);
        assert_eq!(a, b);
        let s = tape.add(a, b).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(p).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_results_are_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1000.0));
        assert!(matches!(tape.exp(x), Err(Error::NonFinite(_))));
        let z = tape.leaf(Tensor::scalar(0.0));
        assert!(tape.ln(z).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::zeros(&[3, 5]));
        let ce = tape.cross_entropy(l, &[0, 2, 4]).unwrap();
        assert!((tape.value(ce).item().unwrap() - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::new(vec![1, 3], vec![0.0, 50.0, 0.0]).unwrap());
        let ce = tape.cross_entropy(l, &[1]).unwrap();
        assert!(tape.value(ce).item().unwrap() < 1e-20);
    }
}
