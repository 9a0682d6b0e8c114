//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! computed eagerly; [`Tape::backward`] walks the records in reverse once and
//! returns a gradient for every node that depends on a trainable leaf.
//! Parameters live in a [`ParamStore`] outside the tape and are attached as
//! leaves at the start of each pass.

mod checkpoint;
mod gemm;
mod gradcheck;
mod optim;
mod params;
mod tensor;

use std::rc::Rc;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamStore, ParamVars};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Constant left operand of [`Tape::segment_matmul`]: a `batch × cols`
/// matrix whose columns are grouped into contiguous segments.
#[derive(Debug, Clone)]
pub struct SegmentedMatrix {
    pub batch: usize,
    pub cols: usize,
    /// Row-major `batch × cols`.
    pub values: Vec<f64>,
    /// Half-open column ranges, one per output group, in order.
    pub segments: Vec<(usize, usize)>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    MaxOverAxis {
        input: Var,
        argmax: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    SegmentMatMul {
        lhs: Rc<SegmentedMatrix>,
        rhs: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims2(t: &Tensor, op: &str) -> Result<(usize, usize), AdError> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(AdError::Shape(format!("{op} expects a matrix, got shape {s:?}"))),
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var, AdError> {
        if !value.is_finite() {
            return Err(AdError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var, AdError> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// A constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, AdError> {
        self.push(value, Op::Leaf, false, "constant")
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(AdError::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            &mut out,
            (n, 1),
            0.0,
        );
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(AdError::Shape(format!("add {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg, "add")
    }

    /// `a [m, n] + bias [n]`, broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, AdError> {
        let (m, n) = dims2(self.value(a), "add_bias")?;
        if self.value(bias).shape() != [n] {
            return Err(AdError::Shape(format!(
                "bias {:?} does not match {m}x{n}",
                self.value(bias).shape()
            )));
        }
        let b = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let rg = self.rg(&[a, bias]);
        self.push(Tensor::new(vec![m, n], data)?, Op::AddBias(a, bias), rg, "add_bias")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(AdError::Shape(format!("mul {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AdError> {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * factor).collect())?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AdError> {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x.max(0.0)).collect())?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg, "relu")
    }

    /// Maximum along `axis`, which is removed from the shape. Gradients flow
    /// to the first maximal entry of each slice.
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var, AdError> {
        let t = self.value(a);
        if axis >= t.shape().len() || t.shape()[axis] == 0 {
            return Err(AdError::Shape(format!(
                "max over axis {axis} of shape {:?}",
                t.shape()
            )));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        let data = t.data();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = base;
                for l in 1..len {
                    let idx = base + l * inner;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let rg = self.rg(&[a]);
        self.push(
            Tensor::new(shape, out)?,
            Op::MaxOverAxis { input: a, argmax },
            rg,
            "max_over_axis",
        )
    }

    /// Mean softmax cross-entropy of `logits [batch, classes]` against
    /// integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, AdError> {
        let (b, c) = dims2(self.value(logits), "softmax_cross_entropy")?;
        if labels.len() != b || labels.iter().any(|&l| l >= c) {
            return Err(AdError::Shape(format!(
                "{} labels for {b} rows of {c} classes",
                labels.len()
            )));
        }
        let mut probs = Vec::with_capacity(b * c);
        let mut loss = 0.0;
        for (row, &label) in self.value(logits).data().chunks(c).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = z.ln() + max;
            loss += (log_z - row[label]) / b as f64;
            probs.extend(row.iter().map(|x| (x - log_z).exp()));
        }
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
            "softmax_cross_entropy",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AdError> {
        let first = self
            .value(*inputs.first().ok_or_else(|| AdError::Shape("concat of nothing".into()))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(AdError::Shape(format!("concat axis {axis} of {first:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(AdError::Shape(format!("concat {first:?} with {s:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.rg(inputs);
        self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
            "concat",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AdError> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Reshape(a), rg, "reshape")
    }

    /// `out[b, g, k] = Σ_{p ∈ segment g} lhs[b, p] · rhs[p, k]` for a constant
    /// segmented `lhs` and `rhs [cols, k]`. Output shape `[batch, groups, k]`.
    pub fn segment_matmul(&mut self, lhs: Rc<SegmentedMatrix>, rhs: Var) -> Result<Var, AdError> {
        let (p, k) = dims2(self.value(rhs), "segment_matmul")?;
        if p != lhs.cols || lhs.values.len() != lhs.batch * lhs.cols {
            return Err(AdError::Shape(format!(
                "segment_matmul lhs {}x{} with rhs {p}x{k}",
                lhs.batch, lhs.cols
            )));
        }
        let (b, g) = (lhs.batch, lhs.segments.len());
        let mut out = vec![0.0; b * g * k];
        let w = self.value(rhs).data();
        for (gi, &(start, end)) in lhs.segments.iter().enumerate() {
            if end <= start {
                continue;
            }
            gemm::gemm(
                b,
                end - start,
                k,
                &lhs.values[start..],
                (lhs.cols, 1),
                &w[start * k..],
                (k, 1),
                &mut out[gi * k..],
                (g * k, 1),
                0.0,
            );
        }
        let rg = self.rg(&[rhs]);
        self.push(
            Tensor::new(vec![b, g, k], out)?,
            Op::SegmentMatMul { lhs, rhs },
            rg,
            "segment_matmul",
        )
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AdError> {
        if self.value(loss).numel() != 1 {
            return Err(AdError::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<(), AdError> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.value(*a), "matmul")?;
                let n = self.value(*b).shape()[1];
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |ga| {
                    // dA = dC · Bᵀ
                    gemm::gemm(m, n, k, g, (n, 1), bv, (1, n), ga, (k, 1), 1.0);
                });
                let av = self.value(*a).data();
                self.accumulate(grads, *b, |gb| {
                    // dB = Aᵀ · dC
                    gemm::gemm(k, m, n, av, (1, k), g, (n, 1), gb, (n, 1), 1.0);
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    self.accumulate(grads, *v, |gv| gv.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let n = self.value(*bias).numel();
                self.accumulate(grads, *bias, |gb| {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Mul(a, b) => {
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |ga| {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y * z;
                    }
                });
                let av = self.value(*a).data();
                self.accumulate(grads, *b, |gb| {
                    for ((x, y), z) in gb.iter_mut().zip(g).zip(av) {
                        *x += y * z;
                    }
                });
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * factor));
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(av) {
                        if *z > 0.0 {
                            *x += y;
                        }
                    }
                });
            }
            Op::MaxOverAxis { input, argmax } => {
                self.accumulate(grads, *input, |gi| {
                    for (&src, y) in argmax.iter().zip(g) {
                        gi[src] += y;
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).shape()[1];
                let scale = g[0] / labels.len() as f64;
                self.accumulate(grads, *logits, |gl| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.value(*v).shape()[*axis];
                    self.accumulate(grads, *v, |gv| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for (x, y) in gv[dst..dst + len * inner].iter_mut().zip(&g[src..src + len * inner]) {
                                *x += y;
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::SegmentMatMul { lhs, rhs } => {
                let k = self.value(*rhs).shape()[1];
                let (b, groups) = (lhs.batch, lhs.segments.len());
                self.accumulate(grads, *rhs, |gw| {
                    for (gi, &(start, end)) in lhs.segments.iter().enumerate() {
                        if end <= start {
                            continue;
                        }
                        // dW[seg] += lhs[:, seg]ᵀ · dOut[:, g, :]
                        gemm::gemm(
                            end - start,
                            b,
                            k,
                            &lhs.values[start..],
                            (1, lhs.cols),
                            &g[gi * k..],
                            (groups * k, 1),
                            &mut gw[start * k..],
                            (k, 1),
                            1.0,
                        );
                    }
                });
            }
        }
        Ok(())
    }
}
