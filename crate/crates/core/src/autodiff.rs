//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! computed eagerly; [`Graph::backward`] walks the record in reverse creation
//! order (which is a valid reverse topological order) and accumulates
//! vector-Jacobian products into every node that requires a gradient.
//!
//! One graph lives for exactly one training step: build, backward once, drop.

use crate::error::{LabError, Result};
use crate::tensor::{dot, gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Probability clamp used inside the log-losses.
pub const PROB_EPS: f64 = 1e-12;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Var, Var),
    Gather { table: Var, indices: Vec<usize> },
    ExpandRows { x: Var, times: usize },
    Reshape(Var),
    SumAll(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    WeightedBce { p: Var, coef_pos: Vec<f64>, coef_neg: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; all-zero when `v` did not contribute.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    let cols = shape.last().copied().unwrap_or(1);
    let rows = if cols == 0 {
        0
    } else {
        shape.iter().product::<usize>() / cols
    };
    (rows, cols)
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops the record so the graph can be reused for another step.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input (parameter or probe point).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A non-differentiable input (data, masks, labels).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(LabError::NonFinite(name));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(LabError::dim(op, sa, sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Batched product of `[B, n, k]` with `[B, k, m]`, or with `[B, m, k]`
    /// transposed when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(LabError::dim("bmm", &sa, &sb));
        }
        let (batch, n, k) = (sa[0], sa[1], sa[2]);
        let (kb, m) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(LabError::dim("bmm", &sa, &sb));
        }
        let mut out = vec![0.0; batch * n * m];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for bi in 0..batch {
                let ab = &da[bi * n * k..(bi + 1) * n * k];
                let bb = &db[bi * k * m..(bi + 1) * k * m];
                let ob = &mut out[bi * n * m..(bi + 1) * n * m];
                if trans_b {
                    gemm_nt(ab, bb, ob, n, k, m);
                } else {
                    gemm_nn(ab, bb, ob, n, k, m);
                }
            }
        }
        let t = Tensor::new(vec![batch, n, m], out)?;
        self.push("bmm", t, Op::BatchMatMul { a, b, trans_b }, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// `x[..., n] + bias[n]`, broadcast over every leading index.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.value(bias).len() != n {
            return Err(LabError::dim("add_row", self.shape(x), self.shape(bias)));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push("add_row", out, Op::AddRow(x, bias), &[x, bias])
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push("affine", out, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid_scalar);
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(gelu_scalar);
        self.push("gelu", out, Op::Gelu(x), &[x])
    }

    /// Softmax over the last axis. `mask[i] == false` excludes entry `i`; the
    /// mask, when given, covers every entry of `x` in row-major order.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = rows_of(xt.shape());
        if cols == 0 {
            return Err(LabError::Contract("softmax over an empty axis".into()));
        }
        if let Some(m) = mask {
            if m.len() != xt.len() {
                return Err(LabError::dim("softmax", xt.shape(), &[m.len()]));
            }
        }
        let mut out = vec![0.0; xt.len()];
        let data = xt.data();
        for r in 0..rows {
            let row = &data[r * cols..(r + 1) * cols];
            let keep = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(LabError::InvalidMask { op: "softmax" });
            }
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    let e = (v - max).exp();
                    o[j] = e;
                    sum += e;
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(xt.shape().to_vec(), out)?;
        self.push("softmax", t, Op::Softmax(x), &[x])
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = rows_of(xt.shape());
        if self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(LabError::dim("layer_norm", xt.shape(), self.shape(gain)));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; xt.len()];
        let mut xhat = vec![0.0; xt.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xt.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..cols {
                let h = (row[j] - mean) * is;
                xhat[r * cols + j] = h;
                out[r * cols + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(xt.shape().to_vec(), out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        self.push("layer_norm", t, op, &[x, gain, bias])
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(LabError::dim("concat", &sa, &sb));
        }
        let (rows, ca) = rows_of(&sa);
        let cb = *sb.last().unwrap();
        let mut out = Vec::with_capacity(rows * (ca + cb));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for r in 0..rows {
            out.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = ca + cb;
        let t = Tensor::new(shape, out)?;
        self.push("concat", t, Op::Concat(a, b), &[a, b])
    }

    /// Row lookup into a `[V, d]` table, producing `[indices.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(LabError::dim("gather_rows", tt.shape(), &[2]));
        }
        let (v, d) = (tt.shape()[0], tt.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &ix in indices {
            if ix >= v {
                return Err(LabError::Index { index: ix, size: v });
            }
            out.extend_from_slice(tt.row(ix));
        }
        let t = Tensor::new(vec![indices.len(), d], out)?;
        let op = Op::Gather {
            table,
            indices: indices.to_vec(),
        };
        self.push("gather_rows", t, op, &[table])
    }

    /// `[B, d]` → `[B·times, d]`, each row repeated `times` times in place.
    pub fn expand_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let xt = self.value(x);
        if xt.rank() != 2 {
            return Err(LabError::dim("expand_rows", xt.shape(), &[2]));
        }
        let (b, d) = (xt.shape()[0], xt.shape()[1]);
        let mut out = Vec::with_capacity(b * times * d);
        for r in 0..b {
            for _ in 0..times {
                out.extend_from_slice(xt.row(r));
            }
        }
        let t = Tensor::new(vec![b * times, d], out)?;
        self.push("expand_rows", t, Op::ExpandRows { x, times }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// `x @ w + b` for `x` of any rank ≥ 2; the last axis is contracted.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, cols) = rows_of(&shape);
        let flat = if shape.len() == 2 {
            x
        } else {
            self.reshape(x, &[rows, cols])?
        };
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add_row(y, b)?;
        }
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.value(w).shape()[1];
        self.reshape(y, &out_shape)
    }

    /// Summed cross-entropy of each logits row against its label.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lt = self.value(logits);
        let (rows, cols) = rows_of(lt.shape());
        if labels.len() != rows {
            return Err(LabError::dim("cross_entropy", lt.shape(), &[labels.len()]));
        }
        let mut probs = vec![0.0; lt.len()];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            if label >= cols {
                return Err(LabError::Index {
                    index: label,
                    size: cols,
                });
            }
            let row = &lt.data()[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            for j in 0..cols {
                probs[r * cols + j] = (row[j] - log_z).exp();
            }
            loss += log_z - row[label];
        }
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push("cross_entropy", Tensor::scalar(loss), op, &[logits])
    }

    /// Summed weighted binary cross-entropy,
    /// `Σ −(yᵢ·w₊·log pᵢ + (1−yᵢ)·w₋·log(1−pᵢ))`, over entries with
    /// `include[i]` (all entries when `include` is `None`).
    pub fn weighted_bce(
        &mut self,
        p: Var,
        targets: &[f64],
        w_pos: f64,
        w_neg: f64,
        include: Option<&[bool]>,
    ) -> Result<Var> {
        let pt = self.value(p);
        if pt.len() != targets.len() || include.is_some_and(|m| m.len() != targets.len()) {
            return Err(LabError::dim("weighted_bce", pt.shape(), &[targets.len()]));
        }
        let mut coef_pos = vec![0.0; targets.len()];
        let mut coef_neg = vec![0.0; targets.len()];
        let mut loss = 0.0;
        for (i, (&pi, &y)) in pt.data().iter().zip(targets).enumerate() {
            if include.is_some_and(|m| !m[i]) {
                continue;
            }
            let pc = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
            coef_pos[i] = y * w_pos;
            coef_neg[i] = (1.0 - y) * w_neg;
            loss -= coef_pos[i] * pc.ln() + coef_neg[i] * (1.0 - pc).ln();
        }
        let op = Op::WeightedBce {
            p,
            coef_pos,
            coef_neg,
        };
        self.push("weighted_bce", Tensor::scalar(loss), op, &[p])
    }

    /// Runs the reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(LabError::Contract(
                "backward already ran on this graph; reset it first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(LabError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            if is_leaf {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wants(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let bv = self.value(*b).data();
                self.accumulate_with(grads, *a, |da| gemm_nt(gd, bv, da, m, n, k));
                let av = self.value(*a).data();
                self.accumulate_with(grads, *b, |db| gemm_tn(av, gd, db, k, m, n));
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, n, k) = (sa[0], sa[1], sa[2]);
                let m = if *trans_b { sb[1] } else { sb[2] };
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, |da| {
                    for bi in 0..batch {
                        let gb = &gd[bi * n * m..(bi + 1) * n * m];
                        let bb = &bv[bi * k * m..(bi + 1) * k * m];
                        let dab = &mut da[bi * n * k..(bi + 1) * n * k];
                        if *trans_b {
                            gemm_nn(gb, bb, dab, n, m, k);
                        } else {
                            gemm_nt(gb, bb, dab, n, m, k);
                        }
                    }
                });
                self.accumulate_with(grads, *b, |db| {
                    for bi in 0..batch {
                        let gb = &gd[bi * n * m..(bi + 1) * n * m];
                        let ab = &av[bi * n * k..(bi + 1) * n * k];
                        let dbb = &mut db[bi * k * m..(bi + 1) * k * m];
                        if *trans_b {
                            // dB[m×k] = dCᵀ[m×n] · A[n×k]
                            gemm_tn(gb, ab, dbb, m, n, k);
                        } else {
                            // dB[k×m] = Aᵀ[k×n] · dC[n×m]
                            gemm_tn(ab, gb, dbb, k, n, m);
                        }
                    }
                });
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, |da| {
                    for j in 0..da.len() {
                        da[j] += gd[j] * bv[j];
                    }
                });
                self.accumulate_with(grads, *b, |db| {
                    for j in 0..db.len() {
                        db[j] += gd[j] * av[j];
                    }
                });
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                let n = g.last_dim();
                self.accumulate_with(grads, *bias, |db| {
                    for row in gd.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                });
            }
            Op::Affine(x, scale) => self.accumulate(grads, *x, g.map(|v| v * scale)),
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.accumulate_with(grads, *x, |dx| {
                    for j in 0..dx.len() {
                        dx[j] += gd[j] * y[j] * (1.0 - y[j]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                self.accumulate_with(grads, *x, |dx| {
                    for j in 0..dx.len() {
                        dx[j] += gd[j] * (1.0 - y[j] * y[j]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, |dx| {
                    for j in 0..dx.len() {
                        if xv[j] > 0.0 {
                            dx[j] += gd[j];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, |dx| {
                    for j in 0..dx.len() {
                        dx[j] += gd[j] * gelu_grad(xv[j]);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let (rows, cols) = rows_of(node.value.shape());
                self.accumulate_with(grads, *x, |dx| {
                    for r in 0..rows {
                        let s = r * cols..(r + 1) * cols;
                        let inner = dot(&gd[s.clone()], &y[s.clone()]);
                        for j in s {
                            dx[j] += y[j] * (gd[j] - inner);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = rows_of(node.value.shape());
                let gv = self.value(*gain).data();
                self.accumulate_with(grads, *x, |dx| {
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let base = r * cols;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..cols {
                            dxhat[j] = gd[base + j] * gv[j];
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xhat[base + j];
                        }
                        mean_d /= cols as f64;
                        mean_dx /= cols as f64;
                        for j in 0..cols {
                            dx[base + j] +=
                                inv_std[r] * (dxhat[j] - mean_d - xhat[base + j] * mean_dx);
                        }
                    }
                });
                self.accumulate_with(grads, *gain, |dg| {
                    for r in 0..rows {
                        for j in 0..cols {
                            dg[j] += gd[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                });
                self.accumulate_with(grads, *bias, |db| {
                    for row in gd.chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                });
            }
            Op::Concat(a, b) => {
                let ca = self.value(*a).last_dim();
                let cb = self.value(*b).last_dim();
                let rows = if ca + cb == 0 { 0 } else { gd.len() / (ca + cb) };
                self.accumulate_with(grads, *a, |da| {
                    for r in 0..rows {
                        for j in 0..ca {
                            da[r * ca + j] += gd[r * (ca + cb) + j];
                        }
                    }
                });
                self.accumulate_with(grads, *b, |db| {
                    for r in 0..rows {
                        for j in 0..cb {
                            db[r * cb + j] += gd[r * (ca + cb) + ca + j];
                        }
                    }
                });
            }
            Op::Gather { table, indices } => {
                let d = self.value(*table).last_dim();
                self.accumulate_with(grads, *table, |dt| {
                    for (r, &ix) in indices.iter().enumerate() {
                        for j in 0..d {
                            dt[ix * d + j] += gd[r * d + j];
                        }
                    }
                });
            }
            Op::ExpandRows { x, times } => {
                let d = self.value(*x).last_dim();
                let times = *times;
                self.accumulate_with(grads, *x, |dx| {
                    for (r, row) in gd.chunks(d).enumerate() {
                        let src = r / times;
                        for j in 0..d {
                            dx[src * d + j] += row[j];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                let t = Tensor::new(self.shape(*x).to_vec(), gd.to_vec())?;
                self.accumulate(grads, *x, t);
            }
            Op::SumAll(x) => {
                let s = gd[0];
                self.accumulate(grads, *x, Tensor::filled(self.shape(*x), s));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let s = gd[0];
                let cols = self.value(*logits).last_dim();
                self.accumulate_with(grads, *logits, |dl| {
                    for (j, p) in probs.iter().enumerate() {
                        dl[j] += s * p;
                    }
                    for (r, &label) in labels.iter().enumerate() {
                        dl[r * cols + label] -= s;
                    }
                });
            }
            Op::WeightedBce {
                p,
                coef_pos,
                coef_neg,
            } => {
                let s = gd[0];
                let pv = self.value(*p).data();
                self.accumulate_with(grads, *p, |dp| {
                    for j in 0..dp.len() {
                        let pj = pv[j];
                        if !(PROB_EPS..=1.0 - PROB_EPS).contains(&pj) {
                            continue;
                        }
                        dp[j] += s * (-coef_pos[j] / pj + coef_neg[j] / (1.0 - pj));
                    }
                });
            }
        }
        Ok(())
    }
}
