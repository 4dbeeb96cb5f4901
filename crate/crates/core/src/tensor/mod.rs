//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its tensors; [`Tape::backward`]
//! replays the record in reverse and accumulates gradients into the leaves.
//! Tensors are row-major dense buffers. The op set is exactly what the model
//! pipeline needs: matmul, elementwise math, softmax, layer norm, dropout,
//! concatenation, plus masked losses so targets with missing entries
//! differentiate cleanly.
//!
//! Tapes are single-threaded; run one tape per thread for per-sample
//! parallelism.

mod gradcheck;

pub use gradcheck::grad_check;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a tensor recorded on a [`Tape`].
pub type NodeId = usize;

/// Negative slope of `leaky_relu`.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Epsilon inside the layer-norm square root; constant rows normalize to zero.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A dense tensor living on a tape.
#[derive(Debug, Clone)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
    needs_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Broadcast a row vector over every row of a matrix.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Multiply by a single-element tensor (learnable scalar).
    MulScalar(NodeId, NodeId),
    /// Multiply by a compile-time constant.
    Scale(NodeId, S),
    Relu(NodeId),
    LeakyRelu(NodeId),
    Gelu(NodeId),
    Exp(NodeId),
    Softmax(NodeId, usize),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    },
    Dropout {
        x: NodeId,
        mask: Vec<S>,
    },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    Transpose(NodeId),
    Reshape(NodeId),
    SelectRow(NodeId, usize),
    Sum(NodeId),
    /// Mean absolute error over target entries that are not NaN.
    MaskedMae {
        pred: NodeId,
        target: Vec<S>,
    },
    /// Mean sigmoid cross-entropy over target entries that are not NaN.
    MaskedBce {
        pred: NodeId,
        target: Vec<S>,
    },
}

/// Gradient tape: an append-only record of tensors and the ops that made them.
pub struct Tape<S: Scalar> {
    nodes: Vec<Tensor<S>>,
    ops: Vec<Op<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id]
    }

    pub fn data(&self, id: NodeId) -> &[S] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.nodes[id].grad.as_deref()
    }

    /// Register a differentiable leaf (a parameter).
    pub fn leaf(&mut self, data: Vec<S>, shape: Vec<usize>) -> Result<NodeId> {
        self.push_checked(data, shape, Op::Leaf, true)
    }

    /// Register a non-differentiable leaf (inputs, structural matrices).
    pub fn constant(&mut self, data: Vec<S>, shape: Vec<usize>) -> Result<NodeId> {
        self.push_checked(data, shape, Op::Leaf, false)
    }

    fn push_checked(
        &mut self,
        data: Vec<S>,
        shape: Vec<usize>,
        op: Op<S>,
        needs_grad: bool,
    ) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Dim(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        let id = self.nodes.len();
        self.nodes.push(Tensor {
            shape,
            data,
            grad: None,
            needs_grad,
        });
        self.ops.push(op);
        Ok(id)
    }

    fn push(&mut self, data: Vec<S>, shape: Vec<usize>, op: Op<S>, needs_grad: bool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Tensor {
            shape,
            data,
            grad: None,
            needs_grad,
        });
        self.ops.push(op);
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    fn dims2(&self, id: NodeId) -> Result<(usize, usize)> {
        let s = &self.nodes[id].shape;
        match s.len() {
            2 => Ok((s[0], s[1])),
            _ => Err(Error::Dim(format!("expected matrix, got shape {:?}", s))),
        }
    }

    // ---- forward ops -------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::Dim(format!(
                "matmul inner dims disagree: {}x{} vs {}x{}",
                m, k, k2, n
            )));
        }
        let data = matmul_raw(&self.nodes[a].data, &self.nodes[b].data, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(data, vec![m, n], Op::Matmul(a, b), ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::Dim(format!(
                "add shapes disagree: {:?} vs {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let data: Vec<S> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(data, shape, Op::Add(a, b), ng))
    }

    /// `a[r x c] + row` where `row` has `c` elements (shape `[c]` or `[1, c]`).
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a)?;
        if self.nodes[row].numel() != c {
            return Err(Error::Dim(format!(
                "add_row: row has {} elements, matrix has {} columns",
                self.nodes[row].numel(),
                c
            )));
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(self.nodes[a].data[i * c + j] + self.nodes[row].data[j]);
            }
        }
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(data, vec![r, c], Op::AddRow(a, row), ng))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::Dim(format!(
                "mul shapes disagree: {:?} vs {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let data: Vec<S> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(data, shape, Op::Mul(a, b), ng))
    }

    /// Multiply every element of `a` by the single-element tensor `s`.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.nodes[s].numel() != 1 {
            return Err(Error::Dim(format!(
                "mul_scalar: scalar operand has shape {:?}",
                self.nodes[s].shape
            )));
        }
        let sv = self.nodes[s].data[0];
        let data: Vec<S> = self.nodes[a].data.iter().map(|&x| x * sv).collect();
        let shape = self.nodes[a].shape.clone();
        let ng = self.needs(a) || self.needs(s);
        Ok(self.push(data, shape, Op::MulScalar(a, s), ng))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: NodeId, c: S) -> NodeId {
        let data: Vec<S> = self.nodes[a].data.iter().map(|&x| x * c).collect();
        let shape = self.nodes[a].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data: Vec<S> = self.nodes[a]
            .data
            .iter()
            .map(|&x| if x > S::zero() { x } else { S::zero() })
            .collect();
        let shape = self.nodes[a].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: NodeId) -> NodeId {
        let slope = S::from_f64_lossy(LEAKY_SLOPE);
        let data: Vec<S> = self.nodes[a]
            .data
            .iter()
            .map(|&x| if x > S::zero() { x } else { x * slope })
            .collect();
        let shape = self.nodes[a].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::LeakyRelu(a), ng)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let data: Vec<S> = self.nodes[a].data.iter().map(|&x| gelu_fwd(x)).collect();
        let shape = self.nodes[a].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::Gelu(a), ng)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let data: Vec<S> = self.nodes[a].data.iter().map(|&x| x.exp()).collect();
        let shape = self.nodes[a].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::Exp(a), ng)
    }

    /// Numerically stabilized softmax along `axis`; every slice sums to one.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.nodes[a].shape.clone();
        if axis >= shape.len() {
            return Err(Error::Dim(format!(
                "softmax axis {} out of range for shape {:?}",
                axis, shape
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = &self.nodes[a].data;
        let mut data = vec![S::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mut max = S::neg_infinity();
                for j in 0..len {
                    max = max.max(src[at(j)]);
                }
                let mut total = S::zero();
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    data[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    data[at(j)] = data[at(j)] / total;
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(data, shape, Op::Softmax(a, axis), ng))
    }

    /// Normalize the last axis to zero mean and unit variance, then apply
    /// the learned scale and shift. Constant slices normalize to zero.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let shape = self.nodes[x].shape.clone();
        let c = *shape.last().ok_or_else(|| {
            Error::Dim("layer_norm: input must have at least one axis".to_string())
        })?;
        if self.nodes[gamma].numel() != c || self.nodes[beta].numel() != c {
            return Err(Error::Dim(format!(
                "layer_norm: scale/shift length must be {}",
                c
            )));
        }
        let eps = S::from_f64_lossy(LAYER_NORM_EPS);
        let cf = S::from_usize_lossy(c);
        let src = &self.nodes[x].data;
        let g = &self.nodes[gamma].data;
        let b = &self.nodes[beta].data;
        let mut data = vec![S::zero(); src.len()];
        for v in 0..src.len() / c.max(1) {
            let row = &src[v * c..(v + 1) * c];
            let mean = row.iter().fold(S::zero(), |acc, &x| acc + x) / cf;
            let var = row
                .iter()
                .fold(S::zero(), |acc, &x| acc + (x - mean) * (x - mean))
                / cf;
            let inv_std = (var + eps).sqrt().recip();
            for j in 0..c {
                data[v * c + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(data, shape, Op::LayerNorm { x, gamma, beta }, ng))
    }

    /// Inverted dropout with an explicit keep mask drawn from `rng`.
    /// Identity (no node recorded) when `train` is off or `rate` is zero.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        train: bool,
        rng: &mut impl rand::Rng,
    ) -> NodeId {
        if !train || rate <= 0.0 {
            return x;
        }
        let keep = S::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Vec<S> = (0..self.nodes[x].numel())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data: Vec<S> = self.nodes[x]
            .data
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.nodes[x].shape.clone();
        let ng = self.needs(x);
        self.push(data, shape, Op::Dropout { x, mask }, ng)
    }

    /// Stack matrices vertically.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dim("concat_rows: empty input list".to_string()));
        }
        let (_, c) = self.dims2(parts[0])?;
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims2(p)?;
            if pc != c {
                return Err(Error::Dim(format!(
                    "concat_rows: column counts disagree ({} vs {})",
                    pc, c
                )));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p].data);
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(data, vec![rows, c], Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Stack matrices side by side.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dim("concat_cols: empty input list".to_string()));
        }
        let (r, _) = self.dims2(parts[0])?;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p)?;
            if pr != r {
                return Err(Error::Dim(format!(
                    "concat_cols: row counts disagree ({} vs {})",
                    pr, r
                )));
            }
            cols += pc;
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let pc = self.nodes[p].shape[1];
                data.extend_from_slice(&self.nodes[p].data[i * pc..(i + 1) * pc]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(data, vec![r, cols], Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Concatenate 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        match axis {
            0 => self.concat_rows(parts),
            1 => self.concat_cols(parts),
            _ => Err(Error::Dim(format!("concat: axis {} not supported", axis))),
        }
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a)?;
        let src = &self.nodes[a].data;
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.needs(a);
        Ok(self.push(data, vec![c, r], Op::Transpose(a), ng))
    }

    /// Reinterpret the row-major buffer under a new shape.
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a].numel() {
            return Err(Error::Dim(format!(
                "reshape: {:?} -> {:?} changes element count",
                self.nodes[a].shape, shape
            )));
        }
        let data = self.nodes[a].data.clone();
        let ng = self.needs(a);
        Ok(self.push(data, shape, Op::Reshape(a), ng))
    }

    /// Extract row `i` of a matrix as a `[1, c]` tensor.
    pub fn select_row(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let (r, c) = self.dims2(a)?;
        if i >= r {
            return Err(Error::Dim(format!("select_row: row {} of {}", i, r)));
        }
        let data = self.nodes[a].data[i * c..(i + 1) * c].to_vec();
        let ng = self.needs(a);
        Ok(self.push(data, vec![1, c], Op::SelectRow(a, i), ng))
    }

    /// Sum all elements into a `[1]` scalar tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.nodes[a].data.iter().fold(S::zero(), |acc, &x| acc + x);
        let ng = self.needs(a);
        self.push(vec![total], vec![1], Op::Sum(a), ng)
    }

    /// Mean absolute error over target entries that are not NaN.
    pub fn masked_mae(&mut self, pred: NodeId, target: &[S]) -> Result<NodeId> {
        if target.len() != self.nodes[pred].numel() {
            return Err(Error::Dim(format!(
                "masked_mae: {} predictions vs {} targets",
                self.nodes[pred].numel(),
                target.len()
            )));
        }
        let present = target.iter().filter(|t| !t.is_nan()).count();
        if present == 0 {
            return Err(Error::Contract("loss over all-missing targets".to_string()));
        }
        let k = S::from_usize_lossy(present);
        let mut total = S::zero();
        for (&p, &t) in self.nodes[pred].data.iter().zip(target) {
            if !t.is_nan() {
                total += (p - t).abs();
            }
        }
        let ng = self.needs(pred);
        Ok(self.push(
            vec![total / k],
            vec![1],
            Op::MaskedMae {
                pred,
                target: target.to_vec(),
            },
            ng,
        ))
    }

    /// Mean sigmoid cross-entropy (logits vs 0/1 labels) over targets that
    /// are not NaN, computed in the stable `max(x,0) - x*y + ln(1+e^-|x|)` form.
    pub fn masked_bce(&mut self, pred: NodeId, target: &[S]) -> Result<NodeId> {
        if target.len() != self.nodes[pred].numel() {
            return Err(Error::Dim(format!(
                "masked_bce: {} predictions vs {} targets",
                self.nodes[pred].numel(),
                target.len()
            )));
        }
        let present = target.iter().filter(|t| !t.is_nan()).count();
        if present == 0 {
            return Err(Error::Contract("loss over all-missing targets".to_string()));
        }
        let k = S::from_usize_lossy(present);
        let mut total = S::zero();
        for (&x, &y) in self.nodes[pred].data.iter().zip(target) {
            if !y.is_nan() {
                total += x.max(S::zero()) - x * y + (S::one() + (-x.abs()).exp()).ln();
            }
        }
        let ng = self.needs(pred);
        Ok(self.push(
            vec![total / k],
            vec![1],
            Op::MaskedBce {
                pred,
                target: target.to_vec(),
            },
            ng,
        ))
    }

    // ---- backward ----------------------------------------------------

    /// Clear all gradient buffers; required between repeated backward passes.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Accumulate d(loss)/d(node) into every node that requires gradients.
    /// `loss` must be a scalar (one element).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss].numel() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss].shape
            )));
        }
        self.seed_grad(loss, S::one());
        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad || self.nodes[id].grad.is_none() {
                continue;
            }
            let op = self.ops[id].clone();
            let g = self.nodes[id].grad.clone().expect("grad present");
            self.step_backward(id, &op, &g);
        }
        Ok(())
    }

    fn seed_grad(&mut self, id: NodeId, v: S) {
        let numel = self.nodes[id].numel();
        let grad = self.nodes[id].grad.get_or_insert_with(|| vec![S::zero(); numel]);
        for x in grad.iter_mut() {
            *x += v;
        }
    }

    fn accum(&mut self, id: NodeId, contribution: &[S]) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let numel = self.nodes[id].numel();
        let grad = self.nodes[id].grad.get_or_insert_with(|| vec![S::zero(); numel]);
        for (dst, &src) in grad.iter_mut().zip(contribution) {
            *dst += src;
        }
    }

    fn step_backward(&mut self, id: NodeId, op: &Op<S>, g: &[S]) {
        match *op {
            Op::Leaf => {}

            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let n = self.nodes[b].shape[1];
                if self.needs(a) {
                    // dA = g . B^T
                    let bt = transpose_raw(&self.nodes[b].data, k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    self.accum(a, &da);
                }
                if self.needs(b) {
                    // dB = A^T . g
                    let at = transpose_raw(&self.nodes[a].data, m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    self.accum(b, &db);
                }
            }

            Op::Add(a, b) => {
                self.accum(a, g);
                self.accum(b, g);
            }

            Op::AddRow(a, row) => {
                self.accum(a, g);
                if self.needs(row) {
                    let c = self.nodes[row].numel();
                    let mut dr = vec![S::zero(); c];
                    for (i, &gv) in g.iter().enumerate() {
                        dr[i % c] += gv;
                    }
                    self.accum(row, &dr);
                }
            }

            Op::Mul(a, b) => {
                if self.needs(a) {
                    let da: Vec<S> = g
                        .iter()
                        .zip(&self.nodes[b].data)
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    self.accum(a, &da);
                }
                if self.needs(b) {
                    let db: Vec<S> = g
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    self.accum(b, &db);
                }
            }

            Op::MulScalar(a, s) => {
                let sv = self.nodes[s].data[0];
                if self.needs(a) {
                    let da: Vec<S> = g.iter().map(|&gv| gv * sv).collect();
                    self.accum(a, &da);
                }
                if self.needs(s) {
                    let ds = g
                        .iter()
                        .zip(&self.nodes[a].data)
                        .fold(S::zero(), |acc, (&gv, &av)| acc + gv * av);
                    self.accum(s, &[ds]);
                }
            }

            Op::Scale(a, c) => {
                let da: Vec<S> = g.iter().map(|&gv| gv * c).collect();
                self.accum(a, &da);
            }

            Op::Relu(a) => {
                let da: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[a].data)
                    .map(|(&gv, &x)| if x > S::zero() { gv } else { S::zero() })
                    .collect();
                self.accum(a, &da);
            }

            Op::LeakyRelu(a) => {
                let slope = S::from_f64_lossy(LEAKY_SLOPE);
                let da: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[a].data)
                    .map(|(&gv, &x)| if x > S::zero() { gv } else { gv * slope })
                    .collect();
                self.accum(a, &da);
            }

            Op::Gelu(a) => {
                let da: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[a].data)
                    .map(|(&gv, &x)| gv * gelu_bwd(x))
                    .collect();
                self.accum(a, &da);
            }

            Op::Exp(a) => {
                let da: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[id].data)
                    .map(|(&gv, &e)| gv * e)
                    .collect();
                self.accum(a, &da);
            }

            Op::Softmax(a, axis) => {
                let shape = self.nodes[id].shape.clone();
                let (outer, len, inner) = axis_split(&shape, axis);
                let out = &self.nodes[id].data;
                let mut da = vec![S::zero(); out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let mut dot = S::zero();
                        for j in 0..len {
                            dot += g[at(j)] * out[at(j)];
                        }
                        for j in 0..len {
                            da[at(j)] = out[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                self.accum(a, &da);
            }

            Op::LayerNorm { x, gamma, beta } => {
                let c = self.nodes[gamma].numel();
                let eps = S::from_f64_lossy(LAYER_NORM_EPS);
                let cf = S::from_usize_lossy(c);
                let src = self.nodes[x].data.clone();
                let gam = self.nodes[gamma].data.clone();
                let mut dx = vec![S::zero(); src.len()];
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                for v in 0..src.len() / c.max(1) {
                    let row = &src[v * c..(v + 1) * c];
                    let grow = &g[v * c..(v + 1) * c];
                    let mean = row.iter().fold(S::zero(), |acc, &x| acc + x) / cf;
                    let var = row
                        .iter()
                        .fold(S::zero(), |acc, &x| acc + (x - mean) * (x - mean))
                        / cf;
                    let inv_std = (var + eps).sqrt().recip();
                    let xhat: Vec<S> = row.iter().map(|&x| (x - mean) * inv_std).collect();
                    let mut dxhat = vec![S::zero(); c];
                    for j in 0..c {
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        dxhat[j] = grow[j] * gam[j];
                    }
                    let sum_dxhat = dxhat.iter().fold(S::zero(), |acc, &x| acc + x);
                    let sum_dxhat_xhat = dxhat
                        .iter()
                        .zip(&xhat)
                        .fold(S::zero(), |acc, (&a, &b)| acc + a * b);
                    for j in 0..c {
                        dx[v * c + j] = inv_std / cf
                            * (cf * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                self.accum(x, &dx);
                self.accum(gamma, &dgamma);
                self.accum(beta, &dbeta);
            }

            Op::Dropout { x, ref mask } => {
                let da: Vec<S> = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                self.accum(x, &da);
            }

            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let numel = self.nodes[p].numel();
                    let slice = g[offset..offset + numel].to_vec();
                    self.accum(p, &slice);
                    offset += numel;
                }
            }

            Op::ConcatCols(ref parts) => {
                let rows = self.nodes[id].shape[0];
                let total_cols = self.nodes[id].shape[1];
                let mut col_off = 0;
                for &p in parts {
                    let pc = self.nodes[p].shape[1];
                    if self.needs(p) {
                        let mut dp = vec![S::zero(); rows * pc];
                        for i in 0..rows {
                            for j in 0..pc {
                                dp[i * pc + j] = g[i * total_cols + col_off + j];
                            }
                        }
                        self.accum(p, &dp);
                    }
                    col_off += pc;
                }
            }

            Op::Transpose(a) => {
                let (r, c) = (self.nodes[id].shape[0], self.nodes[id].shape[1]);
                let da = transpose_raw(g, r, c);
                self.accum(a, &da);
            }

            Op::Reshape(a) => {
                self.accum(a, g);
            }

            Op::SelectRow(a, i) => {
                if self.needs(a) {
                    let (_, c) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let mut da = vec![S::zero(); self.nodes[a].numel()];
                    da[i * c..(i + 1) * c].copy_from_slice(g);
                    self.accum(a, &da);
                }
            }

            Op::Sum(a) => {
                let da = vec![g[0]; self.nodes[a].numel()];
                self.accum(a, &da);
            }

            Op::MaskedMae { pred, ref target } => {
                let present = target.iter().filter(|t| !t.is_nan()).count();
                let k = S::from_usize_lossy(present);
                let da: Vec<S> = self.nodes[pred]
                    .data
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| {
                        if t.is_nan() {
                            S::zero()
                        } else {
                            g[0] * (p - t).signum_or_zero() / k
                        }
                    })
                    .collect();
                self.accum(pred, &da);
            }

            Op::MaskedBce { pred, ref target } => {
                let present = target.iter().filter(|t| !t.is_nan()).count();
                let k = S::from_usize_lossy(present);
                let da: Vec<S> = self.nodes[pred]
                    .data
                    .iter()
                    .zip(target)
                    .map(|(&x, &y)| {
                        if y.is_nan() {
                            S::zero()
                        } else {
                            let sig = S::one() / (S::one() + (-x).exp());
                            g[0] * (sig - y) / k
                        }
                    })
                    .collect();
                self.accum(pred, &da);
            }
        }
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> Self;
}

impl<S: Scalar> SignumOrZero for S {
    fn signum_or_zero(self) -> Self {
        if self > S::zero() {
            S::one()
        } else if self < S::zero() {
            -S::one()
        } else {
            S::zero()
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Row-major matrix product `a[m x k] . b[k x n]`.
pub(crate) fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw<S: Scalar>(a: &[S], r: usize, c: usize) -> Vec<S> {
    let mut out = vec![S::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn gelu_fwd<S: Scalar>(x: S) -> S {
    let c = S::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = S::from_f64_lossy(0.044715);
    let inner = c * (x + k * x * x * x);
    S::from_f64_lossy(0.5) * x * (S::one() + inner.tanh())
}

fn gelu_bwd<S: Scalar>(x: S) -> S {
    let c = S::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = S::from_f64_lossy(0.044715);
    let three = S::from_f64_lossy(3.0);
    let half = S::from_f64_lossy(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = S::one() - t * t;
    let d_inner = c * (S::one() + three * k * x * x);
    half * (S::one() + t) + half * x * sech2 * d_inner
}
