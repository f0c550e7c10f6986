//! Eager-forward, taped-backward reverse-mode differentiation.
//!
//! A [`Tape`] is an append-only list of primitive applications. Forward
//! values are computed eagerly as nodes are pushed, so the node order is
//! already topological; [`Tape::backward`] walks it in reverse applying
//! each primitive's exact vector-Jacobian product. The node list is never
//! mutated after creation, which rules out the stale-graph failure mode by
//! construction.
//!
//! Masking (causal attention and key erasure) is carried as op metadata —
//! additive `-inf` before normalisation in [`Tape::softmax`] — so that
//! tensors themselves always hold finite values.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Attention mask metadata for [`Tape::softmax`].
///
/// A logit at `(query q, key k)` is treated as `-inf` when `k > q` (causal)
/// or when `k` is erased. Erasure implements input erasure: keys of erased
/// positions are excluded from attention at every layer while surviving
/// positions keep their indices.
#[derive(Debug, Clone)]
pub struct AttnMask {
    causal: bool,
    erased: Option<Rc<Vec<bool>>>,
}

impl AttnMask {
    pub fn causal() -> Self {
        AttnMask {
            causal: true,
            erased: None,
        }
    }

    pub fn causal_with_erased(erased: Rc<Vec<bool>>) -> Self {
        AttnMask {
            causal: true,
            erased: Some(erased),
        }
    }

    /// Mask for a plain (non-causal) softmax with erased columns; used in
    /// tests of the masking law.
    pub fn erased_only(erased: Rc<Vec<bool>>) -> Self {
        AttnMask {
            causal: false,
            erased: Some(erased),
        }
    }

    #[inline]
    pub fn masked(&self, query: usize, key: usize) -> bool {
        if self.causal && key > query {
            return true;
        }
        match &self.erased {
            Some(e) => key < e.len() && e[key],
            None => false,
        }
    }
}

/// Primitive operations. Each records only metadata; input tensors are
/// referenced through the node's input list.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Mul,
    Scale(f64),
    Softmax(Option<AttnMask>),
    RmsNorm { eps: f64 },
    Gather { ids: Rc<Vec<usize>> },
    Gelu,
    ConcatCols,
    SliceCols { start: usize, end: usize },
    Pick { row: usize, col: usize },
    Ln,
    Sum,
    CrossEntropy { targets: Rc<Vec<Option<usize>>> },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// Gradients produced by [`Tape::backward`].
///
/// Nodes not on any path to the output have no stored gradient; they read
/// back as exact zeros.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the output w.r.t. node `id`, materialising zeros for
    /// untouched nodes.
    pub fn get(&self, tape: &Tape, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(id).shape()),
        }
    }

    /// Borrowed gradient, `None` when the node never received one.
    pub fn get_opt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

/// Append-only computation graph with eager forward evaluation.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> Result<NodeId, TensorError> {
        value.check_finite(op_name(&op))?;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value });
        Ok(id)
    }

    /// Registers an input tensor (parameter or embedding) as a leaf.
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId, TensorError> {
        self.push(Op::Leaf, vec![], value)
    }

    /// `[m,k] x [k,n] -> [m,n]` matrix product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (m, ka) = self.value(a).dims2()?;
        let (kb, n) = self.value(b).dims2()?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: alloc::format!("[{m},{ka}] x [{kb},{n}]"),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(
            &mut out,
            self.value(a).data(),
            self.value(b).data(),
            m,
            ka,
            n,
        );
        self.push(
            Op::MatMul,
            vec![a, b],
            Tensor::from_parts(vec![m, n], out),
        )
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (r, c) = self.value(a).dims2()?;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(Op::Transpose, vec![a], Tensor::from_parts(vec![c, r], out))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_elementwise("add", Op::Add, a, b, |x, y| x + y)
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_elementwise("mul", Op::Mul, a, b, |x, y| x * y)
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: name,
                detail: alloc::format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let shape = self.value(a).shape().to_vec();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        self.push(op, vec![a, b], Tensor::from_parts(shape, out))
    }

    /// Multiplication by a fixed scalar.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, TensorError> {
        let shape = self.value(a).shape().to_vec();
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * factor).collect();
        self.push(Op::Scale(factor), vec![a], Tensor::from_parts(shape, out))
    }

    /// Row-wise softmax over the last axis of a 2-D tensor, with an
    /// optional additive mask (`-inf` at masked positions before
    /// normalisation).
    ///
    /// A fully masked row yields an all-zero output row: such a query sees
    /// no keys at all, so it carries no probability mass and no gradient.
    pub fn softmax(&mut self, a: NodeId, mask: Option<AttnMask>) -> Result<NodeId, TensorError> {
        let (rows, cols) = self.value(a).dims2()?;
        let src = self.value(a).data();
        let mut out = vec![0.0; rows * cols];
        for q in 0..rows {
            let row = &src[q * cols..(q + 1) * cols];
            let orow = &mut out[q * cols..(q + 1) * cols];
            softmax_row(row, orow, q, mask.as_ref());
        }
        self.push(
            Op::Softmax(mask),
            vec![a],
            Tensor::from_parts(vec![rows, cols], out),
        )
    }

    /// RMS normalisation over the last axis with a learned per-channel
    /// gain: `y = gain * x / sqrt(mean(x^2) + eps)`.
    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId, eps: f64) -> Result<NodeId, TensorError> {
        let (rows, cols) = self.value(x).dims2()?;
        if self.value(gain).shape() != [cols] {
            return Err(TensorError::ShapeMismatch {
                op: "rms_norm",
                detail: alloc::format!(
                    "gain shape {:?} does not match row width {cols}",
                    self.value(gain).shape()
                ),
            });
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xs[r * cols..(r + 1) * cols];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
            let inv = 1.0 / math::sqrt(ms + eps);
            for (o, (v, gv)) in out[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(row.iter().zip(g))
            {
                *o = v * inv * gv;
            }
        }
        self.push(
            Op::RmsNorm { eps },
            vec![x, gain],
            Tensor::from_parts(vec![rows, cols], out),
        )
    }

    /// Row gather from a 2-D table: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: NodeId, ids: Rc<Vec<usize>>) -> Result<NodeId, TensorError> {
        let (rows, cols) = self.value(table).dims2()?;
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::OutOfRange {
                op: "gather",
                detail: alloc::format!("id {bad} >= table rows {rows}"),
            });
        }
        let src = self.value(table).data();
        let mut out = vec![0.0; ids.len() * cols];
        for (i, &id) in ids.iter().enumerate() {
            out[i * cols..(i + 1) * cols].copy_from_slice(&src[id * cols..(id + 1) * cols]);
        }
        let n = ids.len();
        self.push(
            Op::Gather { ids },
            vec![table],
            Tensor::from_parts(vec![n, cols], out),
        )
    }

    /// GELU activation (tanh approximation), elementwise.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.value(a).shape().to_vec();
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        self.push(Op::Gelu, vec![a], Tensor::from_parts(shape, out))
    }

    /// Concatenates 2-D tensors with equal row counts along the column
    /// axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyReduction { op: "concat_cols" });
        }
        let (rows, _) = self.value(parts[0]).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    detail: alloc::format!("row counts {rows} vs {r}"),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        self.push(
            Op::ConcatCols,
            parts.to_vec(),
            Tensor::from_parts(vec![rows, total], out),
        )
    }

    /// Column slice `[start, end)` of a 2-D tensor.
    pub fn slice_cols(
        &mut self,
        a: NodeId,
        start: usize,
        end: usize,
    ) -> Result<NodeId, TensorError> {
        let (rows, cols) = self.value(a).dims2()?;
        if start >= end || end > cols {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                detail: alloc::format!("[{start},{end}) of width {cols}"),
            });
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut out = vec![0.0; rows * w];
        for r in 0..rows {
            out[r * w..(r + 1) * w].copy_from_slice(&src[r * cols + start..r * cols + end]);
        }
        self.push(
            Op::SliceCols { start, end },
            vec![a],
            Tensor::from_parts(vec![rows, w], out),
        )
    }

    /// Selects a single element of a 2-D tensor as a scalar node.
    pub fn pick(&mut self, a: NodeId, row: usize, col: usize) -> Result<NodeId, TensorError> {
        let (rows, cols) = self.value(a).dims2()?;
        if row >= rows || col >= cols {
            return Err(TensorError::OutOfRange {
                op: "pick",
                detail: alloc::format!("({row},{col}) of [{rows},{cols}]"),
            });
        }
        let v = self.value(a).data()[row * cols + col];
        self.push(Op::Pick { row, col }, vec![a], Tensor::scalar(v))
    }

    /// Elementwise natural log; inputs must be strictly positive.
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(TensorError::LogDomain);
        }
        let shape = self.value(a).shape().to_vec();
        let out: Vec<f64> = self.value(a).data().iter().map(|&v| math::ln(v)).collect();
        self.push(Op::Ln, vec![a], Tensor::from_parts(shape, out))
    }

    /// Log of a selected probability: `ln(a[row, col])`.
    pub fn log_pick(&mut self, a: NodeId, row: usize, col: usize) -> Result<NodeId, TensorError> {
        let p = self.pick(a, row, col)?;
        self.ln(p)
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a).data().iter().sum();
        self.push(Op::Sum, vec![a], Tensor::scalar(v))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`; rows with `None` targets are ignored.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: Rc<Vec<Option<usize>>>,
    ) -> Result<NodeId, TensorError> {
        let (rows, cols) = self.value(logits).dims2()?;
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                detail: alloc::format!("{} targets for {rows} rows", targets.len()),
            });
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= cols) {
            return Err(TensorError::OutOfRange {
                op: "cross_entropy",
                detail: alloc::format!("target {bad} >= vocab {cols}"),
            });
        }
        let counted = targets.iter().flatten().count();
        if counted == 0 {
            return Err(TensorError::EmptyReduction {
                op: "cross_entropy",
            });
        }
        let src = self.value(logits).data();
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = t else { continue };
            let row = &src[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + math::ln(row.iter().map(|&v| math::exp(v - max)).sum::<f64>());
            total += lse - row[*t];
        }
        let v = total / counted as f64;
        self.push(Op::CrossEntropy { targets }, vec![logits], Tensor::scalar(v))
    }

    /// Reverse pass from a scalar output node. Returns a gradient for
    /// every node; leaves not on any path to the output read back as
    /// exact zeros.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, TensorError> {
        let out_val = self.value(output);
        if !out_val.is_scalar() {
            return Err(TensorError::NonScalarOutput {
                shape: out_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            grad.check_finite("backward")?;
            let node = &self.nodes[idx];
            self.apply_vjp(node, &grad, &mut grads)?;
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn apply_vjp(
        &self,
        node: &Node,
        grad: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        // Accumulation buffer for one input; borrows `grads` for the
        // duration of each sequential block below, so ops that use the same
        // node twice (e.g. mul(x, x)) accumulate both contributions.
        fn buf<'g>(
            grads: &'g mut [Option<Tensor>],
            id: NodeId,
            shape: &[usize],
        ) -> &'g mut Tensor {
            let slot = &mut grads[id.0];
            if slot.is_none() {
                *slot = Some(Tensor::zeros(shape));
            }
            slot.as_mut().unwrap()
        }
        macro_rules! buf {
            ($id:expr) => {{
                let shape = self.value($id).shape().to_vec();
                buf(grads, $id, &shape)
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let (m, k) = self.value(a).dims2()?;
                let (_, n) = self.value(b).dims2()?;
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let g = grad.data();
                {
                    let da = buf!(a);
                    let dad = da.data_mut();
                    // dA[i,p] += dot(dC[i,:], B[p,:])
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            dad[i * k + p] += dot(grow, brow);
                        }
                    }
                }
                {
                    let db = buf!(b);
                    let dbd = db.data_mut();
                    // dB[p,:] += A[i,p] * dC[i,:]
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            axpy(&mut dbd[p * n..(p + 1) * n], av[i * k + p], grow);
                        }
                    }
                }
            }
            Op::Transpose => {
                let a = node.inputs[0];
                let (r, c) = self.value(a).dims2()?;
                let g = grad.data();
                let da = buf!(a);
                let dad = da.data_mut();
                for i in 0..r {
                    for j in 0..c {
                        dad[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Add => {
                for &input in &node.inputs {
                    let d = buf!(input);
                    for (dv, gv) in d.data_mut().iter_mut().zip(grad.data()) {
                        *dv += gv;
                    }
                }
            }
            Op::Mul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                {
                    let bv = self.value(b).data();
                    let da = buf!(a);
                    for ((dv, gv), bvv) in da.data_mut().iter_mut().zip(grad.data()).zip(bv) {
                        *dv += gv * bvv;
                    }
                }
                {
                    let av = self.value(a).data();
                    let db = buf!(b);
                    for ((dv, gv), avv) in db.data_mut().iter_mut().zip(grad.data()).zip(av) {
                        *dv += gv * avv;
                    }
                }
            }
            Op::Scale(factor) => {
                let d = buf!(node.inputs[0]);
                for (dv, gv) in d.data_mut().iter_mut().zip(grad.data()) {
                    *dv += gv * factor;
                }
            }
            Op::Softmax(_) => {
                let a = node.inputs[0];
                let (rows, cols) = self.value(a).dims2()?;
                let p = node.value.data();
                let g = grad.data();
                let da = buf!(a);
                let dad = da.data_mut();
                // dx = p .* (g - sum(p .* g)); masked entries have p == 0.
                for r in 0..rows {
                    let prow = &p[r * cols..(r + 1) * cols];
                    let grow = &g[r * cols..(r + 1) * cols];
                    let inner = dot(prow, grow);
                    for ((d, &pv), &gv) in dad[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(prow)
                        .zip(grow)
                    {
                        *d += pv * (gv - inner);
                    }
                }
            }
            Op::RmsNorm { eps } => {
                let (x, gain) = (node.inputs[0], node.inputs[1]);
                let (rows, cols) = self.value(x).dims2()?;
                let xv = self.value(x).data();
                let gv = self.value(gain).data();
                let g = grad.data();
                {
                    let dx = buf!(x);
                    let dxd = dx.data_mut();
                    for r in 0..rows {
                        let xrow = &xv[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let ms = xrow.iter().map(|v| v * v).sum::<f64>() / cols as f64;
                        let inv = 1.0 / math::sqrt(ms + eps);
                        // s = sum_j g_j * gain_j * x_j
                        let s: f64 = grow
                            .iter()
                            .zip(gv)
                            .zip(xrow)
                            .map(|((gj, gnj), xj)| gj * gnj * xj)
                            .sum();
                        let coef = inv * inv * inv / cols as f64;
                        for ((d, (gj, gnj)), xj) in dxd[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(grow.iter().zip(gv))
                            .zip(xrow)
                        {
                            *d += gj * gnj * inv - coef * s * xj;
                        }
                    }
                }
                {
                    let dg = buf!(gain);
                    let dgd = dg.data_mut();
                    for r in 0..rows {
                        let xrow = &xv[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let ms = xrow.iter().map(|v| v * v).sum::<f64>() / cols as f64;
                        let inv = 1.0 / math::sqrt(ms + eps);
                        for ((d, gj), xj) in dgd.iter_mut().zip(grow).zip(xrow) {
                            *d += gj * xj * inv;
                        }
                    }
                }
            }
            Op::Gather { ids } => {
                let table = node.inputs[0];
                let (_, cols) = self.value(table).dims2()?;
                let g = grad.data();
                let dt = buf!(table);
                let dtd = dt.data_mut();
                for (i, &id) in ids.iter().enumerate() {
                    axpy(
                        &mut dtd[id * cols..(id + 1) * cols],
                        1.0,
                        &g[i * cols..(i + 1) * cols],
                    );
                }
            }
            Op::Gelu => {
                let a = node.inputs[0];
                let xv = self.value(a).data();
                let da = buf!(a);
                for ((d, gv), &x) in da.data_mut().iter_mut().zip(grad.data()).zip(xv) {
                    *d += gv * gelu_grad(x);
                }
            }
            Op::ConcatCols => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let g = grad.data();
                let mut offset = 0;
                for &p in &node.inputs {
                    let (_, w) = self.value(p).dims2()?;
                    let dp = buf!(p);
                    let dpd = dp.data_mut();
                    for r in 0..rows {
                        axpy(
                            &mut dpd[r * w..(r + 1) * w],
                            1.0,
                            &g[r * total + offset..r * total + offset + w],
                        );
                    }
                    offset += w;
                }
            }
            Op::SliceCols { start, end } => {
                let a = node.inputs[0];
                let (rows, cols) = self.value(a).dims2()?;
                let w = end - start;
                let g = grad.data();
                let da = buf!(a);
                let dad = da.data_mut();
                for r in 0..rows {
                    axpy(
                        &mut dad[r * cols + start..r * cols + end],
                        1.0,
                        &g[r * w..(r + 1) * w],
                    );
                }
            }
            Op::Pick { row, col } => {
                let a = node.inputs[0];
                let (_, cols) = self.value(a).dims2()?;
                let da = buf!(a);
                da.data_mut()[row * cols + col] += grad.data()[0];
            }
            Op::Ln => {
                let a = node.inputs[0];
                let xv = self.value(a).data();
                let da = buf!(a);
                for ((d, gv), &x) in da.data_mut().iter_mut().zip(grad.data()).zip(xv) {
                    *d += gv / x;
                }
            }
            Op::Sum => {
                let da = buf!(node.inputs[0]);
                let gv = grad.data()[0];
                for d in da.data_mut().iter_mut() {
                    *d += gv;
                }
            }
            Op::CrossEntropy { targets } => {
                let logits = node.inputs[0];
                let (_, cols) = self.value(logits).dims2()?;
                let src = self.value(logits).data();
                let counted = targets.iter().flatten().count() as f64;
                let upstream = grad.data()[0] / counted;
                let dl = buf!(logits);
                let dld = dl.data_mut();
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = t else { continue };
                    let row = &src[r * cols..(r + 1) * cols];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|&v| math::exp(v - max)).sum();
                    let drow = &mut dld[r * cols..(r + 1) * cols];
                    for ((d, &v), j) in drow.iter_mut().zip(row).zip(0..) {
                        let p = math::exp(v - max) / denom;
                        let indicator = if j == *t { 1.0 } else { 0.0 };
                        *d += upstream * (p - indicator);
                    }
                }
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul => "matmul",
        Op::Transpose => "transpose",
        Op::Add => "add",
        Op::Mul => "mul",
        Op::Scale(_) => "scale",
        Op::Softmax(_) => "softmax",
        Op::RmsNorm { .. } => "rms_norm",
        Op::Gather { .. } => "gather",
        Op::Gelu => "gelu",
        Op::ConcatCols => "concat_cols",
        Op::SliceCols { .. } => "slice_cols",
        Op::Pick { .. } => "pick",
        Op::Ln => "ln",
        Op::Sum => "sum",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// `c += a * b` for row-major `a: [m,k]`, `b: [k,n]`.
fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            axpy(crow, av, &b[p * n..(p + 1) * n]);
        }
    }
}

fn softmax_row(row: &[f64], out: &mut [f64], query: usize, mask: Option<&AttnMask>) {
    let live = |k: usize| mask.map_or(true, |m| !m.masked(query, k));
    let mut max = f64::NEG_INFINITY;
    for (k, &v) in row.iter().enumerate() {
        if live(k) && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        // Fully masked row: no surviving keys, no probability mass.
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut denom = 0.0;
    for (k, &v) in row.iter().enumerate() {
        if live(k) {
            let e = math::exp(v - max);
            out[k] = e;
            denom += e;
        } else {
            out[k] = 0.0;
        }
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}

const GELU_COEF: f64 = 0.044715;
// sqrt(2/pi)
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::tanh(GELU_SCALE * (x + GELU_COEF * x * x * x)))
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_SCALE * (x + GELU_COEF * x * x * x);
    let t = math::tanh(u);
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_SCALE * (1.0 + 3.0 * GELU_COEF * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::rc::Rc;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_of_ones() {
        // 2x3 times 3x2 all-ones -> 2x2 of 3s.
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::filled(&[2, 3], 1.0)).unwrap();
        let b = tape.leaf(Tensor::filled(&[3, 2], 1.0)).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 2]);
        assert!(tape.value(c).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.leaf(Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(
            tape.matmul(a, b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        for k in 1..8 {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::zeros(&[1, k])).unwrap();
            let s = tape.softmax(a, None).unwrap();
            for &v in tape.value(s).data() {
                assert!((v - 1.0 / k as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_positions() {
        let mut tape = Tape::new();
        let a = tape
            .leaf(tensor(&[1, 4], &[0.3, -0.2, 5.0, 1.0]))
            .unwrap();
        let erased = Rc::new(alloc::vec![false, false, true, false]);
        let s = tape
            .softmax(a, Some(AttnMask::erased_only(erased)))
            .unwrap();
        let p = tape.value(s).data();
        assert_eq!(p[2], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_has_zero_incoming_gradient() {
        let mut tape = Tape::new();
        let a = tape
            .leaf(tensor(&[1, 4], &[0.3, -0.2, 5.0, 1.0]))
            .unwrap();
        let erased = Rc::new(alloc::vec![false, false, true, false]);
        let s = tape
            .softmax(a, Some(AttnMask::erased_only(erased)))
            .unwrap();
        let out = tape.sum(s).unwrap();
        let grads = tape.backward(out).unwrap();
        let ga = grads.get(&tape, a);
        assert_eq!(ga.data()[2], 0.0);
    }

    #[test]
    fn fully_masked_row_is_all_zero() {
        // Causal mask with position 0 erased: query 0 sees nothing.
        let mut tape = Tape::new();
        let a = tape.leaf(tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let erased = Rc::new(alloc::vec![true, false]);
        let s = tape
            .softmax(a, Some(AttnMask::causal_with_erased(erased)))
            .unwrap();
        let p = tape.value(s).data();
        assert_eq!(&p[0..2], &[0.0, 0.0]);
        // Query 1 renormalises over its only surviving key, itself.
        assert_eq!(&p[2..4], &[0.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let a = tape
            .leaf(tensor(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 9.0, -1.0]))
            .unwrap();
        let s = tape.sum(a).unwrap();
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(&tape, a).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_of_square_scalar() {
        // f(x) = x*x at x = 3 -> gradient 6.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(&tape, x).data(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar_output() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(
            tape.backward(a),
            Err(TensorError::NonScalarOutput { .. })
        ));
    }

    #[test]
    fn untouched_leaf_gets_exact_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(2.0)).unwrap();
        let unused = tape.leaf(tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let y = tape.mul(a, a).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get_opt(unused).is_none());
        assert!(grads.get(&tape, unused).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let a = tape
                .leaf(tensor(&[2, 2], &[0.1, -0.7, 2.3, 0.9]))
                .unwrap();
            let b = tape.gelu(a).unwrap();
            let c = tape.softmax(b, None).unwrap();
            let s = tape.sum(c).unwrap();
            let g = tape.backward(s).unwrap();
            (
                tape.value(s).data().to_vec(),
                g.get(&tape, a).data().to_vec(),
            )
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn ln_rejects_non_positive() {
        let mut tape = Tape::new();
        let a = tape.leaf(tensor(&[1, 2], &[0.5, 0.0])).unwrap();
        assert!(matches!(tape.ln(a), Err(TensorError::LogDomain)));
    }

    #[test]
    fn cross_entropy_matches_log_pick() {
        let mut tape = Tape::new();
        let logits = tape
            .leaf(tensor(&[1, 3], &[0.2, -1.3, 2.0]))
            .unwrap();
        let ce = tape
            .cross_entropy(logits, Rc::new(alloc::vec![Some(2)]))
            .unwrap();
        let probs = tape.softmax(logits, None).unwrap();
        let lp = tape.log_pick(probs, 0, 2).unwrap();
        let a = tape.value(ce).item().unwrap();
        let b = -tape.value(lp).item().unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gather_accumulates_duplicate_rows() {
        let mut tape = Tape::new();
        let table = tape.leaf(tensor(&[3, 2], &[1.0; 6])).unwrap();
        let g = tape
            .gather(table, Rc::new(alloc::vec![0, 2, 0]))
            .unwrap();
        let s = tape.sum(g).unwrap();
        let grads = tape.backward(s).unwrap();
        let gt = grads.get(&tape, table);
        assert_eq!(gt.data(), &[2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut tape = Tape::new();
        let a = tape.leaf(tensor(&[2, 2], &[1.0, 2.0, 5.0, 6.0])).unwrap();
        let b = tape.leaf(tensor(&[2, 1], &[3.0, 7.0])).unwrap();
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 5.0, 6.0, 7.0]);
        let sliced = tape.slice_cols(c, 2, 3).unwrap();
        assert_eq!(tape.value(sliced).data(), tape.value(b).data());
    }
}
