//! Recorded computation graph with reverse-mode gradients.
//!
//! Every operation evaluates eagerly and appends a node holding its value
//! and whatever it needs for the backward sweep. Nodes are stored in
//! creation order, which is a topological order, so [`Tape::backward`] is a
//! single reverse pass.

use std::rc::Rc;

use super::sparse::SparseMatrix;
use super::tensor::gemm;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    RowSoftmax(Var),
    RowLogNormalize(Var),
    ColLogNormalize(Var),
    LogSumExpRows(Var),
    MaskedRowLogSoftmax(Var, Rc<Vec<bool>>),
    L2NormalizeRows(Var),
    L2Norm(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Rc<Vec<usize>>),
    PadRows(Var),
    SpMM(Rc<SparseMatrix>, Var),
    NegL1Dist(Var, Var),
    FuseRows(Var, Var),
    WeightedSum(Var, Rc<Tensor>),
    CrossEntropy(Var, Rc<Vec<usize>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient with respect to a node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients, summed over every use of the parameter.
    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.params
    }

    /// Adds the parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.params {
            store.get_mut(*id).grad.add_assign(g);
        }
    }

    /// Adds another sweep's parameter gradients into this one.
    pub fn merge_params(&mut self, other: &Gradients) {
        for (id, g) in &other.params {
            match self.params.iter_mut().find(|(i, _)| i == id) {
                Some((_, acc)) => acc.add_assign(g),
                None => self.params.push((*id, g.clone())),
            }
        }
        self.params.sort_by_key(|(id, _)| *id);
    }
}

fn dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| Error::shape(op, t.shape(), &[]))
}

fn relu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = xs.map(|x| (x - m).exp()).sum();
    m + s.ln()
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that gradients are tracked for.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input without gradient tracking.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Snapshot of a stored parameter; gradients flow back to `id` when
    /// the parameter is trainable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a), "matmul")?;
        let (k2, n) = dims(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).values(), m, k, false, self.value(b).values(), k2, n, false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a), "matmul_nt")?;
        let (n, k2) = dims(self.value(b), "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).values(), m, k, false, self.value(b).values(), n, k2, true, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulNt(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let values = ta.values().iter().zip(tb.values()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), values).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a length-`c` row to every row of an `r × c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a), "add_row")?;
        if self.value(row).numel() != c {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let bias = self.value(row).values().to_vec();
        let mut out = self.value(a).values().to_vec();
        for i in 0..r {
            for (o, b) in out[i * c..(i + 1) * c].iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Tensor::matrix(r, c, out), Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, k), rg)
    }

    /// `max(0, x)` elementwise; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(relu_scalar);
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    /// Elementwise hinge `max(0, x)`; identical to [`Tape::relu`].
    pub fn hinge(&mut self, a: Var) -> Var {
        self.relu(a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(t, Op::Exp(a), rg)
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a), "row_softmax")?;
        let x = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = x.row(i);
            let lse = logsumexp(row.iter().copied());
            for j in 0..c {
                out[i * c + j] = (row[j] - lse).exp();
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, c, out), Op::RowSoftmax(a), rg))
    }

    /// Row-wise log-sum-exp, producing an `r × 1` column.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let (r, _) = dims(self.value(a), "log_sum_exp")?;
        let x = self.value(a);
        let out = (0..r).map(|i| logsumexp(x.row(i).iter().copied())).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, 1, out), Op::LogSumExpRows(a), rg))
    }

    /// `x − logsumexp(row)` for every row (log-domain row normalization).
    pub fn row_log_normalize(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a), "row_log_normalize")?;
        let x = self.value(a);
        let mut out = x.values().to_vec();
        for i in 0..r {
            let lse = logsumexp(x.row(i).iter().copied());
            out[i * c..(i + 1) * c].iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, c, out), Op::RowLogNormalize(a), rg))
    }

    /// `x − logsumexp(column)` for every column.
    pub fn col_log_normalize(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a), "col_log_normalize")?;
        let x = self.value(a);
        let mut out = x.values().to_vec();
        for j in 0..c {
            let lse = logsumexp((0..r).map(|i| x.values()[i * c + j]));
            for i in 0..r {
                out[i * c + j] -= lse;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, c, out), Op::ColLogNormalize(a), rg))
    }

    /// Row-wise log-softmax over the entries where `keep` is true; masked
    /// entries are set to 0 and receive no gradient.
    pub fn masked_row_log_softmax(&mut self, a: Var, keep: Rc<Vec<bool>>) -> Result<Var> {
        let (r, c) = dims(self.value(a), "masked_row_log_softmax")?;
        if keep.len() != r * c {
            return Err(Error::shape("masked_row_log_softmax", self.shape(a), &[keep.len()]));
        }
        let x = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = x.row(i);
            let mask = &keep[i * c..(i + 1) * c];
            let lse = logsumexp(row.iter().zip(mask).filter(|(_, &k)| k).map(|(&v, _)| v));
            for j in 0..c {
                if mask[j] {
                    out[i * c + j] = row[j] - lse;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, c, out), Op::MaskedRowLogSoftmax(a, keep), rg))
    }

    /// Scales each row to unit L2 norm; zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a), "l2_normalize_rows")?;
        let x = self.value(a);
        let mut out = x.values().to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, c, out), Op::L2NormalizeRows(a), rg))
    }

    /// Frobenius norm as a scalar.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let n = self.value(a).norm();
        let rg = self.rg(a);
        self.push(Tensor::scalar(n), Op::L2Norm(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.sum() / t.numel().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let r = dims(self.value(first), "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = dims(self.value(p), "concat_cols")?;
            if pr != r {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        for i in 0..r {
            let mut off = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                out[i * total + off..i * total + off + w].copy_from_slice(self.value(p).row(i));
                off += w;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(r, total, out), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let c = dims(self.value(first), "concat_rows")?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = dims(self.value(p), "concat_rows")?;
            if pc != c {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            out.extend_from_slice(self.value(p).values());
            rows += pr;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, c, out), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let (r, _) = dims(self.value(a), "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", self.shape(a), &[bad]));
        }
        let t = self.value(a).select_rows(&idx);
        let rg = self.rg(a);
        Ok(self.push(t, Op::GatherRows(a, idx), rg))
    }

    /// Appends zero rows up to `rows` total.
    pub fn pad_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (r, c) = dims(self.value(a), "pad_rows")?;
        if rows < r {
            return Err(Error::shape("pad_rows", self.shape(a), &[rows, c]));
        }
        let mut out = self.value(a).values().to_vec();
        out.resize(rows * c, 0.0);
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(rows, c, out), Op::PadRows(a), rg))
    }

    /// Sparse-dense product `s · a` with a constant sparse matrix.
    pub fn spmm(&mut self, s: Rc<SparseMatrix>, a: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a), "spmm")?;
        if s.cols() != r {
            return Err(Error::shape("spmm", &[s.rows(), s.cols()], self.shape(a)));
        }
        let mut out = vec![0.0; s.rows() * c];
        s.mul_dense(self.value(a).values(), c, &mut out);
        let rg = self.rg(a);
        let rows = s.rows();
        Ok(self.push(Tensor::matrix(rows, c, out), Op::SpMM(s, a), rg))
    }

    /// `out[i][j] = −‖a_i − b_j‖₁` for `a: m × d`, `b: n × d`.
    pub fn neg_l1_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, d) = dims(self.value(a), "neg_l1_dist")?;
        let (n, d2) = dims(self.value(b), "neg_l1_dist")?;
        if d != d2 {
            return Err(Error::shape("neg_l1_dist", self.shape(a), self.shape(b)));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ai = ta.row(i);
            for j in 0..n {
                let bj = tb.row(j);
                out[i * n + j] = -ai.iter().zip(bj).map(|(x, y)| (x - y).abs()).sum::<f64>();
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::NegL1Dist(a, b), rg))
    }

    /// Attention-weighted sum of row groups: for `w: b × q` and
    /// `rows: (b·q) × d`, `out[i] = Σ_j w[i][j] · rows[i·q + j]`.
    pub fn fuse_rows(&mut self, w: Var, rows: Var) -> Result<Var> {
        let (b, q) = dims(self.value(w), "fuse_rows")?;
        let (n, d) = dims(self.value(rows), "fuse_rows")?;
        if n != b * q {
            return Err(Error::shape("fuse_rows", self.shape(w), self.shape(rows)));
        }
        let (tw, tr) = (self.value(w), self.value(rows));
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            let dst = &mut out[i * d..(i + 1) * d];
            for j in 0..q {
                let a = tw.get(i, j);
                for (o, r) in dst.iter_mut().zip(tr.row(i * q + j)) {
                    *o += a * r;
                }
            }
        }
        let rg = self.rg(w) || self.rg(rows);
        Ok(self.push(Tensor::matrix(b, d, out), Op::FuseRows(w, rows), rg))
    }

    /// `Σ w ⊙ a` with constant weights.
    pub fn weighted_sum(&mut self, a: Var, w: Rc<Tensor>) -> Result<Var> {
        if w.numel() != self.value(a).numel() {
            return Err(Error::shape("weighted_sum", self.shape(a), w.shape()));
        }
        let s = self.value(a).values().iter().zip(w.values()).map(|(x, y)| x * y).sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a, w), rg))
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Rc<Vec<usize>>) -> Result<Var> {
        let (r, c) = dims(self.value(logits), "cross_entropy")?;
        if labels.len() != r {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {c} classes")));
        }
        let x = self.value(logits);
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = x.row(i);
            total += logsumexp(row.iter().copied()) - row[y];
        }
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(total / r.max(1) as f64), Op::CrossEntropy(logits, labels), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let mut params: Vec<(ParamId, Tensor)> = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[i]) {
                if !node.requires_grad {
                    continue;
                }
                match params.iter_mut().find(|(p, _)| p == id) {
                    Some((_, acc)) => acc.add_assign(g),
                    None => params.push((*id, g.clone())),
                }
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let like = |v: Var, values: Vec<f64>| {
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), values).expect("gradient shape")
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2().unwrap();
                let n = tb.cols();
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(g.values(), m, n, false, tb.values(), k, n, true, &mut da, false);
                    acc(*a, like(*a, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(ta.values(), m, k, true, g.values(), m, n, false, &mut db, false);
                    acc(*b, like(*b, db));
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2().unwrap();
                let n = tb.rows();
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(g.values(), m, n, false, tb.values(), n, k, false, &mut da, false);
                    acc(*a, like(*a, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm(g.values(), m, n, true, ta.values(), m, k, false, &mut db, false);
                    acc(*b, like(*b, db));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.values().iter().zip(tb.values()).map(|(x, y)| x * y).collect();
                    acc(*a, like(*a, d));
                }
                if self.rg(*b) {
                    let d = g.values().iter().zip(ta.values()).map(|(x, y)| x * y).collect();
                    acc(*b, like(*b, d));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.rg(*row) {
                    let (r, c) = g.dims2().unwrap();
                    let mut d = vec![0.0; c];
                    for i in 0..r {
                        for (dj, gj) in d.iter_mut().zip(g.row(i)) {
                            *dj += gj;
                        }
                    }
                    acc(*row, like(*row, d));
                }
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g
                    .values()
                    .iter()
                    .zip(x.values())
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::Exp(a) => {
                let d = g.values().iter().zip(out.values()).map(|(x, y)| x * y).collect();
                acc(*a, like(*a, d));
            }
            Op::RowSoftmax(a) => {
                let (r, c) = out.dims2().unwrap();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let (y, gy) = (out.row(i), g.row(i));
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        d[i * c + j] = y[j] * (gy[j] - dot);
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::RowLogNormalize(a) => {
                let (r, c) = out.dims2().unwrap();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let (y, gy) = (out.row(i), g.row(i));
                    let s: f64 = gy.iter().sum();
                    for j in 0..c {
                        d[i * c + j] = gy[j] - y[j].exp() * s;
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::ColLogNormalize(a) => {
                let (r, c) = out.dims2().unwrap();
                let (y, gy) = (out.values(), g.values());
                let mut sums = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        sums[j] += gy[i * c + j];
                    }
                }
                let d = (0..r * c).map(|k| gy[k] - y[k].exp() * sums[k % c]).collect();
                acc(*a, like(*a, d));
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(*a);
                let (r, c) = x.dims2().unwrap();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let (lse, gi) = (out.values()[i], g.values()[i]);
                    for j in 0..c {
                        d[i * c + j] = gi * (x.get(i, j) - lse).exp();
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::MaskedRowLogSoftmax(a, keep) => {
                let (r, c) = out.dims2().unwrap();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let mask = &keep[i * c..(i + 1) * c];
                    let (y, gy) = (out.row(i), g.row(i));
                    let s: f64 = gy.iter().zip(mask).filter(|(_, &k)| k).map(|(v, _)| v).sum();
                    for j in 0..c {
                        if mask[j] {
                            d[i * c + j] = gy[j] - y[j].exp() * s;
                        }
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::L2NormalizeRows(a) => {
                let x = self.value(*a);
                let (r, c) = x.dims2().unwrap();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let n = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n == 0.0 {
                        continue;
                    }
                    let (y, gy) = (out.row(i), g.row(i));
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        d[i * c + j] = (gy[j] - y[j] * dot) / n;
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::L2Norm(a) => {
                let n = out.values()[0];
                let gs = g.values()[0];
                let x = self.value(*a);
                let d = if n == 0.0 {
                    vec![0.0; x.numel()]
                } else {
                    x.values().iter().map(|v| gs * v / n).collect()
                };
                acc(*a, like(*a, d));
            }
            Op::Sum(a) => {
                let gs = g.values()[0];
                acc(*a, Tensor::full(self.shape(*a), gs));
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel().max(1) as f64;
                let gs = g.values()[0] / n;
                acc(*a, Tensor::full(self.shape(*a), gs));
            }
            Op::ConcatCols(parts) => {
                let (r, total) = g.dims2().unwrap();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(r * w);
                        for i in 0..r {
                            d.extend_from_slice(&g.values()[i * total + off..i * total + off + w]);
                        }
                        acc(p, like(p, d));
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.rg(p) {
                        acc(p, like(p, g.values()[off..off + n].to_vec()));
                    }
                    off += n;
                }
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut d = vec![0.0; x.numel()];
                for (k, &i) in idx.iter().enumerate() {
                    for (dv, gv) in d[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                        *dv += gv;
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::PadRows(a) => {
                let n = self.value(*a).numel();
                acc(*a, like(*a, g.values()[..n].to_vec()));
            }
            Op::SpMM(s, a) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut d = vec![0.0; x.numel()];
                s.mul_dense_transposed_acc(g.values(), c, &mut d);
                acc(*a, like(*a, d));
            }
            Op::NegL1Dist(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, dd) = ta.dims2().unwrap();
                let n = tb.rows();
                let mut da = vec![0.0; m * dd];
                let mut db = vec![0.0; n * dd];
                for i in 0..m {
                    let ai = ta.row(i);
                    for j in 0..n {
                        let gij = g.values()[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let bj = tb.row(j);
                        for k in 0..dd {
                            let diff = ai[k] - bj[k];
                            let s = if diff > 0.0 {
                                1.0
                            } else if diff < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            da[i * dd + k] -= gij * s;
                            db[j * dd + k] += gij * s;
                        }
                    }
                }
                acc(*a, like(*a, da));
                acc(*b, like(*b, db));
            }
            Op::FuseRows(w, rows) => {
                let (tw, tr) = (self.value(*w), self.value(*rows));
                let (b, q) = tw.dims2().unwrap();
                let d = tr.cols();
                if self.rg(*w) {
                    let mut dw = vec![0.0; b * q];
                    for i in 0..b {
                        for j in 0..q {
                            dw[i * q + j] = g.row(i).iter().zip(tr.row(i * q + j)).map(|(x, y)| x * y).sum();
                        }
                    }
                    acc(*w, like(*w, dw));
                }
                if self.rg(*rows) {
                    let mut dr = vec![0.0; b * q * d];
                    for i in 0..b {
                        for j in 0..q {
                            let a = tw.get(i, j);
                            for (o, gv) in dr[(i * q + j) * d..(i * q + j + 1) * d].iter_mut().zip(g.row(i)) {
                                *o = a * gv;
                            }
                        }
                    }
                    acc(*rows, like(*rows, dr));
                }
            }
            Op::WeightedSum(a, w) => {
                let gs = g.values()[0];
                acc(*a, like(*a, w.values().iter().map(|v| gs * v).collect()));
            }
            Op::CrossEntropy(logits, labels) => {
                let x = self.value(*logits);
                let (r, c) = x.dims2().unwrap();
                let gs = g.values()[0] / r.max(1) as f64;
                let mut d = vec![0.0; r * c];
                for (i, &y) in labels.iter().enumerate() {
                    let row = x.row(i);
                    let lse = logsumexp(row.iter().copied());
                    for j in 0..c {
                        d[i * c + j] = gs * (row[j] - lse).exp();
                    }
                    d[i * c + y] -= gs;
                }
                acc(*logits, like(*logits, d));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![-1.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).values(), &[0.0, 2.0]);
    }

    #[test]
    fn softmax_of_uniform_logits() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(1, 5, vec![0.3; 5]));
        let y = t.row_softmax(x).unwrap();
        for &v in t.value(y).values() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn log_sum_exp_does_not_overflow() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(1, 2, vec![1000.0, 1000.0]));
        let y = t.log_sum_exp(x).unwrap();
        let v = t.value(y).values()[0];
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn squared_norm_gradient_is_twice_input() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.5, -2.0, 0.25]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().values(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hinge_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0, 1.0]));
        let y = t.hinge(x);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().values(), &[0.0, 1.0]);
    }

    #[test]
    fn repeated_backward_doubles_parameter_gradients() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let mut t = Tape::new();
        let w = t.param(&store, id);
        let x = t.constant(Tensor::matrix(2, 1, vec![0.5, -1.0]));
        let y = t.matmul(w, x).unwrap();
        let y2 = t.mul(y, y).unwrap();
        let l = t.sum(y2);
        let g = t.backward(l).unwrap();
        g.accumulate_into(&mut store);
        let once = store.grad(id).clone();
        let g = t.backward(l).unwrap();
        g.accumulate_into(&mut store);
        let twice = store.grad(id);
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn parameter_used_twice_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![2.0]));
        let mut t = Tape::new();
        let a = t.param(&store, id);
        let b = t.param(&store, id);
        let p = t.mul(a, b).unwrap();
        let l = t.sum(p);
        let g = t.backward(l).unwrap();
        assert_eq!(g.params()[0].1.values(), &[4.0]);
    }

    #[test]
    fn masked_log_softmax_ignores_masked_entries() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(1, 3, vec![5.0, 0.0, 0.0]));
        let y = t
            .masked_row_log_softmax(x, Rc::new(vec![false, true, true]))
            .unwrap();
        let v = t.value(y).values();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]));
        let b = t.leaf(Tensor::zeros(&[3, 2]));
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
    }
}
