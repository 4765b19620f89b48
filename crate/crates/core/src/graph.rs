//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only tape: every operation records its operands
//! and forward value immediately, and [`Graph::backward`] replays the tape
//! in reverse, accumulating gradients. Graphs are built per training step
//! and discarded. [`Graph::stop_gradient`] forwards its input unchanged and
//! contributes exactly zero to its parents during the backward pass.
//!
//! Softmax-style denominators (softmax, log-softmax, log-sum-exp) subtract
//! the maximum exponent before exponentiation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{dot, l2_norm, softmax_into, Tensor};
use crate::NORM_EPSILON;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    AddConst(NodeId),
    Scale(NodeId, f64),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    MatMulTransB(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Inner(NodeId, NodeId),
    L2Norm(NodeId),
    DivByScalar(NodeId, NodeId),
    MulByScalar(NodeId, NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    CausalRowSoftmax(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    GatherRows(NodeId, Vec<usize>),
    StackRows(Vec<NodeId>),
    SelectRow(NodeId, usize),
    GatherElems(NodeId, Vec<usize>),
    Concat(Vec<NodeId>),
    LogSumExp(NodeId),
    ScoreAll { table: NodeId, query: NodeId },
    RowNormalize(NodeId),
    RowStandardize(NodeId),
    RowNorms(NodeId),
    RowScale(NodeId, NodeId),
    RowAffine { mat: NodeId, row: NodeId, mat_coeff: f64, row_coeff: f64 },
    StopGradient(NodeId),
}

/// Append-only differentiation tape.
#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        id
    }

    /// Register a differentiable input (parameter or activation root).
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    /// Register a non-learned input (masks, fixed weights). Mechanically a
    /// leaf; its gradient is simply never read.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Gradient accumulated at `id` after `backward`, zeros if untouched.
    pub fn grad(&self, id: NodeId) -> Tensor {
        let shape = self.values[id.0].shape().to_vec();
        match &self.grads[id.0] {
            Some(g) => {
                let mut t = Tensor::zeros(&shape);
                t.data_mut().copy_from_slice(g);
                t
            }
            None => Tensor::zeros(&shape),
        }
    }

    // ---- elementwise and scalar ops ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.values[a.0].same_shape(&self.values[b.0], "add")?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x + y)
            .collect();
        let t = clone_shaped(&self.values[a.0], data);
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let data = self.values[a.0].data().iter().map(|x| x + c).collect();
        let t = clone_shaped(&self.values[a.0], data);
        self.push(t, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data = self.values[a.0].data().iter().map(|x| x * c).collect();
        let t = clone_shaped(&self.values[a.0], data);
        self.push(t, Op::Scale(a, c))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.values[a.0].same_shape(&self.values[b.0], "mul")?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .collect();
        let t = clone_shaped(&self.values[a.0], data);
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let data = self.values[a.0].data().iter().map(|x| math::exp(*x)).collect();
        let t = clone_shaped(&self.values[a.0], data);
        self.push(t, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let data = self.values[a.0].data().iter().map(|x| math::ln(*x)).collect();
        let t = clone_shaped(&self.values[a.0], data);
        self.push(t, Op::Log(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let data = self.values[a.0].data().iter().map(|x| math::tanh(*x)).collect();
        let t = clone_shaped(&self.values[a.0], data);
        self.push(t, Op::Tanh(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.values[a.0].data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.values[a.0].len() as f64;
        let s: f64 = self.values[a.0].data().iter().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        crate::tensor::matmul_into(&mut out, av.data(), bv.data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b)))
    }

    /// `A (m x k) . B^T` where `b` is stored as `(n x k)`.
    pub fn matmul_trans_b(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.cols() {
            return Err(Error::ShapeMismatch {
                op: "matmul_trans_b",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = dot(av.row(i), bv.row(j));
            }
        }
        let _ = k;
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulTransB(a, b)))
    }

    pub fn matvec(&mut self, a: NodeId, x: NodeId) -> Result<NodeId> {
        let (av, xv) = (&self.values[a.0], &self.values[x.0]);
        if av.shape().len() != 2 || xv.shape().len() != 1 || av.cols() != xv.len() {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                lhs: av.shape().to_vec(),
                rhs: xv.shape().to_vec(),
            });
        }
        let out: Vec<f64> = (0..av.rows()).map(|i| dot(av.row(i), xv.data())).collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(a, x)))
    }

    pub fn inner(&mut self, u: NodeId, v: NodeId) -> Result<NodeId> {
        self.values[u.0].same_shape(&self.values[v.0], "inner")?;
        let s = dot(self.values[u.0].data(), self.values[v.0].data());
        Ok(self.push(Tensor::scalar(s), Op::Inner(u, v)))
    }

    pub fn l2_norm(&mut self, v: NodeId) -> NodeId {
        let n = l2_norm(self.values[v.0].data());
        self.push(Tensor::scalar(n), Op::L2Norm(v))
    }

    pub fn div_by_scalar(&mut self, v: NodeId, s: NodeId) -> Result<NodeId> {
        if !self.values[s.0].is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "div_by_scalar",
                lhs: self.values[v.0].shape().to_vec(),
                rhs: self.values[s.0].shape().to_vec(),
            });
        }
        let sv = self.values[s.0].item();
        let data = self.values[v.0].data().iter().map(|x| x / sv).collect();
        let t = clone_shaped(&self.values[v.0], data);
        Ok(self.push(t, Op::DivByScalar(v, s)))
    }

    pub fn mul_by_scalar(&mut self, v: NodeId, s: NodeId) -> Result<NodeId> {
        if !self.values[s.0].is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "mul_by_scalar",
                lhs: self.values[v.0].shape().to_vec(),
                rhs: self.values[s.0].shape().to_vec(),
            });
        }
        let sv = self.values[s.0].item();
        let data = self.values[v.0].data().iter().map(|x| x * sv).collect();
        let t = clone_shaped(&self.values[v.0], data);
        Ok(self.push(t, Op::MulByScalar(v, s)))
    }

    /// `v / ||v||_2`; errors if the norm is at or below the guard.
    pub fn normalize(&mut self, v: NodeId) -> Result<NodeId> {
        let n = self.l2_norm(v);
        if self.values[n.0].item() <= NORM_EPSILON {
            return Err(Error::DegenerateVector { op: "normalize" });
        }
        self.div_by_scalar(v, n)
    }

    // ---- softmax family ----

    pub fn softmax(&mut self, v: NodeId) -> NodeId {
        let x = self.values[v.0].data();
        let mut out = vec![0.0; x.len()];
        softmax_into(&mut out, x);
        self.push(Tensor::vector(out), Op::Softmax(v))
    }

    pub fn log_softmax(&mut self, v: NodeId) -> NodeId {
        let x = self.values[v.0].data();
        let lse = crate::tensor::logsumexp(x);
        let out: Vec<f64> = x.iter().map(|xi| xi - lse).collect();
        self.push(Tensor::vector(out), Op::LogSoftmax(v))
    }

    pub fn logsumexp(&mut self, v: NodeId) -> NodeId {
        let s = crate::tensor::logsumexp(self.values[v.0].data());
        self.push(Tensor::scalar(s), Op::LogSumExp(v))
    }

    /// Row-wise softmax of a square score matrix where row `i` is restricted
    /// to columns `0..=i`; masked columns come out as exactly zero.
    pub fn causal_row_softmax(&mut self, m: NodeId) -> Result<NodeId> {
        let mv = &self.values[m.0];
        if mv.shape().len() != 2 || mv.rows() != mv.cols() {
            return Err(Error::ShapeMismatch {
                op: "causal_row_softmax",
                lhs: mv.shape().to_vec(),
                rhs: vec![],
            });
        }
        let t = mv.rows();
        let mut out = vec![0.0; t * t];
        for i in 0..t {
            let row = mv.row(i);
            softmax_into(&mut out[i * t..i * t + i + 1], &row[..i + 1]);
        }
        Ok(self.push(Tensor::matrix(t, t, out), Op::CausalRowSoftmax(m)))
    }

    // ---- gather / reshape ----

    pub fn gather_rows(&mut self, src: NodeId, rows: &[usize]) -> Result<NodeId> {
        let sv = &self.values[src.0];
        if sv.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: sv.shape().to_vec(),
                rhs: vec![rows.len()],
            });
        }
        let c = sv.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            assert!(r < sv.rows(), "gather_rows: row out of range");
            data.extend_from_slice(sv.row(r));
        }
        Ok(self.push(
            Tensor::matrix(rows.len(), c, data),
            Op::GatherRows(src, rows.to_vec()),
        ))
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty());
        let c = self.values[parts[0].0].len();
        let mut data = Vec::with_capacity(parts.len() * c);
        for &p in parts {
            let pv = &self.values[p.0];
            if pv.shape().len() != 1 || pv.len() != c {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![c],
                    rhs: pv.shape().to_vec(),
                });
            }
            data.extend_from_slice(pv.data());
        }
        Ok(self.push(
            Tensor::matrix(parts.len(), c, data),
            Op::StackRows(parts.to_vec()),
        ))
    }

    pub fn select_row(&mut self, src: NodeId, row: usize) -> NodeId {
        let sv = &self.values[src.0];
        let data = sv.row(row).to_vec();
        self.push(Tensor::vector(data), Op::SelectRow(src, row))
    }

    pub fn gather_elems(&mut self, v: NodeId, idxs: &[usize]) -> NodeId {
        let sv = &self.values[v.0];
        let data: Vec<f64> = idxs.iter().map(|&i| sv.data()[i]).collect();
        self.push(Tensor::vector(data), Op::GatherElems(v, idxs.to_vec()))
    }

    /// Concatenate scalars and vectors into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.values[p.0].data());
        }
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    // ---- row-wise matrix ops ----

    /// Scores of every catalog item against a query: row 0 of `table` is the
    /// padding embedding and is excluded, so the output has `rows - 1`
    /// entries and entry `j` is `table[j + 1] . query`.
    pub fn score_all(&mut self, table: NodeId, query: NodeId) -> Result<NodeId> {
        let (tv, qv) = (&self.values[table.0], &self.values[query.0]);
        if tv.shape().len() != 2 || qv.shape().len() != 1 || tv.cols() != qv.len() {
            return Err(Error::ShapeMismatch {
                op: "score_all",
                lhs: tv.shape().to_vec(),
                rhs: qv.shape().to_vec(),
            });
        }
        let n = tv.rows() - 1;
        let out: Vec<f64> = (1..=n).map(|r| dot(tv.row(r), qv.data())).collect();
        Ok(self.push(Tensor::vector(out), Op::ScoreAll { table, query }))
    }

    pub fn row_normalize(&mut self, m: NodeId) -> Result<NodeId> {
        let mv = &self.values[m.0];
        let (r, c) = (mv.rows(), mv.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let norm = l2_norm(mv.row(i));
            if norm <= NORM_EPSILON {
                return Err(Error::DegenerateVector { op: "row_normalize" });
            }
            data.extend(mv.row(i).iter().map(|x| x / norm));
        }
        Ok(self.push(Tensor::matrix(r, c, data), Op::RowNormalize(m)))
    }

    /// Parameter-free layer normalization: each row shifted to zero mean
    /// and scaled to unit variance.
    pub fn row_standardize(&mut self, m: NodeId) -> NodeId {
        let mv = &self.values[m.0];
        let (r, c) = (mv.rows(), mv.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = mv.row(i);
            let (mean, sigma) = row_moments(row);
            data.extend(row.iter().map(|x| (x - mean) / sigma));
        }
        self.push(Tensor::matrix(r, c, data), Op::RowStandardize(m))
    }

    pub fn row_norms(&mut self, m: NodeId) -> NodeId {
        let mv = &self.values[m.0];
        let out: Vec<f64> = (0..mv.rows()).map(|i| l2_norm(mv.row(i))).collect();
        self.push(Tensor::vector(out), Op::RowNorms(m))
    }

    pub fn row_scale(&mut self, m: NodeId, s: NodeId) -> Result<NodeId> {
        let (mv, sv) = (&self.values[m.0], &self.values[s.0]);
        if sv.shape().len() != 1 || sv.len() != mv.rows() {
            return Err(Error::ShapeMismatch {
                op: "row_scale",
                lhs: mv.shape().to_vec(),
                rhs: sv.shape().to_vec(),
            });
        }
        let (r, c) = (mv.rows(), mv.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let f = sv.data()[i];
            data.extend(mv.row(i).iter().map(|x| x * f));
        }
        Ok(self.push(Tensor::matrix(r, c, data), Op::RowScale(m, s)))
    }

    /// `mat_coeff * M + row_coeff * (1 (x) row)`: every row of the result is
    /// an affine mix of the matching row of `M` and the broadcast `row`.
    pub fn row_affine(
        &mut self,
        mat: NodeId,
        row: NodeId,
        mat_coeff: f64,
        row_coeff: f64,
    ) -> Result<NodeId> {
        let (mv, rv) = (&self.values[mat.0], &self.values[row.0]);
        if rv.shape().len() != 1 || rv.len() != mv.cols() {
            return Err(Error::ShapeMismatch {
                op: "row_affine",
                lhs: mv.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let (r, c) = (mv.rows(), mv.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(mat_coeff * mv.row(i)[j] + row_coeff * rv.data()[j]);
            }
        }
        Ok(self.push(
            Tensor::matrix(r, c, data),
            Op::RowAffine {
                mat,
                row,
                mat_coeff,
                row_coeff,
            },
        ))
    }

    /// Broadcast-add a bias row to every row of a matrix.
    pub fn add_row_broadcast(&mut self, mat: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_affine(mat, row, 1.0, 1.0)
    }

    /// Identity forward, zero backward. The forward value is a bit-exact
    /// copy of the input.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let t = self.values[x.0].clone();
        self.push(t, Op::StopGradient(x))
    }

    // ---- backward ----

    /// Propagate gradients from a scalar loss to every reachable node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.values[loss.0].is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.values[loss.0].shape().to_vec(),
            });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, id: NodeId) -> &mut Vec<f64> {
        let len = self.values[id.0].len();
        self.grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Ops only reference earlier nodes, so grads[parent] never aliases g.
        let op = self.ops[i].clone();
        match op {
            Op::Leaf => {}
            Op::StopGradient(parent) => {
                debug_assert_eq!(self.values[parent.0].len(), g.len());
            }
            Op::Add(a, b) => {
                axpy(self.acc(a), g, 1.0);
                axpy(self.acc(b), g, 1.0);
            }
            Op::AddConst(a) => axpy(self.acc(a), g, 1.0),
            Op::Scale(a, c) => axpy(self.acc(a), g, c),
            Op::Mul(a, b) => {
                let bv = self.values[b.0].data().to_vec();
                let av = self.values[a.0].data().to_vec();
                acc_prod(self.acc(a), g, &bv);
                acc_prod(self.acc(b), g, &av);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.values[a.0].rows(), self.values[a.0].cols());
                let n = self.values[b.0].cols();
                let av = self.values[a.0].data().to_vec();
                let bv = self.values[b.0].data().to_vec();
                // dA += G . B^T ; dB += A^T . G
                acc_mm_abt(self.acc(a), g, &bv, m, n, k);
                acc_mm_atb(self.acc(b), &av, g, m, k, n);
            }
            Op::MatMulTransB(a, b) => {
                let (m, k) = (self.values[a.0].rows(), self.values[a.0].cols());
                let n = self.values[b.0].rows();
                let av = self.values[a.0].data().to_vec();
                let bv = self.values[b.0].data().to_vec();
                // C = A . B^T  =>  dA += G . B ; dB += G^T . A
                acc_mm(self.acc(a), g, &bv, m, n, k);
                acc_mm_atb(self.acc(b), g, &av, m, n, k);
            }
            Op::MatVec(a, x) => {
                let (m, k) = (self.values[a.0].rows(), self.values[a.0].cols());
                let av = self.values[a.0].data().to_vec();
                let xv = self.values[x.0].data().to_vec();
                {
                    let da = self.acc(a);
                    for i in 0..m {
                        for j in 0..k {
                            da[i * k + j] += g[i] * xv[j];
                        }
                    }
                }
                let dx = self.acc(x);
                for i in 0..m {
                    for j in 0..k {
                        dx[j] += g[i] * av[i * k + j];
                    }
                }
            }
            Op::Inner(u, v) => {
                let uv = self.values[u.0].data().to_vec();
                let vv = self.values[v.0].data().to_vec();
                axpy(self.acc(u), &vv, g[0]);
                axpy(self.acc(v), &uv, g[0]);
            }
            Op::L2Norm(v) => {
                let n = self.values[i].item();
                if n > 0.0 {
                    let vv = self.values[v.0].data().to_vec();
                    axpy(self.acc(v), &vv, g[0] / n);
                }
            }
            Op::DivByScalar(v, s) => {
                let sv = self.values[s.0].item();
                let vv = self.values[v.0].data().to_vec();
                axpy(self.acc(v), g, 1.0 / sv);
                self.acc(s)[0] -= dot(g, &vv) / (sv * sv);
            }
            Op::MulByScalar(v, s) => {
                let sv = self.values[s.0].item();
                let vv = self.values[v.0].data().to_vec();
                axpy(self.acc(v), g, sv);
                self.acc(s)[0] += dot(g, &vv);
            }
            Op::Softmax(v) => {
                let y = self.values[i].data().to_vec();
                let gy = dot(g, &y);
                let dv = self.acc(v);
                for j in 0..y.len() {
                    dv[j] += y[j] * (g[j] - gy);
                }
            }
            Op::LogSoftmax(v) => {
                let y = self.values[i].data().to_vec();
                let gsum: f64 = g.iter().sum();
                let dv = self.acc(v);
                for j in 0..y.len() {
                    dv[j] += g[j] - math::exp(y[j]) * gsum;
                }
            }
            Op::LogSumExp(v) => {
                let lse = self.values[i].item();
                let xv = self.values[v.0].data().to_vec();
                let dv = self.acc(v);
                for j in 0..xv.len() {
                    dv[j] += g[0] * math::exp(xv[j] - lse);
                }
            }
            Op::CausalRowSoftmax(m) => {
                let t = self.values[i].rows();
                let y = self.values[i].data().to_vec();
                let dm = self.acc(m);
                for r in 0..t {
                    let yr = &y[r * t..r * t + r + 1];
                    let gr = &g[r * t..r * t + r + 1];
                    let gy = dot(gr, yr);
                    for j in 0..=r {
                        dm[r * t + j] += yr[j] * (gr[j] - gy);
                    }
                }
            }
            Op::Exp(a) => {
                let y = self.values[i].data().to_vec();
                acc_prod(self.acc(a), g, &y);
            }
            Op::Log(a) => {
                let xv = self.values[a.0].data().to_vec();
                let da = self.acc(a);
                for j in 0..xv.len() {
                    da[j] += g[j] / xv[j];
                }
            }
            Op::Tanh(a) => {
                let y = self.values[i].data().to_vec();
                let da = self.acc(a);
                for j in 0..y.len() {
                    da[j] += g[j] * (1.0 - y[j] * y[j]);
                }
            }
            Op::Sum(a) => {
                let da = self.acc(a);
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Mean(a) => {
                let n = self.values[a.0].len() as f64;
                let da = self.acc(a);
                for d in da.iter_mut() {
                    *d += g[0] / n;
                }
            }
            Op::GatherRows(src, rows) => {
                let c = self.values[i].cols();
                let ds = self.acc(src);
                for (out_r, &src_r) in rows.iter().enumerate() {
                    for j in 0..c {
                        ds[src_r * c + j] += g[out_r * c + j];
                    }
                }
            }
            Op::StackRows(parts) => {
                let c = self.values[i].cols();
                for (r, &p) in parts.iter().enumerate() {
                    axpy(self.acc(p), &g[r * c..(r + 1) * c], 1.0);
                }
            }
            Op::SelectRow(src, row) => {
                let c = self.values[i].len();
                let ds = self.acc(src);
                for j in 0..c {
                    ds[row * c + j] += g[j];
                }
            }
            Op::GatherElems(v, idxs) => {
                let dv = self.acc(v);
                for (t, &idx) in idxs.iter().enumerate() {
                    dv[idx] += g[t];
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts.iter() {
                    let len = self.values[p.0].len();
                    axpy(self.acc(p), &g[off..off + len], 1.0);
                    off += len;
                }
            }
            Op::ScoreAll { table, query } => {
                let d = self.values[query.0].len();
                let qv = self.values[query.0].data().to_vec();
                let tv = self.values[table.0].data().to_vec();
                {
                    let dt = self.acc(table);
                    for (j, &gj) in g.iter().enumerate() {
                        if gj == 0.0 {
                            continue;
                        }
                        let r = j + 1;
                        for c in 0..d {
                            dt[r * d + c] += gj * qv[c];
                        }
                    }
                }
                let dq = self.acc(query);
                for (j, &gj) in g.iter().enumerate() {
                    if gj == 0.0 {
                        continue;
                    }
                    let r = j + 1;
                    for c in 0..d {
                        dq[c] += gj * tv[r * d + c];
                    }
                }
            }
            Op::RowNormalize(m) => {
                let (r, c) = (self.values[m.0].rows(), self.values[m.0].cols());
                let mv = self.values[m.0].data().to_vec();
                let yv = self.values[i].data().to_vec();
                let dm = self.acc(m);
                for row in 0..r {
                    let x = &mv[row * c..(row + 1) * c];
                    let y = &yv[row * c..(row + 1) * c];
                    let gr = &g[row * c..(row + 1) * c];
                    let n = l2_norm(x);
                    let gy = dot(gr, y);
                    for j in 0..c {
                        dm[row * c + j] += (gr[j] - gy * y[j]) / n;
                    }
                }
            }
            Op::RowStandardize(m) => {
                let (r, c) = (self.values[m.0].rows(), self.values[m.0].cols());
                let mv = self.values[m.0].data().to_vec();
                let yv = self.values[i].data().to_vec();
                let dm = self.acc(m);
                for row in 0..r {
                    let x = &mv[row * c..(row + 1) * c];
                    let y = &yv[row * c..(row + 1) * c];
                    let gr = &g[row * c..(row + 1) * c];
                    let (_, sigma) = row_moments(x);
                    let g_mean: f64 = gr.iter().sum::<f64>() / c as f64;
                    let gy_mean: f64 = dot(gr, y) / c as f64;
                    for j in 0..c {
                        dm[row * c + j] += (gr[j] - g_mean - y[j] * gy_mean) / sigma;
                    }
                }
            }
            Op::RowNorms(m) => {
                let (r, c) = (self.values[m.0].rows(), self.values[m.0].cols());
                let mv = self.values[m.0].data().to_vec();
                let norms = self.values[i].data().to_vec();
                let dm = self.acc(m);
                for row in 0..r {
                    if norms[row] > 0.0 {
                        let f = g[row] / norms[row];
                        for j in 0..c {
                            dm[row * c + j] += f * mv[row * c + j];
                        }
                    }
                }
            }
            Op::RowScale(m, s) => {
                let (r, c) = (self.values[m.0].rows(), self.values[m.0].cols());
                let mv = self.values[m.0].data().to_vec();
                let sv = self.values[s.0].data().to_vec();
                {
                    let dm = self.acc(m);
                    for row in 0..r {
                        for j in 0..c {
                            dm[row * c + j] += g[row * c + j] * sv[row];
                        }
                    }
                }
                let ds = self.acc(s);
                for row in 0..r {
                    ds[row] += dot(&g[row * c..(row + 1) * c], &mv[row * c..(row + 1) * c]);
                }
            }
            Op::RowAffine {
                mat,
                row,
                mat_coeff,
                row_coeff,
            } => {
                let (r, c) = (self.values[mat.0].rows(), self.values[mat.0].cols());
                axpy(self.acc(mat), g, mat_coeff);
                let dr = self.acc(row);
                for i in 0..r {
                    for j in 0..c {
                        dr[j] += row_coeff * g[i * c + j];
                    }
                }
            }
        }
    }
}

/// Mean and sqrt(variance + eps) of a row (biased variance, eps 1e-8).
fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var + 1e-8))
}

fn clone_shaped(like: &Tensor, data: Vec<f64>) -> Tensor {
    debug_assert_eq!(like.len(), data.len());
    match like.shape().len() {
        0 => Tensor::scalar(data[0]),
        1 => Tensor::vector(data),
        _ => Tensor::matrix(like.rows(), like.cols(), data),
    }
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for i in 0..dst.len() {
        dst[i] += a * src[i];
    }
}

#[inline]
fn acc_prod(dst: &mut [f64], g: &[f64], other: &[f64]) {
    for i in 0..dst.len() {
        dst[i] += g[i] * other[i];
    }
}

/// dst (m x n) += A (m x k) . B (k x n)
fn acc_mm(dst: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                dst[i * n + j] += av * b[p * n + j];
            }
        }
    }
}

/// dst (m x k) += A (m x n) . B (k x n)^T
fn acc_mm_abt(dst: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        for p in 0..k {
            dst[i * k + p] += dot(&a[i * n..(i + 1) * n], &b[p * n..(p + 1) * n]);
        }
    }
}

/// dst (k x n) += A (m x k)^T . B (m x n)
fn acc_mm_atb(dst: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                dst[p * n + j] += av * b[i * n + j];
            }
        }
    }
}
