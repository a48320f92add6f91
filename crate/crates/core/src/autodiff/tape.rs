//! Reverse-mode differentiation tape.
//!
//! Nodes are appended in evaluation order, so walking the node list backwards
//! is a reverse topological order and every node is visited exactly once.

use std::borrow::Cow;

use super::params::{ParamId, ParamStore};
use super::{AutodiffError, Tensor, MASK_SENTINEL};
use crate::graph::SparseAdj;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Any mask entry at or below this value switches its logit off entirely.
const MASKED_BELOW: f64 = MASK_SENTINEL / 2.0;

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul(&'a SparseAdj, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    Transpose(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Lookup(Var, Vec<usize>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Tensor,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op<'a>,
}

/// Records a forward computation so that gradients can be pulled back through it.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to an arbitrary node, if the loss depends on it.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.by_node.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for every parameter in `store`, zero-filled where the
    /// parameter was not reached from the loss.
    pub fn for_params(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        for &(id, var) in &self.params {
            if let Some(g) = self.wrt(var) {
                out[id.index()].add_assign(g);
            }
        }
        out
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op<'a>, name: &'static str) -> Result<Var, AutodiffError> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Owned input that gradients may flow into.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.push(Cow::Owned(value), Op::Leaf, "leaf")
    }

    /// Borrowed input; avoids copying large read-only tensors onto the tape.
    pub fn leaf_ref(&mut self, value: &'a Tensor) -> Result<Var, AutodiffError> {
        self.push(Cow::Borrowed(value), Op::Leaf, "leaf")
    }

    /// Binds a learnable parameter so that [`Gradients::for_params`] can find it.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Result<Var, AutodiffError> {
        let var = self.leaf_ref(store.get(id))?;
        self.params.push((id, var));
        Ok(var)
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(AutodiffError::shape(op, ta, tb));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op<'a>, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var, AutodiffError> {
        self.check_same(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.push(Cow::Owned(out), op, name)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Cow::Owned(out), Op::MatMul(a, b), "matmul")
    }

    /// `adj · x` with a fixed sparse left operand.
    pub fn sparse_matmul(&mut self, adj: &'a SparseAdj, x: Var) -> Result<Var, AutodiffError> {
        let out = adj.matmul_dense(self.value(x))?;
        self.push(Cow::Owned(out), Op::SparseMatMul(adj, x), "sparse_matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with(Op::Add(a, b), "add", a, b, |x, y| x + y)
    }

    /// Adds a single row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() || !ta.is_matrix_like() {
            return Err(AutodiffError::shape("add_row", ta, tr));
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tr.data()[i % c])
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.push(Cow::Owned(out), Op::AddRow(a, row), "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with(Op::Sub(a, b), "sub", a, b, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with(Op::Mul(a, b), "mul", a, b, |x, y| x * y)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.push(Cow::Owned(out), Op::Relu(a), "relu")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * factor).collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.push(Cow::Owned(out), Op::Scale(a, factor), "scale")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if !ta.is_matrix_like() {
            return Err(AutodiffError::InvalidShape(ta.shape().to_vec()));
        }
        let out = ta.transposed();
        self.push(Cow::Owned(out), Op::Transpose(a), "transpose")
    }

    /// Row-wise softmax of `a + mask`.
    ///
    /// Mask entries are `0.0` or [`MASK_SENTINEL`]; sentinel positions get a
    /// weight of exactly zero and a row with every entry masked is all zeros.
    pub fn softmax(&mut self, a: Var, mask: Option<&Tensor>) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if !ta.is_matrix_like() {
            return Err(AutodiffError::InvalidShape(ta.shape().to_vec()));
        }
        if let Some(m) = mask {
            if m.shape() != ta.shape() {
                return Err(AutodiffError::shape("softmax", ta, m));
            }
        }
        let (rows, cols) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let x = ta.row(r);
            let m = mask.map(|m| m.row(r));
            let allowed = |j: usize| m.is_none_or(|m| m[j] > MASKED_BELOW);
            let shifted = |j: usize| x[j] + m.map_or(0.0, |m| m[j]);
            let max = (0..cols)
                .filter(|&j| allowed(j))
                .map(shifted)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for (j, v) in o.iter_mut().enumerate() {
                if allowed(j) {
                    *v = (shifted(j) - max).exp();
                    total += *v;
                }
            }
            for v in o.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::new(ta.shape(), out)?;
        self.push(Cow::Owned(out), Op::Softmax(a), "softmax")
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows || !self.value(p).is_matrix_like() {
                return Err(AutodiffError::shape("concat_cols", self.value(first), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(&[rows, total], data)?;
        self.push(Cow::Owned(out), Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols || !t.is_matrix_like() {
                return Err(AutodiffError::shape("concat_rows", self.value(first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(&[rows, cols], data)?;
        self.push(Cow::Owned(out), Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Gathers rows of `table` in the order given by `indices`.
    pub fn lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(table);
        if indices.is_empty() {
            return Err(AutodiffError::EmptyConcat);
        }
        let rows = t.rows();
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: rows });
        }
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(&[indices.len(), t.cols()], data)?;
        self.push(Cow::Owned(out), Op::Lookup(table, indices.to_vec()), "lookup")
    }

    /// `x · w + b`, with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Cow::Owned(out), Op::Sum(a), "sum")
    }

    /// Summed negative log-likelihood of `targets` under a row-wise softmax of
    /// `logits`. Rows whose target is `None` contribute nothing.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, AutodiffError> {
        let t = self.value(logits);
        if targets.len() != t.rows() || !t.is_matrix_like() {
            return Err(AutodiffError::TargetCount {
                rows: t.rows(),
                targets: targets.len(),
            });
        }
        let cols = t.cols();
        let mut probs = vec![0.0; t.len()];
        let mut loss = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let Some(target) = *target else { continue };
            if target >= cols {
                return Err(AutodiffError::IndexOutOfRange { index: target, len: cols });
            }
            let x = t.row(r);
            let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_total = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (p, &v) in probs[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *p = (v - max - log_total).exp();
            }
            loss -= x[target] - max - log_total;
        }
        let probs = Tensor::new(t.shape(), probs)?;
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push(Cow::Owned(Tensor::scalar(loss)), op, "cross_entropy")
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let seed_shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(seed_shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(&seed_shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.pull_back(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            by_node: grads,
            params: self.params.clone(),
        })
    }

    fn pull_back(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), AutodiffError> {
        let node = &self.nodes[idx];
        let mut acc = |var: Var, delta: Tensor| {
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => {
                    let shape = self.value(var).shape();
                    *slot = Some(delta.reshape(shape).expect("gradient shape matches value"));
                }
            }
        };
        let map = |t: &Tensor, f: &dyn Fn(usize, f64) -> f64| {
            let data = t.data().iter().enumerate().map(|(i, &v)| f(i, v)).collect();
            Tensor::new(t.shape(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let g2 = g.clone().reshape(&[ta.rows(), tb.cols()])?;
                acc(*a, g2.matmul(&tb.transposed())?);
                acc(*b, ta.transposed().matmul(&g2)?);
            }
            Op::SparseMatMul(adj, x) => acc(*x, adj.transpose_matmul_dense(g)?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                let c = g.cols();
                let mut col_sums = vec![0.0; c];
                for (i, v) in g.data().iter().enumerate() {
                    col_sums[i % c] += v;
                }
                acc(*a, g.clone());
                acc(*row, Tensor::new(&[c], col_sums)?);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, map(g, &|_, v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, map(g, &|i, v| v * tb.data()[i]));
                acc(*b, map(g, &|i, v| v * ta.data()[i]));
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                acc(*a, map(g, &|i, v| if ta.data()[i] > 0.0 { v } else { 0.0 }));
            }
            Op::Scale(a, f) => acc(*a, map(g, &|_, v| v * f)),
            Op::Transpose(a) => acc(*a, g.transposed()),
            Op::Softmax(a) => {
                let y = &node.value;
                let cols = y.cols();
                let mut out = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        out[r * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, Tensor::new(y.shape(), out)?);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut data = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row(r)[offset..offset + c]);
                    }
                    offset += c;
                    acc(p, Tensor::new(&[rows, c], data)?);
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let data = g.data()[offset..offset + n].to_vec();
                    offset += n;
                    acc(p, Tensor::new(&[n / cols, cols], data)?);
                }
            }
            Op::Lookup(table, indices) => {
                let t = self.value(*table);
                let mut out = Tensor::zeros(&[t.rows(), t.cols()]);
                let c = t.cols();
                for (k, &i) in indices.iter().enumerate() {
                    let src = g.row(k);
                    for (o, v) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(src) {
                        *o += v;
                    }
                }
                acc(*table, out);
            }
            Op::Sum(a) => {
                let s = g.item();
                acc(*a, Tensor::filled(self.value(*a).shape(), s));
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let s = g.item();
                let cols = probs.cols();
                let mut out = vec![0.0; probs.len()];
                for (r, target) in targets.iter().enumerate() {
                    let Some(target) = *target else { continue };
                    for j in 0..cols {
                        out[r * cols + j] = s * probs.get(r, j);
                    }
                    out[r * cols + target] -= s;
                }
                acc(*logits, Tensor::new(probs.shape(), out)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0])).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_symmetric_and_masked() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[0.0, 0.0])).unwrap();
        let y = tape.softmax(x, None).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        let x = tape.leaf(t(&[1, 2], &[3.0, 1.0])).unwrap();
        let mask = t(&[1, 2], &[0.0, MASK_SENTINEL]);
        let y = tape.softmax(x, Some(&mask)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0]);
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let mask = t(&[2, 2], &[MASK_SENTINEL, MASK_SENTINEL, 0.0, 0.0]);
        let y = tape.softmax(x, Some(&mask)).unwrap();
        assert_eq!(tape.value(y).row(0), &[0.0, 0.0]);
        assert!((tape.value(y).row(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(x).unwrap().all_finite());
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[2], &[1.0, 2.0])).unwrap();
        let s = tape.sum(w).unwrap();
        assert_eq!(tape.backward(s).unwrap().wrt(w).unwrap().data(), &[1.0, 1.0]);

        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        assert_eq!(tape.backward(loss).unwrap().wrt(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(w), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 3], &[0.0; 6])).unwrap();
        let b = tape.leaf(t(&[2, 3], &[0.0; 6])).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn non_finite_values_are_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1], &[1e300])).unwrap();
        let err = tape.scale(a, 1e300).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite("scale")));
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1], &[1.0])).unwrap();
        let b = tape.leaf(t(&[1], &[1.0])).unwrap();
        let loss = tape.sum(a).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(b).is_none());
    }

    #[test]
    fn cross_entropy_uniform_is_log_n() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[1, 4])).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &[Some(2)]).unwrap();
        assert!((tape.value(loss).item() - 4f64.ln()).abs() < 1e-12);
        let bad = tape.softmax_cross_entropy(logits, &[Some(4)]);
        assert!(bad.is_err());
    }
}
