use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::autodiff::{AutodiffError, Tensor};

/// Square weighted adjacency in compressed sparse row form.
///
/// Entries within a row are sorted by column and never repeated.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdj {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseAdj {
    /// Builds from `(row, col, weight)` triplets, summing repeated pairs.
    ///
    /// Panics if an index is out of range or a weight is not finite.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, w) in triplets {
            assert!(r < n && c < n, "entry ({r}, {c}) outside {n}x{n}");
            assert!(w.is_finite(), "non-finite weight at ({r}, {c})");
            *merged.entry((r, c)).or_insert(0.0) += w;
        }
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(merged.len());
        let mut weights = Vec::with_capacity(merged.len());
        for (&(r, c), &w) in &merged {
            row_ptr[r + 1] += 1;
            cols.push(c);
            weights.push(w);
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n,
            row_ptr,
            cols,
            weights,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)))
    }

    /// Adds a unit self-loop to every node, then divides each row by its sum.
    pub fn normalized_with_self_loops(&self) -> Self {
        let loops = (0..self.n).map(|i| (i, i, 1.0));
        let mut out = Self::from_triplets(self.n, self.entries().chain(loops));
        for r in 0..out.n {
            let span = out.row_ptr[r]..out.row_ptr[r + 1];
            let total: f64 = out.weights[span.clone()].iter().sum();
            for w in &mut out.weights[span] {
                *w /= total;
            }
        }
        out
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.weights[span].iter().copied())
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| self.row(r).map(move |(c, w)| (r, c, w)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(col, _)| col == c).map_or(0.0, |(_, w)| w)
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, w)| w).sum()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.n, self.n]);
        let n = self.n;
        for (r, c, w) in self.entries() {
            t.data_mut()[r * n + c] = w;
        }
        t
    }

    /// `self · x`.
    pub fn matmul_dense(&self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        if !x.is_matrix_like() || x.rows() != self.n {
            return Err(AutodiffError::ShapeMismatch {
                op: "sparse_matmul",
                lhs: vec![self.n, self.n],
                rhs: x.shape().to_vec(),
            });
        }
        let d = x.cols();
        let mut out = vec![0.0; self.n * d];
        for r in 0..self.n {
            let o = &mut out[r * d..(r + 1) * d];
            for (c, w) in self.row(r) {
                for (acc, v) in o.iter_mut().zip(x.row(c)) {
                    *acc += w * v;
                }
            }
        }
        Tensor::new(&[self.n, d], out)
    }

    /// `selfᵀ · g`, the pull-back of [`matmul_dense`](Self::matmul_dense).
    pub fn transpose_matmul_dense(&self, g: &Tensor) -> Result<Tensor, AutodiffError> {
        if !g.is_matrix_like() || g.rows() != self.n {
            return Err(AutodiffError::ShapeMismatch {
                op: "sparse_matmul_backward",
                lhs: vec![self.n, self.n],
                rhs: g.shape().to_vec(),
            });
        }
        let d = g.cols();
        let mut out = vec![0.0; self.n * d];
        for r in 0..self.n {
            let src = g.row(r);
            for (c, w) in self.row(r) {
                for (acc, v) in out[c * d..(c + 1) * d].iter_mut().zip(src) {
                    *acc += w * v;
                }
            }
        }
        Tensor::new(&[self.n, d], out)
    }

    /// Debug dump: `row col weight` per line.
    pub fn to_triples_text(&self) -> String {
        let mut out = String::new();
        for (r, c, w) in self.entries() {
            let _ = writeln!(out, "{r} {c} {w}");
        }
        out
    }
}
