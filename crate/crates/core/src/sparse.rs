//! Compressed-row sparse matrices and the direct factorizations used by every
//! solver in the crate.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{invalid, Error, Result};

/// Row-compressed sparse matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self { nrows: n, ncols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: d.to_vec() }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// in input order, so the result is independent of thread scheduling as
    /// long as the triplet list is.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) outside {nrows}x{ncols}");
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for i in 0..nrows {
            let (a, b) = (counts[i], counts[i + 1]);
            order.clear();
            order.extend(a..b);
            // stable: equal columns keep input order
            order.sort_by_key(|&k| cols[k]);
            let mut last = usize::MAX;
            for &k in &order {
                if cols[k] == last {
                    *values.last_mut().unwrap() += vals[k];
                } else {
                    col_idx.push(cols[k]);
                    values.push(vals[k]);
                    last = cols[k];
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn from_dense(rows: &[Vec<f64>], ncols: usize) -> Self {
        let mut t = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(rows.len(), ncols, &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column/value pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            t.extend(self.row(i).map(|(j, v)| (i, j, v)));
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "mul_vec dimension mismatch");
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `selfᵀ x` without forming the transpose.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "tr_mul_vec dimension mismatch");
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, v) in self.row(i) {
                    y[j] += v * xi;
                }
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            t.extend(self.row(i).map(|(j, v)| (j, i, v)));
        }
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// Sparse product `self · other` (row-by-row accumulation).
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "matmul dimension mismatch");
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut pattern: Vec<usize> = Vec::new();
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            pattern.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        pattern.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows: self.nrows, ncols: other.ncols, row_ptr, col_idx, values }
    }

    /// `alpha·self + beta·other`.
    pub fn add_scaled(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols), "add dimension mismatch");
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            t.extend(self.row(i).map(|(j, v)| (i, j, alpha * v)));
            t.extend(other.row(i).map(|(j, v)| (i, j, beta * v)));
        }
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= alpha);
        m
    }

    /// Submatrix by index maps: `row_map[i] = Some(k)` sends row `i` to row `k`
    /// of the result, `None` drops it. Same for columns.
    pub fn select(&self, row_map: &[Option<usize>], nrows: usize, col_map: &[Option<usize>], ncols: usize) -> Self {
        assert_eq!(row_map.len(), self.nrows);
        assert_eq!(col_map.len(), self.ncols);
        let mut t = Vec::new();
        for (i, ri) in row_map.iter().enumerate() {
            if let Some(r) = *ri {
                for (j, v) in self.row(i) {
                    if let Some(c) = col_map[j] {
                        t.push((r, c, v));
                    }
                }
            }
        }
        Self::from_triplets(nrows, ncols, &t)
    }

    /// Assembles a block matrix. `blocks[r][c] = None` is a zero block; every
    /// block row and column must contain at least one matrix to fix its size
    /// unless sizes are given explicitly.
    pub fn block(blocks: &[Vec<Option<&CsrMatrix>>], row_sizes: &[usize], col_sizes: &[usize]) -> Self {
        let mut roff = vec![0];
        for &r in row_sizes {
            roff.push(roff.last().unwrap() + r);
        }
        let mut coff = vec![0];
        for &c in col_sizes {
            coff.push(coff.last().unwrap() + c);
        }
        let mut t = Vec::new();
        for (bi, brow) in blocks.iter().enumerate() {
            for (bj, b) in brow.iter().enumerate() {
                if let Some(m) = b {
                    assert_eq!((m.nrows, m.ncols), (row_sizes[bi], col_sizes[bj]), "block ({bi},{bj}) size");
                    for i in 0..m.nrows {
                        t.extend(m.row(i).map(|(j, v)| (roff[bi] + i, coff[bj] + j, v)));
                    }
                }
            }
        }
        Self::from_triplets(*roff.last().unwrap(), *coff.last().unwrap(), &t)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij − A_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        self.add_scaled(1.0, &t, -1.0).max_abs()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.add_scaled(1.0, other, -1.0).max_abs()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| invalid(format!("sparse conversion: {e:?}")))
    }

    /// MatrixMarket coordinate dump, one-based indices.
    pub fn matrix_market(&self) -> String {
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
        }
        s
    }

    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.matrix_market().as_bytes())?;
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `sqrt(xᵀ A x)`, clamped at zero for round-off.
pub fn energy_norm(a: &CsrMatrix, x: &[f64]) -> f64 {
    dot(x, &a.mul_vec(x)).max(0.0).sqrt()
}

/// Which direct method backs a [`Factorization`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Cholesky,
    Lu,
}

/// A sparse direct factorization kept alive for repeated solves.
pub struct Factorization {
    n: usize,
    inner: Inner,
}

enum Inner {
    Empty,
    Cholesky(Llt<usize, f64>),
    Lu(Lu<usize, f64>),
}

impl Factorization {
    pub fn new(a: &CsrMatrix, method: Method, context: &str) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(invalid(format!("{context}: non-square matrix {}x{}", a.nrows, a.ncols)));
        }
        if a.nrows == 0 {
            return Ok(Self { n: 0, inner: Inner::Empty });
        }
        let fail = |reason: String| Error::Factorization { context: context.to_string(), reason };
        if let Some(i) = (0..a.nrows).find(|&i| a.row_ptr[i] == a.row_ptr[i + 1]) {
            return Err(fail(format!("row {i} is structurally empty")));
        }
        let m = a.to_faer()?;
        let inner = match method {
            Method::Cholesky => Inner::Cholesky(m.sp_cholesky(Side::Lower).map_err(|e| fail(format!("{e:?}")))?),
            Method::Lu => Inner::Lu(m.sp_lu().map_err(|e| fail(format!("{e:?}")))?),
        };
        Ok(Self { n: a.nrows, inner })
    }

    pub fn cholesky(a: &CsrMatrix, context: &str) -> Result<Self> {
        Self::new(a, Method::Cholesky, context)
    }

    pub fn lu(a: &CsrMatrix, context: &str) -> Result<Self> {
        Self::new(a, Method::Lu, context)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "solve dimension mismatch");
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let col = ColMut::from_slice_mut(x);
        match &self.inner {
            Inner::Empty => {}
            Inner::Cholesky(f) => f.solve_in_place(col.as_mat_mut()),
            Inner::Lu(f) => f.solve_in_place(col.as_mat_mut()),
        }
    }

    /// Solve followed by iterative refinement against `a` until the relative
    /// residual drops below `tol` (at most a few sweeps).
    pub fn solve_refined(&self, a: &CsrMatrix, b: &[f64], tol: f64) -> (Vec<f64>, f64) {
        let mut x = self.solve(b);
        let bn = norm_inf(b).max(f64::MIN_POSITIVE);
        let mut res = f64::INFINITY;
        for _ in 0..4 {
            let ax = a.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            res = norm_inf(&r) / bn;
            if res <= tol || !res.is_finite() {
                break;
            }
            let d = self.solve(&r);
            axpy(1.0, &d, &mut x);
        }
        (x, res)
    }
}
