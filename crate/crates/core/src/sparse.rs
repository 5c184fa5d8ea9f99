//! Compressed sparse row storage.
//!
//! [`SymSparseMatrix`] keeps both triangles explicitly so that row slices
//! double as column slices; [`CsrMatrix`] is the general rectangular form
//! used for coupling blocks.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{CpiError, Result};

/// Asymmetry (relative to the largest entry) accepted silently.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Asymmetry above this is rejected; between the two a warning is logged.
pub const SYMMETRY_REJECT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from coordinate entries. Duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(i, j, _) in &entries {
            if i >= nrows || j >= ncols {
                return Err(CpiError::DimensionMismatch(format!("entry ({i},{j}) outside {nrows}x{ncols}")));
            }
        }
        // bucket by row, then sort each row by column
        let mut count = vec![0usize; nrows + 1];
        for &(i, _, _) in &entries {
            count[i + 1] += 1;
        }
        for i in 0..nrows {
            count[i + 1] += count[i];
        }
        let mut next = count.clone();
        let mut bucket = vec![(0usize, 0.0f64); entries.len()];
        for &(i, j, v) in &entries {
            bucket[next[i]] = (j, v);
            next[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        for i in 0..nrows {
            let row = &mut bucket[count[i]..count[i + 1]];
            row.sort_unstable_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let (j, mut v) = row[k];
                k += 1;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    col_idx.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { nrows, ncols, row_ptr, col_idx, vals })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), vals: Vec::new() }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let trip = (0..a.nrows()).flat_map(|i| (0..a.ncols()).map(move |j| (i, j))).map(|(i, j)| (i, j, a[(i, j)]));
        Self::from_triplets(a.nrows(), a.ncols(), trip).expect("in-range entries")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.vals[r])
    }

    /// Iterates stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    /// `y = Aᵀ x`
    pub fn matvec_t(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                y[j] += a * xi;
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }

    pub fn transpose(&self) -> CsrMatrix {
        let trip: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, trip).expect("in-range entries")
    }

    /// Indices of columns holding at least one stored entry, ascending.
    pub fn nonzero_columns(&self) -> Vec<usize> {
        let mut seen = vec![false; self.ncols];
        for &j in &self.col_idx {
            seen[j] = true;
        }
        (0..self.ncols).filter(|&j| seen[j]).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    /// `Qᵀ A` for dense `Q` with `nrows` rows. Entries are accumulated in
    /// row-major order of `A`, which fixes the floating-point summation order.
    pub fn left_mul_transpose(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(q.nrows(), self.nrows);
        let m = q.ncols();
        let mut out = DMatrix::zeros(m, self.ncols);
        for (i, j, a) in self.triplets() {
            for k in 0..m {
                out[(k, j)] += a * q[(i, k)];
            }
        }
        out
    }

    /// [`left_mul_transpose`](Self::left_mul_transpose) stored sparsely;
    /// only structurally nonzero columns of `A` are formed.
    pub fn left_mul_transpose_sparse(&self, q: &DMatrix<f64>) -> CsrMatrix {
        assert_eq!(q.nrows(), self.nrows);
        let m = q.ncols();
        let cols = self.nonzero_columns();
        let mut slot = vec![usize::MAX; self.ncols];
        for (s, &c) in cols.iter().enumerate() {
            slot[c] = s;
        }
        let mut acc = DMatrix::zeros(m, cols.len());
        for (i, j, a) in self.triplets() {
            let s = slot[j];
            for k in 0..m {
                acc[(k, s)] += a * q[(i, k)];
            }
        }
        let trip = cols.iter().enumerate().flat_map(|(s, &c)| (0..m).map(move |k| (k, c, s)));
        let trip: Vec<_> = trip.map(|(k, c, s)| (k, c, acc[(k, s)])).collect();
        CsrMatrix::from_triplets(m, self.ncols, trip).expect("in range")
    }

    /// `A X` for dense `X`.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for k in 0..x.ncols() {
            for i in 0..self.nrows {
                let (c, v) = self.row(i);
                out[(i, k)] = c.iter().zip(v).map(|(&j, &a)| a * x[(j, k)]).sum();
            }
        }
        out
    }
}

/// Square symmetric matrix in CSR form with both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparseMatrix {
    inner: CsrMatrix,
}

impl SymSparseMatrix {
    /// Builds from full (both-triangle) coordinate entries.
    ///
    /// Asymmetry is measured entrywise relative to the largest magnitude in
    /// the matrix. Up to [`SYMMETRY_REJECT_TOL`] the matrix is replaced by
    /// `(X + Xᵀ)/2`; beyond that `NotSymmetric` is returned.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let raw = CsrMatrix::from_triplets(n, n, triplets)?;
        Self::symmetrize(raw)
    }

    /// Builds from entries that are symmetric by construction, skipping the
    /// symmetry scan.
    pub(crate) fn from_symmetric_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        Ok(Self { inner: CsrMatrix::from_triplets(n, n, triplets)? })
    }

    /// Builds from one triangle; off-diagonal entries are mirrored.
    pub fn from_triangle(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut full = Vec::new();
        for (i, j, v) in triplets {
            full.push((i, j, v));
            if i != j {
                full.push((j, i, v));
            }
        }
        Self::from_triplets(n, full)
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(CpiError::DimensionMismatch("matrix is not square".into()));
        }
        Self::symmetrize(CsrMatrix::from_dense(a))
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let inner = CsrMatrix::from_triplets(d.len(), d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v)))
            .expect("in-range entries");
        Self { inner }
    }

    fn symmetrize(raw: CsrMatrix) -> Result<Self> {
        let scale = raw.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = (0usize, 0usize, 0.0f64);
        for (i, j, v) in raw.triplets() {
            if j > i {
                continue;
            }
            let dev = (v - raw.get(j, i)).abs();
            if dev > worst.2 {
                worst = (i, j, dev);
            }
        }
        // also catch upper entries whose mirror is absent
        for (i, j, v) in raw.triplets() {
            if j > i && raw.get(j, i) == 0.0 && v.abs() > worst.2 {
                worst = (i, j, v.abs());
            }
        }
        let rel = if scale > 0.0 { worst.2 / scale } else { 0.0 };
        if rel > SYMMETRY_REJECT_TOL {
            return Err(CpiError::NotSymmetric { row: worst.0, col: worst.1, deviation: worst.2 });
        }
        if rel == 0.0 {
            return Ok(Self { inner: raw });
        }
        if rel > SYMMETRY_TOL {
            log::warn!("asymmetry {rel:e} (relative) at ({},{}); symmetrizing", worst.0, worst.1);
        }
        let n = raw.nrows;
        let trip: Vec<_> = raw.triplets().flat_map(|(i, j, v)| [(i, j, 0.5 * v), (j, i, 0.5 * v)]).collect();
        Ok(Self { inner: CsrMatrix::from_triplets(n, n, trip)? })
    }

    pub fn n(&self) -> usize {
        self.inner.nrows
    }

    pub fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    pub fn as_csr(&self) -> &CsrMatrix {
        &self.inner
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        self.inner.row(i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.inner.triplets()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        self.inner.matvec(x, y)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.inner.to_dense()
    }

    /// Principal submatrix on `range` (rows and columns).
    pub fn principal(&self, range: Range<usize>) -> SymSparseMatrix {
        let off = range.start;
        let n = range.len();
        let trip: Vec<_> = range
            .clone()
            .flat_map(|i| {
                let (c, v) = self.row(i);
                c.iter()
                    .zip(v)
                    .filter(|(&j, _)| range.contains(&j))
                    .map(move |(&j, &x)| (i - off, j - off, x))
                    .collect::<Vec<_>>()
            })
            .collect();
        SymSparseMatrix { inner: CsrMatrix::from_triplets(n, n, trip).expect("in range") }
    }

    /// Off-diagonal block with the given row and column ranges.
    pub fn block(&self, rows: Range<usize>, cols: Range<usize>) -> CsrMatrix {
        let trip: Vec<_> = rows
            .clone()
            .flat_map(|i| {
                let (c, v) = self.row(i);
                c.iter()
                    .zip(v)
                    .filter(|(&j, _)| cols.contains(&j))
                    .map(|(&j, &x)| (i - rows.start, j - cols.start, x))
                    .collect::<Vec<_>>()
            })
            .collect();
        CsrMatrix::from_triplets(rows.len(), cols.len(), trip).expect("in range")
    }

    /// Reassembles a symmetric matrix from its 2x2 blocks.
    pub fn from_blocks(b11: &SymSparseMatrix, b21: &CsrMatrix, b22: &SymSparseMatrix) -> Result<Self> {
        let n1 = b11.n();
        let n2 = b22.n();
        if b21.nrows() != n2 || b21.ncols() != n1 {
            return Err(CpiError::DimensionMismatch(format!(
                "coupling block is {}x{}, expected {n2}x{n1}",
                b21.nrows(),
                b21.ncols()
            )));
        }
        let mut trip: Vec<_> = b11.triplets().collect();
        for (i, j, v) in b21.triplets() {
            trip.push((n1 + i, j, v));
            trip.push((j, n1 + i, v));
        }
        trip.extend(b22.triplets().map(|(i, j, v)| (n1 + i, n1 + j, v)));
        let inner = CsrMatrix::from_triplets(n1 + n2, n1 + n2, trip)?;
        Ok(Self { inner })
    }

    /// `alpha X + beta Y`; patterns are merged.
    pub fn lin_comb(alpha: f64, x: &SymSparseMatrix, beta: f64, y: &SymSparseMatrix) -> SymSparseMatrix {
        assert_eq!(x.n(), y.n());
        let n = x.n();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(x.nnz().max(y.nnz()));
        let mut vals = Vec::with_capacity(x.nnz().max(y.nnz()));
        row_ptr.push(0);
        for i in 0..n {
            let (cx, vx) = x.row(i);
            let (cy, vy) = y.row(i);
            let (mut p, mut q) = (0, 0);
            while p < cx.len() || q < cy.len() {
                let (j, v) = if q >= cy.len() || (p < cx.len() && cx[p] < cy[q]) {
                    p += 1;
                    (cx[p - 1], alpha * vx[p - 1])
                } else if p >= cx.len() || cy[q] < cx[p] {
                    q += 1;
                    (cy[q - 1], beta * vy[q - 1])
                } else {
                    p += 1;
                    q += 1;
                    (cx[p - 1], alpha * vx[p - 1] + beta * vy[q - 1])
                };
                // keep structural entries even if they cancel, the profile must not shrink
                col_idx.push(j);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SymSparseMatrix { inner: CsrMatrix { nrows: n, ncols: n, row_ptr, col_idx, vals } }
    }

    /// Symmetric permutation: entry `(i, j)` moves to `(perm[i], perm[j])`.
    pub fn permute(&self, perm: &[usize]) -> SymSparseMatrix {
        assert_eq!(perm.len(), self.n());
        let trip: Vec<_> = self.triplets().map(|(i, j, v)| (perm[i], perm[j], v)).collect();
        SymSparseMatrix { inner: CsrMatrix::from_triplets(self.n(), self.n(), trip).expect("in range") }
    }
}
