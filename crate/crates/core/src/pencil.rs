//! Block-structured symmetric pencils `(A, M)` with the interior/exterior
//! splitting, reduction onto an exterior basis, and the factorizations used
//! by the eigensolvers.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dense;
use crate::error::{CpiError, FactorBlock, Result};
use crate::skyline::{Definiteness, SkylineLdl, SymSolve};
use crate::sparse::{CsrMatrix, SymSparseMatrix};

/// The `21` block of a split matrix, stored with the exterior index first.
#[derive(Debug, Clone)]
pub enum OffDiag {
    Sparse(Arc<CsrMatrix>),
    Dense(Arc<DMatrix<f64>>),
}

impl OffDiag {
    pub fn nrows(&self) -> usize {
        match self {
            OffDiag::Sparse(s) => s.nrows(),
            OffDiag::Dense(d) => d.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            OffDiag::Sparse(s) => s.ncols(),
            OffDiag::Dense(d) => d.ncols(),
        }
    }

    /// `y2 += X21 x1`
    pub fn mul_add(&self, x1: &[f64], y2: &mut [f64]) {
        match self {
            OffDiag::Sparse(s) => {
                for (i, yi) in y2.iter_mut().enumerate() {
                    let (c, v) = s.row(i);
                    *yi += c.iter().zip(v).map(|(&j, &a)| a * x1[j]).sum::<f64>();
                }
            }
            OffDiag::Dense(d) => {
                for j in 0..d.ncols() {
                    let xj = x1[j];
                    if xj != 0.0 {
                        for (yi, a) in y2.iter_mut().zip(d.column(j).iter()) {
                            *yi += a * xj;
                        }
                    }
                }
            }
        }
    }

    /// `y1 += X21ᵀ x2`
    pub fn mul_t_add(&self, x2: &[f64], y1: &mut [f64]) {
        match self {
            OffDiag::Sparse(s) => {
                for (i, &xi) in x2.iter().enumerate() {
                    let (c, v) = s.row(i);
                    for (&j, &a) in c.iter().zip(v) {
                        y1[j] += a * xi;
                    }
                }
            }
            OffDiag::Dense(d) => {
                for (j, yj) in y1.iter_mut().enumerate() {
                    *yj += d.column(j).iter().zip(x2).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            OffDiag::Sparse(s) => s.to_dense(),
            OffDiag::Dense(d) => (**d).clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            OffDiag::Sparse(s) => s.is_zero(),
            OffDiag::Dense(d) => d.iter().all(|&v| v == 0.0),
        }
    }
}

/// The `22` block of a split matrix.
#[derive(Debug, Clone)]
pub enum Diag22 {
    Sparse(Arc<SymSparseMatrix>),
    Dense(Arc<DMatrix<f64>>),
}

impl Diag22 {
    pub fn n(&self) -> usize {
        match self {
            Diag22::Sparse(s) => s.n(),
            Diag22::Dense(d) => d.nrows(),
        }
    }

    pub fn matvec_add(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Diag22::Sparse(s) => {
                for (i, yi) in y.iter_mut().enumerate() {
                    let (c, v) = s.row(i);
                    *yi += c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum::<f64>();
                }
            }
            Diag22::Dense(d) => {
                for (j, &xj) in x.iter().enumerate() {
                    for (yi, a) in y.iter_mut().zip(d.column(j).iter()) {
                        *yi += a * xj;
                    }
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Diag22::Sparse(s) => s.to_dense(),
            Diag22::Dense(d) => (**d).clone(),
        }
    }
}

/// One matrix of a pencil, split after `n1` rows and columns.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    pub b11: Arc<SymSparseMatrix>,
    pub b21: OffDiag,
    pub b22: Diag22,
}

impl BlockMatrix {
    pub fn from_sparse(x: &SymSparseMatrix, n1: usize) -> Self {
        let n = x.n();
        Self {
            b11: Arc::new(x.principal(0..n1)),
            b21: OffDiag::Sparse(Arc::new(x.block(n1..n, 0..n1))),
            b22: Diag22::Sparse(Arc::new(x.principal(n1..n))),
        }
    }

    pub fn n1(&self) -> usize {
        self.b11.n()
    }

    pub fn n2(&self) -> usize {
        self.b22.n()
    }

    pub fn n(&self) -> usize {
        self.n1() + self.n2()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n1 = self.n1();
        let (x1, x2) = x.split_at(n1);
        let (y1, y2) = y.split_at_mut(n1);
        self.b11.matvec(x1, y1);
        y2.iter_mut().for_each(|v| *v = 0.0);
        self.b21.mul_add(x1, y2);
        self.b21.mul_t_add(x2, y1);
        self.b22.matvec_add(x2, y2);
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n1, n) = (self.n1(), self.n());
        let mut d = DMatrix::zeros(n, n);
        d.view_mut((0, 0), (n1, n1)).copy_from(&self.b11.to_dense());
        let c = self.b21.to_dense();
        d.view_mut((n1, 0), (n - n1, n1)).copy_from(&c);
        d.view_mut((0, n1), (n1, n - n1)).copy_from(&c.transpose());
        d.view_mut((n1, n1), (n - n1, n - n1)).copy_from(&self.b22.to_dense());
        d
    }

    /// Assembled sparse form, available when no block is dense.
    pub fn assemble_sparse(&self) -> Option<SymSparseMatrix> {
        match (&self.b21, &self.b22) {
            (OffDiag::Sparse(c), Diag22::Sparse(e)) => SymSparseMatrix::from_blocks(&self.b11, c, e).ok(),
            _ => None,
        }
    }

    /// `self - s * other`, blockwise.
    pub fn shifted(&self, s: f64, other: &BlockMatrix) -> BlockMatrix {
        let b11 = Arc::new(SymSparseMatrix::lin_comb(1.0, &self.b11, -s, &other.b11));
        let b21 = match (&self.b21, &other.b21) {
            (OffDiag::Sparse(a), OffDiag::Sparse(b)) => {
                let trip: Vec<_> = a.triplets().chain(b.triplets().map(|(i, j, v)| (i, j, -s * v))).collect();
                OffDiag::Sparse(Arc::new(
                    CsrMatrix::from_triplets(a.nrows(), a.ncols(), trip).expect("conforming blocks"),
                ))
            }
            (a, b) => OffDiag::Dense(Arc::new(a.to_dense() - b.to_dense() * s)),
        };
        let b22 = match (&self.b22, &other.b22) {
            (Diag22::Sparse(a), Diag22::Sparse(b)) => {
                Diag22::Sparse(Arc::new(SymSparseMatrix::lin_comb(1.0, a, -s, b)))
            }
            (a, b) => Diag22::Dense(Arc::new(a.to_dense() - b.to_dense() * s)),
        };
        BlockMatrix { b11, b21, b22 }
    }
}

/// A symmetric positive definite pencil with the interior/exterior split.
#[derive(Debug, Clone)]
pub struct BlockPencil {
    a: BlockMatrix,
    m: BlockMatrix,
    full: Option<(Arc<SymSparseMatrix>, Arc<SymSparseMatrix>)>,
}

/// Validates `(A, M)` and splits it after `n1` unknowns.
pub fn build_pencil(a: SymSparseMatrix, m: SymSparseMatrix, n1: usize) -> Result<BlockPencil> {
    if a.n() != m.n() {
        return Err(CpiError::DimensionMismatch(format!("A is {0}x{0}, M is {1}x{1}", a.n(), m.n())));
    }
    if n1 == 0 || n1 >= a.n() {
        return Err(CpiError::DimensionMismatch(format!("split index {n1} not in 1..{}", a.n())));
    }
    SkylineLdl::factor(&a, Definiteness::Positive)?;
    SkylineLdl::factor(&m, Definiteness::Positive)?;
    Ok(BlockPencil {
        a: BlockMatrix::from_sparse(&a, n1),
        m: BlockMatrix::from_sparse(&m, n1),
        full: Some((Arc::new(a), Arc::new(m))),
    })
}

impl BlockPencil {
    /// Assembles a pencil from blocks whose definiteness is already known.
    pub fn from_blocks(a: BlockMatrix, m: BlockMatrix) -> Result<Self> {
        let (n1, n2) = (a.n1(), a.n2());
        let ok = m.n1() == n1 && m.n2() == n2 && [&a.b21, &m.b21].iter().all(|c| c.nrows() == n2 && c.ncols() == n1);
        if !ok {
            return Err(CpiError::DimensionMismatch(format!("blocks do not conform to a {n1}+{n2} split")));
        }
        Ok(Self { a, m, full: None })
    }

    pub fn a(&self) -> &BlockMatrix {
        &self.a
    }

    pub fn m(&self) -> &BlockMatrix {
        &self.m
    }

    pub fn n1(&self) -> usize {
        self.a.n1()
    }

    pub fn n2(&self) -> usize {
        self.a.n2()
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    /// Assembled sparse `A` and `M`, when the pencil is sparse throughout.
    pub fn full(&self) -> Option<(&SymSparseMatrix, &SymSparseMatrix)> {
        self.full.as_ref().map(|(a, m)| (&**a, &**m))
    }

    /// `(A22, M22)` as sparse matrices.
    pub fn exterior(&self) -> Option<(&Arc<SymSparseMatrix>, &Arc<SymSparseMatrix>)> {
        match (&self.a.b22, &self.m.b22) {
            (Diag22::Sparse(a), Diag22::Sparse(m)) => Some((a, m)),
            _ => None,
        }
    }

    /// `(A21, M21)` as sparse matrices.
    pub fn coupling(&self) -> Option<(&Arc<CsrMatrix>, &Arc<CsrMatrix>)> {
        match (&self.a.b21, &self.m.b21) {
            (OffDiag::Sparse(a), OffDiag::Sparse(m)) => Some((a, m)),
            _ => None,
        }
    }
}

/// A block pencil assembled into single sparse matrices under a symmetric
/// permutation: unknown `i` of the block pencil is row `perm[i]` here.
#[derive(Debug, Clone)]
pub struct AssembledPencil {
    pub a: SymSparseMatrix,
    pub m: SymSparseMatrix,
    pub perm: Vec<usize>,
}

impl AssembledPencil {
    /// Row `i` of the result is row `perm[i]` of `x`.
    pub fn unpermute_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(self.perm[i], j)])
    }
}

impl BlockMatrix {
    fn triplets_permuted(&self, perm: &[usize]) -> Vec<(usize, usize, f64)> {
        let n1 = self.n1();
        let mut t: Vec<_> = self.b11.triplets().map(|(i, j, v)| (perm[i], perm[j], v)).collect();
        let mut push_border = |i: usize, j: usize, v: f64| {
            if v != 0.0 {
                t.push((perm[n1 + i], perm[j], v));
                t.push((perm[j], perm[n1 + i], v));
            }
        };
        match &self.b21 {
            OffDiag::Sparse(c) => c.triplets().for_each(|(i, j, v)| push_border(i, j, v)),
            OffDiag::Dense(d) => {
                for j in 0..d.ncols() {
                    for i in 0..d.nrows() {
                        push_border(i, j, d[(i, j)]);
                    }
                }
            }
        }
        match &self.b22 {
            Diag22::Sparse(e) => t.extend(e.triplets().map(|(i, j, v)| (perm[n1 + i], perm[n1 + j], v))),
            Diag22::Dense(d) => {
                for j in 0..d.ncols() {
                    for i in 0..d.nrows() {
                        if d[(i, j)] != 0.0 {
                            t.push((perm[n1 + i], perm[n1 + j], d[(i, j)]));
                        }
                    }
                }
            }
        }
        t
    }
}

impl BlockPencil {
    /// Interior unknowns with a nonzero entry in `A21` or `M21`.
    pub fn coupled_interior(&self) -> Vec<usize> {
        let mut hit = vec![false; self.n1()];
        for c in [&self.a.b21, &self.m.b21] {
            match c {
                OffDiag::Sparse(s) => s.triplets().for_each(|(_, j, v)| hit[j] |= v != 0.0),
                OffDiag::Dense(d) => {
                    for (j, col) in d.column_iter().enumerate() {
                        hit[j] |= col.iter().any(|&v| v != 0.0);
                    }
                }
            }
        }
        (0..self.n1()).filter(|&j| hit[j]).collect()
    }

    /// Assembles both matrices with the interior in reverse breadth-first
    /// order from the coupled unknowns, so the border rows only reach the
    /// tail of the interior and the skyline envelope stays narrow. Interior
    /// unknowns not connected to the coupling come first in their original
    /// order; the exterior keeps its order after the interior.
    pub fn assemble_reordered(&self) -> Result<AssembledPencil> {
        let n1 = self.n1();
        let n = self.n();
        let mut level_order = Vec::with_capacity(n1);
        let mut seen = vec![false; n1];
        for j in self.coupled_interior() {
            seen[j] = true;
            level_order.push(j);
        }
        let mut head = 0;
        while head < level_order.len() {
            let v = level_order[head];
            head += 1;
            for b in [&self.a.b11, &self.m.b11] {
                for &w in b.row(v).0 {
                    if !seen[w] {
                        seen[w] = true;
                        level_order.push(w);
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n1).filter(|&v| !seen[v]).collect();
        order.extend(level_order.iter().rev());
        let mut perm = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            perm[old] = new;
        }
        for (i, p) in perm.iter_mut().enumerate().skip(n1) {
            *p = i;
        }
        let a = SymSparseMatrix::from_symmetric_triplets(n, self.a.triplets_permuted(&perm))?;
        let m = SymSparseMatrix::from_symmetric_triplets(n, self.m.triplets_permuted(&perm))?;
        Ok(AssembledPencil { a, m, perm })
    }
}

/// Numerical rank of `[M21 A21]`, counted over singular values above
/// `rel_tol * σ_max`. Only nonzero rows and columns enter the SVD.
pub fn interface_rank(pencil: &BlockPencil, rel_tol: f64) -> usize {
    let blocks = [pencil.m().b21.to_dense_columns(), pencil.a().b21.to_dense_columns()];
    let cols: Vec<&Vec<f64>> = blocks.iter().flatten().collect();
    if cols.is_empty() {
        return 0;
    }
    let n2 = pencil.n2();
    let rows: Vec<usize> = (0..n2).filter(|&i| cols.iter().any(|c| c[i] != 0.0)).collect();
    let mat = DMatrix::from_fn(rows.len(), cols.len(), |i, j| cols[j][rows[i]]);
    let sv = mat.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

impl OffDiag {
    /// Nonzero columns of the block as dense vectors, in column order.
    pub fn to_dense_columns(&self) -> Vec<Vec<f64>> {
        match self {
            OffDiag::Sparse(s) => {
                let t = s.transpose();
                (0..t.nrows())
                    .filter(|&j| !t.row(j).0.is_empty())
                    .map(|j| {
                        let mut col = vec![0.0; s.nrows()];
                        let (c, v) = t.row(j);
                        for (&i, &x) in c.iter().zip(v) {
                            col[i] = x;
                        }
                        col
                    })
                    .collect()
            }
            OffDiag::Dense(d) => {
                d.column_iter().filter(|c| c.iter().any(|&v| v != 0.0)).map(|c| c.iter().cloned().collect()).collect()
            }
        }
    }
}

/// Exterior blocks reduced onto a fixed basis `Q22`. The products
/// `Q22ᵀ A22 Q22` and `Q22ᵀ M22 Q22` are formed once and shared by every
/// pencil produced from the same reduction.
#[derive(Debug, Clone)]
pub struct ExteriorReduction {
    pub q22: Arc<DMatrix<f64>>,
    pub a22: Arc<DMatrix<f64>>,
    pub m22: Arc<DMatrix<f64>>,
}

impl ExteriorReduction {
    pub fn new(a22: &SymSparseMatrix, m22: &SymSparseMatrix, q22: Arc<DMatrix<f64>>) -> Result<Self> {
        if q22.nrows() != a22.n() || a22.n() != m22.n() {
            return Err(CpiError::DimensionMismatch(format!(
                "basis has {} rows, exterior block is {}",
                q22.nrows(),
                a22.n()
            )));
        }
        let ar = congruence(a22, &q22);
        if dense::cholesky_upper(&ar).is_err() {
            return Err(CpiError::RankDeficientBasis);
        }
        let mr = congruence(m22, &q22);
        Ok(Self { q22, a22: Arc::new(ar), m22: Arc::new(mr) })
    }

    pub fn dim(&self) -> usize {
        self.q22.ncols()
    }

    /// Reduced pencil for the given interior and coupling blocks.
    pub fn apply(
        &self,
        a11: Arc<SymSparseMatrix>,
        m11: Arc<SymSparseMatrix>,
        a21: &CsrMatrix,
        m21: &CsrMatrix,
    ) -> Result<BlockPencil> {
        let n2 = self.q22.nrows();
        for (name, c, b11) in [("A21", a21, &a11), ("M21", m21, &m11)] {
            if c.nrows() != n2 || c.ncols() != b11.n() {
                return Err(CpiError::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {n2}x{}",
                    c.nrows(),
                    c.ncols(),
                    b11.n()
                )));
            }
        }
        let a = BlockMatrix {
            b11: a11,
            b21: OffDiag::Sparse(Arc::new(a21.left_mul_transpose_sparse(&self.q22))),
            b22: Diag22::Dense(Arc::clone(&self.a22)),
        };
        let m = BlockMatrix {
            b11: m11,
            b21: OffDiag::Sparse(Arc::new(m21.left_mul_transpose_sparse(&self.q22))),
            b22: Diag22::Dense(Arc::clone(&self.m22)),
        };
        BlockPencil::from_blocks(a, m)
    }
}

/// `Qᵀ X Q`, symmetrized.
pub fn congruence(x: &SymSparseMatrix, q: &DMatrix<f64>) -> DMatrix<f64> {
    let xq = x.as_csr().mul_dense(q);
    let r = q.transpose() * xq;
    dense::symmetrize(&r)
}

/// The pencil restricted to `[I 0; 0 Q22]`.
pub fn reduce_pencil(pencil: &BlockPencil, q22: &DMatrix<f64>) -> Result<BlockPencil> {
    let (a22, m22) =
        pencil.exterior().ok_or_else(|| CpiError::DimensionMismatch("exterior blocks already reduced".into()))?;
    let (a21, m21) =
        pencil.coupling().ok_or_else(|| CpiError::DimensionMismatch("coupling blocks already reduced".into()))?;
    let red = ExteriorReduction::new(a22, m22, Arc::new(q22.clone()))?;
    red.apply(Arc::clone(&pencil.a().b11), Arc::clone(&pencil.m().b11), a21, m21)
}

/// Block Cholesky factor `R = [R11 C; 0 R22]` with `C = R11⁻ᵀ X12` and
/// `R22ᵀ R22 = X22 − Cᵀ C`.
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    r11: SkylineLdl,
    coupling: DMatrix<f64>,
    r22: DMatrix<f64>,
}

/// Block Cholesky of a sparse matrix split after `n1`.
pub fn block_cholesky(x: &SymSparseMatrix, n1: usize) -> Result<BlockCholesky> {
    let n = x.n();
    if n1 > n {
        return Err(CpiError::DimensionMismatch(format!("split {n1} exceeds {n}")));
    }
    let x21 = x.block(n1..n, 0..n1).to_dense();
    let x22 = x.principal(n1..n).to_dense();
    BlockCholesky::from_blocks(&x.principal(0..n1), &x21, &x22)
}

impl BlockCholesky {
    /// `x21` is stored exterior-first (`m × n1`).
    pub fn from_blocks(x11: &SymSparseMatrix, x21: &DMatrix<f64>, x22: &DMatrix<f64>) -> Result<Self> {
        let r11 = SkylineLdl::factor(x11, Definiteness::Positive).map_err(|e| match e {
            CpiError::NotPositiveDefinite { pivot, value, .. } => {
                CpiError::NotPositiveDefinite { block: FactorBlock::Leading, pivot, value }
            }
            other => other,
        })?;
        let mut coupling = x21.transpose();
        for mut col in coupling.column_iter_mut() {
            r11.solve_rt(col.as_mut_slice());
        }
        let schur = dense::symmetrize(&(x22 - coupling.transpose() * &coupling));
        let r22 = dense::cholesky_upper(&schur).map_err(|(pivot, value)| CpiError::NotPositiveDefinite {
            block: FactorBlock::Schur,
            pivot,
            value,
        })?;
        Ok(Self { r11, coupling, r22 })
    }

    pub fn n1(&self) -> usize {
        self.coupling.nrows()
    }

    pub fn r11(&self) -> &SkylineLdl {
        &self.r11
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn r22(&self) -> &DMatrix<f64> {
        &self.r22
    }

    /// The assembled upper-triangular factor.
    pub fn r_dense(&self) -> DMatrix<f64> {
        let n1 = self.n1();
        let m = self.r22.nrows();
        let mut r = DMatrix::zeros(n1 + m, n1 + m);
        r.view_mut((0, 0), (n1, n1)).copy_from(&self.r11.r_dense());
        r.view_mut((0, n1), (n1, m)).copy_from(&self.coupling);
        r.view_mut((n1, n1), (m, m)).copy_from(&self.r22);
        r
    }
}

impl SymSolve for BlockCholesky {
    fn dim(&self) -> usize {
        self.n1() + self.r22.nrows()
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let n1 = self.n1();
        let (b1, b2) = b.split_at_mut(n1);
        self.r11.solve_rt(b1);
        for (k, bk) in b2.iter_mut().enumerate() {
            *bk -= self.coupling.column(k).iter().zip(b1.iter()).map(|(c, y)| c * y).sum::<f64>();
        }
        dense::solve_upper_t(&self.r22, b2);
        dense::solve_upper(&self.r22, b2);
        for (k, &xk) in b2.iter().enumerate() {
            for (yi, c) in b1.iter_mut().zip(self.coupling.column(k).iter()) {
                *yi -= c * xk;
            }
        }
        self.r11.solve_r(b1);
    }
}

/// Inertia of a split symmetric matrix from an indefinite factorization of
/// the leading block and the spectrum of the Schur complement.
pub fn block_inertia(x: &BlockMatrix) -> Result<crate::skyline::Inertia> {
    let f = SkylineLdl::factor(&x.b11, Definiteness::Indefinite)?;
    let x21 = x.b21.to_dense();
    let m = x21.nrows();
    let mut w = x21.transpose();
    for mut col in w.column_iter_mut() {
        f.solve_in_place(col.as_mut_slice());
    }
    let schur = dense::symmetrize(&(x.b22.to_dense() - &x21 * w));
    let scale = schur.amax().max(x.b11.max_abs());
    let mut out = f.inertia();
    for ev in schur.symmetric_eigenvalues().iter() {
        if ev.abs() <= 1e-14 * scale * m as f64 {
            out.zero += 1;
        } else if *ev < 0.0 {
            out.negative += 1;
        } else {
            out.positive += 1;
        }
    }
    Ok(out)
}
