//! Symmetric generalized eigensolvers and eigenvalue counting.

mod lanczos;
mod svd;

use std::sync::Arc;

use nalgebra::DMatrix;

pub use lanczos::{lanczos, LanczosOptions, Target};
pub use svd::{truncated_svd, LinearOperator, SvdInput, SvdMode, SvdTriplet};

use crate::dense;
use crate::error::{CpiError, FactorBlock, Result};
use crate::pencil::{block_inertia, BlockCholesky, BlockPencil, Diag22, OffDiag};
use crate::skyline::{Definiteness, SkylineLdl, SymSolve};
use crate::sparse::SymSparseMatrix;

/// Eigenpairs in ascending order with `M`-orthonormal vectors stored as
/// columns.
#[derive(Debug, Clone)]
pub struct EigenPairSet {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    /// `‖A x − λ M x‖₂ / (λ ‖x‖_M)` per pair.
    pub residuals: Vec<f64>,
}

impl EigenPairSet {
    pub fn empty(n: usize) -> Self {
        Self { values: Vec::new(), vectors: DMatrix::zeros(n, 0), residuals: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of stored eigenvalues strictly below `l`.
    pub fn count_below(&self, l: f64) -> usize {
        self.values.iter().filter(|&&v| v < l).count()
    }

    /// Keeps only pairs with eigenvalue strictly below `l`.
    pub fn truncate_below(mut self, l: f64) -> Self {
        let k = self.count_below(l);
        self.values.truncate(k);
        self.residuals.truncate(k);
        self.vectors = self.vectors.columns(0, k).into_owned();
        self
    }

    /// Keeps the first `k` pairs.
    pub fn truncate_count(mut self, k: usize) -> Self {
        let k = k.min(self.len());
        self.values.truncate(k);
        self.residuals.truncate(k);
        self.vectors = self.vectors.columns(0, k).into_owned();
        self
    }
}

/// What the eigensolvers need from a pencil.
pub trait PencilOperator: Sync {
    fn dim(&self) -> usize;
    fn apply_a(&self, x: &[f64], y: &mut [f64]);
    fn apply_m(&self, x: &[f64], y: &mut [f64]);
    /// Factorization of the positive definite `A + σ M`, `σ ≥ 0`.
    fn factor_plus(&self, sigma: f64) -> Result<Box<dyn SymSolve>>;
    /// Number of eigenvalues strictly below `l`, by Sylvester's law of
    /// inertia applied to `A − l M`.
    fn count_below(&self, l: f64) -> Result<usize>;
}

/// A plain sparse pencil without block structure.
#[derive(Debug, Clone, Copy)]
pub struct SparsePencil<'a> {
    pub a: &'a SymSparseMatrix,
    pub m: &'a SymSparseMatrix,
}

fn singular_shift(l: f64) -> impl Fn(CpiError) -> CpiError {
    move |e| match e {
        CpiError::FactorizationFailure(_) => CpiError::SingularShift { shift: l },
        other => other,
    }
}

impl PencilOperator for SparsePencil<'_> {
    fn dim(&self) -> usize {
        self.a.n()
    }

    fn apply_a(&self, x: &[f64], y: &mut [f64]) {
        self.a.matvec(x, y)
    }

    fn apply_m(&self, x: &[f64], y: &mut [f64]) {
        self.m.matvec(x, y)
    }

    fn factor_plus(&self, sigma: f64) -> Result<Box<dyn SymSolve>> {
        let f = if sigma == 0.0 {
            SkylineLdl::factor(self.a, Definiteness::Positive)?
        } else {
            SkylineLdl::factor(&SymSparseMatrix::lin_comb(1.0, self.a, sigma, self.m), Definiteness::Positive)?
        };
        Ok(Box::new(f))
    }

    fn count_below(&self, l: f64) -> Result<usize> {
        let x = SymSparseMatrix::lin_comb(1.0, self.a, -l, self.m);
        let f = SkylineLdl::factor(&x, Definiteness::Indefinite).map_err(singular_shift(l))?;
        Ok(f.inertia().negative)
    }
}

impl PencilOperator for BlockPencil {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply_a(&self, x: &[f64], y: &mut [f64]) {
        self.a().matvec(x, y)
    }

    fn apply_m(&self, x: &[f64], y: &mut [f64]) {
        self.m().matvec(x, y)
    }

    fn factor_plus(&self, sigma: f64) -> Result<Box<dyn SymSolve>> {
        if let Some((a, m)) = self.full() {
            return SparsePencil { a, m }.factor_plus(sigma);
        }
        let x = if sigma == 0.0 { self.a().clone() } else { self.a().shifted(-sigma, self.m()) };
        let x21 = match &x.b21 {
            OffDiag::Dense(d) => Arc::clone(d),
            OffDiag::Sparse(s) => Arc::new(s.to_dense()),
        };
        let x22 = match &x.b22 {
            Diag22::Dense(d) => Arc::clone(d),
            Diag22::Sparse(s) => Arc::new(s.to_dense()),
        };
        Ok(Box::new(BlockCholesky::from_blocks(&x.b11, &x21, &x22)?))
    }

    fn count_below(&self, l: f64) -> Result<usize> {
        if let Some((a, m)) = self.full() {
            return SparsePencil { a, m }.count_below(l);
        }
        let x = self.a().shifted(l, self.m());
        let inertia = block_inertia(&x).map_err(singular_shift(l))?;
        if inertia.zero > 0 {
            return Err(CpiError::SingularShift { shift: l });
        }
        Ok(inertia.negative)
    }
}

/// Retries a count with a slightly lowered threshold when `l` sits on an
/// eigenvalue. Only eigenvalues strictly below the original `l` are counted.
pub fn count_below_robust<P: PencilOperator + ?Sized>(op: &P, l: f64) -> Result<usize> {
    let mut t = l;
    for _ in 0..4 {
        match op.count_below(t) {
            Err(CpiError::SingularShift { .. }) => t -= 1e-10 * l.abs().max(f64::MIN_POSITIVE),
            other => return other,
        }
    }
    op.count_below(t)
}

/// Exact count of eigenvalues of the pencil `(A, M)` below `l`.
pub fn count_below(a: &SymSparseMatrix, m: &SymSparseMatrix, l: f64) -> Result<usize> {
    SparsePencil { a, m }.count_below(l)
}

/// Full spectrum of a dense symmetric-definite pencil.
pub fn dense_geneig(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<EigenPairSet> {
    let (linv, c) = reduce_standard(a, m)?;
    let eig = c.symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let y = DMatrix::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    let vectors = linv.transpose() * y;
    let residuals = dense_residuals(a, m, &values, &vectors);
    Ok(EigenPairSet { values, vectors, residuals })
}

/// Eigenvalues only, ascending.
pub fn dense_eigenvalues(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (_, c) = reduce_standard(a, m)?;
    let mut v: Vec<f64> = c.symmetric_eigenvalues().iter().cloned().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `L⁻¹` and `L⁻¹ A L⁻ᵀ` for `M = L Lᵀ`.
fn reduce_standard(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if a.shape() != m.shape() || a.nrows() != a.ncols() {
        return Err(CpiError::DimensionMismatch("dense pencil blocks differ in shape".into()));
    }
    let r = dense::cholesky_upper(m).map_err(|(pivot, value)| CpiError::NotPositiveDefinite {
        block: FactorBlock::Whole,
        pivot,
        value,
    })?;
    let n = a.nrows();
    let l = r.transpose();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| CpiError::FactorizationFailure("singular mass factor".into()))?;
    let c = dense::symmetrize(&(&linv * a * linv.transpose()));
    Ok((linv, c))
}

fn dense_residuals(a: &DMatrix<f64>, m: &DMatrix<f64>, values: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
    let ax = a * x;
    let mx = m * x;
    values
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let r = ax.column(k) - mx.column(k) * l;
            let mnorm = x.column(k).dot(&mx.column(k)).sqrt();
            r.norm() / (l.abs().max(f64::MIN_POSITIVE) * mnorm)
        })
        .collect()
}

/// `‖A x − λ M x‖₂ / (λ ‖x‖_M)` evaluated through a pencil operator.
pub fn relative_residual<P: PencilOperator + ?Sized>(op: &P, lambda: f64, x: &[f64]) -> f64 {
    let n = x.len();
    let mut ax = vec![0.0; n];
    let mut mx = vec![0.0; n];
    op.apply_a(x, &mut ax);
    op.apply_m(x, &mut mx);
    let r: f64 = ax.iter().zip(&mx).map(|(a, m)| (a - lambda * m).powi(2)).sum::<f64>().sqrt();
    let mnorm = x.iter().zip(&mx).map(|(a, b)| a * b).sum::<f64>().sqrt();
    r / (lambda.abs().max(f64::MIN_POSITIVE) * mnorm)
}

/// Eigenpairs of the exterior pencil `(A22, M22)` with `μ < Λ̃`.
pub fn exterior_eigs(pencil: &BlockPencil, lambda_tilde: f64, opts: &LanczosOptions) -> Result<EigenPairSet> {
    if !(lambda_tilde > 0.0) {
        return Err(CpiError::DomainError(format!("exterior threshold {lambda_tilde} must be positive")));
    }
    let (a, m) =
        pencil.exterior().ok_or_else(|| CpiError::DimensionMismatch("exterior blocks are not sparse".into()))?;
    lanczos(&SparsePencil { a, m }, Target::Below(lambda_tilde), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pencil::build_pencil;
    use crate::testutil::random_spd;
    use nalgebra::DVector;

    #[test]
    fn dense_diagonal_cases() {
        let e =
            dense_geneig(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0])), &DMatrix::identity(3, 3))
                .unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        let e = dense_geneig(
            &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 8.0])),
            &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
        )
        .unwrap();
        assert!((e.values[0] - 2.0).abs() < 1e-14 && (e.values[1] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn dense_random_residuals_and_orthonormality() {
        let a = random_spd(30, 21);
        let m = random_spd(30, 22);
        let e = dense_geneig(&a, &m).unwrap();
        assert!(e.residuals.iter().all(|&r| r < 1e-10), "{:?}", e.residuals);
        let g = e.vectors.transpose() * &m * &e.vectors;
        assert!(dense::max_dev_from_identity(&g) < 1e-8);
    }

    #[test]
    fn dense_rejects_indefinite_mass() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(dense_geneig(&DMatrix::identity(2, 2), &m), Err(CpiError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn count_below_eigen_set() {
        let e = EigenPairSet { values: vec![1.0, 3.0, 7.0], vectors: DMatrix::zeros(3, 3), residuals: vec![0.0; 3] };
        assert_eq!(e.count_below(5.0), 2);
        assert_eq!(e.count_below(0.5), 0);
    }

    #[test]
    fn inertia_count_matches_dense() {
        let a = random_spd(25, 31);
        let m = random_spd(25, 32);
        let ev = dense_eigenvalues(&a, &m).unwrap();
        let (sa, sm) = (SymSparseMatrix::from_dense(&a).unwrap(), SymSparseMatrix::from_dense(&m).unwrap());
        for k in 0..ev.len() - 1 {
            let l = 0.5 * (ev[k] + ev[k + 1]);
            assert_eq!(count_below(&sa, &sm, l).unwrap(), k + 1);
        }
        let p = build_pencil(sa, sm, 10).unwrap();
        let red = crate::pencil::reduce_pencil(&p, &DMatrix::identity(15, 15)).unwrap();
        let l = 0.5 * (ev[4] + ev[5]);
        assert_eq!(red.count_below(l).unwrap(), 5);
    }

    #[test]
    fn exterior_small_cases() {
        let a = SymSparseMatrix::from_diagonal(&[3.0, 1.0, 5.0]);
        let p = build_pencil(a, SymSparseMatrix::identity(3), 1).unwrap();
        let opts = LanczosOptions::default();
        let e = exterior_eigs(&p, 2.0, &opts).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e.values[0] - 1.0).abs() < 1e-12);
        assert!((e.vectors[(0, 0)].abs() - 1.0).abs() < 1e-10);
        assert!(exterior_eigs(&p, 0.5, &opts).unwrap().is_empty());
    }
}
