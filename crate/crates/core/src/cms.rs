//! Component mode synthesis on the interior/exterior split.
//!
//! The subspace is spanned by `[I; E]` with `E = −A22⁻¹ A21` (static
//! condensation of the interior) and `[0; v_k]` for the `K` lowest exterior
//! eigenvectors. `A` becomes block diagonal on it.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::cpi::{back_map, solve_below, CpiOptions, SpectralResult};
use crate::eigen::{dense_geneig, lanczos, EigenPairSet, SparsePencil, Target};
use crate::error::{CpiError, Result};
use crate::pencil::{congruence, BlockMatrix, BlockPencil, Diag22, OffDiag};
use crate::skyline::{Definiteness, SkylineLdl};
use crate::sparse::{CsrMatrix, SymSparseMatrix};

/// Exterior pencils up to this size are diagonalized densely when many
/// modes are requested.
const DENSE_EXTERIOR_LIMIT: usize = 2000;

#[derive(Debug, Clone)]
pub struct CmsBasis {
    /// Interior unknowns with a nonzero column in `A21`.
    pub cols: Vec<usize>,
    /// `−A22⁻¹ A21` restricted to `cols`.
    pub e: DMatrix<f64>,
    /// `M22`-orthonormal exterior eigenvectors.
    pub v: DMatrix<f64>,
    pub mu: Vec<f64>,
}

impl CmsBasis {
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    /// `x = [x1; E x1 + V y]`
    pub fn apply(&self, n1: usize, y: &[f64]) -> Vec<f64> {
        let mut x = y[..n1].to_vec();
        let x1c = nalgebra::DVector::from_iterator(self.cols.len(), self.cols.iter().map(|&c| y[c]));
        let yk = nalgebra::DVector::from_column_slice(&y[n1..]);
        let x2 = &self.e * x1c + &self.v * yk;
        x.extend(x2.iter());
        x
    }
}

fn sparse_blocks(
    pencil: &BlockPencil,
) -> Result<(&Arc<SymSparseMatrix>, &Arc<SymSparseMatrix>, &CsrMatrix, &CsrMatrix)> {
    let (a22, m22) =
        pencil.exterior().ok_or_else(|| CpiError::DimensionMismatch("exterior blocks are not sparse".into()))?;
    let (a21, m21) =
        pencil.coupling().ok_or_else(|| CpiError::DimensionMismatch("coupling blocks are not sparse".into()))?;
    Ok((a22, m22, a21, m21))
}

/// Static condensation data and the `k` lowest exterior modes.
pub fn cms_build(pencil: &BlockPencil, k: usize) -> Result<CmsBasis> {
    let (a22, m22, a21, _) = sparse_blocks(pencil)?;
    let n2 = pencil.n2();
    if k > n2 {
        return Err(CpiError::DimensionMismatch(format!("{k} modes requested from an exterior of size {n2}")));
    }
    let f = SkylineLdl::factor(a22, Definiteness::Positive)
        .map_err(|e| CpiError::FactorizationFailure(format!("exterior stiffness: {e}")))?;
    let cols = a21.nonzero_columns();
    let mut e = DMatrix::zeros(n2, cols.len());
    for (j, &c) in cols.iter().enumerate() {
        let rhs: Vec<f64> = a21.column(c).iter().map(|v| -v).collect();
        let x = f.solve_refined(a22, &rhs, 1e-12, 4)?;
        e.column_mut(j).copy_from_slice(&x);
    }
    let modes = if k == 0 {
        EigenPairSet::empty(n2)
    } else if 2 * k > n2 && n2 <= DENSE_EXTERIOR_LIMIT {
        let all = dense_geneig(&a22.to_dense(), &m22.to_dense())?;
        EigenPairSet {
            values: all.values[..k].to_vec(),
            vectors: all.vectors.columns(0, k).into_owned(),
            residuals: all.residuals[..k].to_vec(),
        }
    } else {
        let opts = crate::eigen::LanczosOptions::with_tol(1e-10);
        let mut m = lanczos(&SparsePencil { a: a22, m: m22 }, Target::Smallest(k), &opts)?;
        m.values.truncate(k);
        m.vectors = m.vectors.columns(0, k).into_owned();
        m
    };
    Ok(CmsBasis { cols, e, v: modes.vectors, mu: modes.values })
}

/// Reduced pencil `(Qᵀ A Q, Qᵀ M Q)`.
pub fn cms_reduce(pencil: &BlockPencil, basis: &CmsBasis) -> Result<BlockPencil> {
    let (a22, m22, a21, m21) = sparse_blocks(pencil)?;
    let n1 = pencil.n1();
    let a11 = &pencil.a().b11;
    let m11 = &pencil.m().b11;
    let c = &basis.cols;
    let e = &basis.e;

    // A11 + A12 E, nonzero only on cols × cols
    let a21c = DMatrix::from_fn(a21.nrows(), c.len(), |i, j| a21.get(i, c[j]));
    let da = a21c.transpose() * e;
    // M12 E + Eᵀ M21 + Eᵀ M22 E
    let m12e = transpose_mul(m21, e);
    let m22e = m22.as_csr().mul_dense(e);
    let etm22e = e.transpose() * &m22e;

    let mut ta: Vec<(usize, usize, f64)> = a11.triplets().collect();
    let mut tm: Vec<(usize, usize, f64)> = m11.triplets().collect();
    for (j, &cj) in c.iter().enumerate() {
        for (i, &ci) in c.iter().enumerate() {
            ta.push((ci, cj, 0.5 * (da[(i, j)] + da[(j, i)])));
            tm.push((ci, cj, etm22e[(i, j)]));
        }
        for r in 0..n1 {
            let v = m12e[(r, j)];
            if v != 0.0 {
                tm.push((r, cj, v));
                tm.push((cj, r, v));
            }
        }
    }
    let b11a = SymSparseMatrix::from_triplets(n1, ta)?;
    let b11m = SymSparseMatrix::from_triplets(n1, tm)?;

    let k = basis.k();
    let v = &basis.v;
    let mut mr21 = m21.left_mul_transpose(v);
    let vtm22e = v.transpose() * &m22e;
    for (j, &cj) in c.iter().enumerate() {
        for r in 0..k {
            mr21[(r, cj)] += vtm22e[(r, j)];
        }
    }
    // exact congruence rather than diag(μ), so slightly non-orthonormal
    // modes still give a true Rayleigh–Ritz pencil
    let ar22 = congruence(a22, v);
    let mr22 = congruence(m22, v);
    let a = BlockMatrix {
        b11: Arc::new(b11a),
        b21: OffDiag::Dense(Arc::new(DMatrix::zeros(k, n1))),
        b22: Diag22::Dense(Arc::new(ar22)),
    };
    let m =
        BlockMatrix { b11: Arc::new(b11m), b21: OffDiag::Dense(Arc::new(mr21)), b22: Diag22::Dense(Arc::new(mr22)) };
    BlockPencil::from_blocks(a, m)
}

/// Eigenvalues in `(0, Λ)` of the CMS-reduced pencil.
pub fn cms_solve(pencil: &BlockPencil, basis: &CmsBasis, lambda: f64, opts: &CpiOptions) -> Result<SpectralResult> {
    let reduced = cms_reduce(pencil, basis)?;
    let eig = solve_below(&reduced, lambda, opts)?;
    let n1 = pencil.n1();
    Ok(back_map(pencil, &eig, |y| basis.apply(n1, y), reduced.n(), None))
}

/// `Sᵀ X`
fn transpose_mul(s: &CsrMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(s.ncols(), x.ncols());
    for j in 0..x.ncols() {
        s.matvec_t(x.column(j).as_slice(), out.column_mut(j).as_mut_slice());
    }
    out
}
