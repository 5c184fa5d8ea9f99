//! Condensed pole interpolation.
//!
//! The exterior space is spanned by the exterior eigenvectors below `Λ̃ = γΛ`
//! together with projector-deflated solves `(A22 − ξ_i M22)⁻¹ p_j` at
//! Chebyshev points `ξ_i`, where the `p_j` are the nonzero coupling columns.
//! An SVD of `R B` (`A22 = RᵀR`) orders that space by importance and the
//! leading directions become the `A22`-orthonormal basis `Q̃22`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::eigen::{
    count_below_robust, dense_geneig, exterior_eigs, lanczos, relative_residual, truncated_svd, EigenPairSet,
    LanczosOptions, LinearOperator, SparsePencil, SvdInput, SvdMode, Target,
};
use crate::error::{CpiError, Result};
use crate::pencil::{BlockPencil, ExteriorReduction};
use crate::planner;
use crate::skyline::{Definiteness, SkylineLdl, SymSolve};
use crate::sparse::SymSparseMatrix;

/// `ξ_i = (Λ/2)(1 + cos((2i − 1)π / 2N))`, `i = 1..N`, largest first.
pub fn chebyshev_points(lambda: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| 0.5 * lambda * (1.0 + ((2 * i - 1) as f64 * PI / (2 * n) as f64).cos())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisMode {
    /// Dense unless `n2 (K + N r)` exceeds [`MATRIX_FREE_THRESHOLD`].
    Auto,
    Dense,
    MatrixFree,
}

/// Entry count of `B` above which `Auto` switches to the matrix-free SVD.
pub const MATRIX_FREE_THRESHOLD: f64 = 5e7;

/// Minimum distance between interpolation points and exterior eigenvalues,
/// relative to `Λ`.
pub const COLLISION_RTOL: f64 = 1e-6;
/// How many extra points the collision guard may add.
pub const COLLISION_MAX_EXTRA: usize = 5;
/// Singular values below this fraction of `σ₁` count as numerically zero.
pub const RANK_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CpiPlan {
    pub lambda: f64,
    pub gamma: f64,
    pub n: usize,
    pub xi: Vec<f64>,
    /// Truncation tolerance; zero keeps the numerical rank.
    pub tol: f64,
    pub alpha_bound: f64,
    pub mode: BasisMode,
}

impl CpiPlan {
    pub fn new(lambda: f64, gamma: f64, n: usize, tol: f64, alpha_bound: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(CpiError::DomainError(format!("Λ = {lambda} must be positive")));
        }
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(CpiError::DomainError(format!("γ = {gamma} must exceed 1")));
        }
        if n == 0 {
            return Err(CpiError::DomainError("at least one interpolation point is needed".into()));
        }
        if !(tol >= 0.0) {
            return Err(CpiError::DomainError(format!("truncation tolerance {tol} is negative")));
        }
        if !(alpha_bound >= 1.0) {
            return Err(CpiError::DomainError(format!("alpha bound {alpha_bound} is below 1")));
        }
        Ok(Self { lambda, gamma, n, xi: chebyshev_points(lambda, n), tol, alpha_bound, mode: BasisMode::Auto })
    }

    pub fn with_mode(mut self, mode: BasisMode) -> Self {
        self.mode = mode;
        self
    }

    /// Same plan with `n` interpolation points.
    pub fn with_points(&self, n: usize) -> Self {
        Self { n, xi: chebyshev_points(self.lambda, n), ..self.clone() }
    }

    pub fn lambda_tilde(&self) -> f64 {
        self.gamma * self.lambda
    }

    /// The a-priori bound on the relative eigenvalue error with
    /// `C_M = C(λ) = 1`, plus `2 tol` when the basis was truncated.
    pub fn error_bound(&self, truncated: bool) -> f64 {
        let b = planner::theoretical_bound(self.lambda, self.gamma, self.n as u32, 1.0, 1.0).unwrap_or(f64::INFINITY);
        if truncated {
            b + 2.0 * self.tol
        } else {
            b
        }
    }
}

/// `M22`-orthogonal projection onto the exterior eigenvectors below `Λ̃`.
#[derive(Debug, Clone)]
pub struct SpectralProjector {
    values: Vec<f64>,
    v: DMatrix<f64>,
    mv: DMatrix<f64>,
}

/// Wraps the exterior eigenpairs below `Λ̃`, checking by inertia that none
/// are missing.
pub fn build_projector(
    ext: EigenPairSet,
    a22: &SymSparseMatrix,
    m22: &SymSparseMatrix,
    lambda_tilde: f64,
) -> Result<SpectralProjector> {
    let ext = ext.truncate_below(lambda_tilde);
    let expected = count_below_robust(&SparsePencil { a: a22, m: m22 }, lambda_tilde)?;
    if expected != ext.len() {
        return Err(CpiError::IncompleteSpectrum { expected, found: ext.len() });
    }
    let mv = m22.as_csr().mul_dense(&ext.vectors);
    Ok(SpectralProjector { values: ext.values, v: ext.vectors, mv })
}

impl SpectralProjector {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    /// Exterior eigenvalues `μ_k`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// `P x = V (Vᵀ M22 x)`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let c = self.mv.tr_mul(&nalgebra::DVector::from_column_slice(x));
        (&self.v * c).as_slice().to_vec()
    }

    /// `x ← (I − P) x`
    pub fn deflate(&self, x: &mut [f64]) {
        if self.k() == 0 {
            return;
        }
        let c = self.mv.tr_mul(&nalgebra::DVector::from_column_slice(x));
        for (k, ck) in c.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(self.v.column(k).iter()) {
                *xi -= ck * vi;
            }
        }
    }

    /// `y ← (I − P)ᵀ y = y − M22 V (Vᵀ y)`
    pub fn deflate_t(&self, y: &mut [f64]) {
        if self.k() == 0 {
            return;
        }
        let c = self.v.tr_mul(&nalgebra::DVector::from_column_slice(y));
        for (k, ck) in c.iter().enumerate() {
            for (yi, mi) in y.iter_mut().zip(self.mv.column(k).iter()) {
                *yi -= ck * mi;
            }
        }
    }

    /// `P` as a dense matrix, for verification.
    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.v * self.mv.transpose()
    }
}

/// Nonzero columns of `M21`, then nonzero columns of `A21`.
pub fn coupling_columns(pencil: &BlockPencil) -> Result<Vec<Vec<f64>>> {
    let mut cols = pencil.m().b21.to_dense_columns();
    cols.extend(pencil.a().b21.to_dense_columns());
    if cols.is_empty() {
        return Err(CpiError::EmptyCoupling);
    }
    if cols.len() == 2 * pencil.n1() {
        log::warn!("every interior unknown couples to the exterior (r = 2 n1 = {})", cols.len());
    }
    Ok(cols)
}

/// Moves the plan to more interpolation points until every `ξ_i` keeps a
/// distance of `COLLISION_RTOL · Λ` from the exterior eigenvalues.
pub fn guard_collisions(plan: &CpiPlan, mu: &[f64]) -> Result<CpiPlan> {
    let min_gap = COLLISION_RTOL * plan.lambda;
    let mut last = Vec::new();
    for extra in 0..=COLLISION_MAX_EXTRA {
        let p = plan.with_points(plan.n + extra);
        last =
            p.xi.iter()
                .flat_map(|&x| mu.iter().filter(move |&&m| (x - m).abs() < min_gap).map(move |&m| (x, m)))
                .collect();
        if last.is_empty() {
            if extra > 0 {
                log::info!("interpolation points moved off exterior eigenvalues: N {} -> {}", plan.n, p.n);
            }
            return Ok(p);
        }
    }
    Err(CpiError::NearSingularShift { pairs: last })
}

/// Factorizations of `A22 − ξ M22` for each interpolation point.
struct ShiftedSystems {
    systems: Vec<(SymSparseMatrix, SkylineLdl)>,
}

impl ShiftedSystems {
    fn new(a22: &SymSparseMatrix, m22: &SymSparseMatrix, xi: &[f64]) -> Result<Self> {
        let systems = xi
            .iter()
            .map(|&x| {
                let s = SymSparseMatrix::lin_comb(1.0, a22, -x, m22);
                let f = SkylineLdl::factor(&s, Definiteness::Indefinite)?;
                Ok((s, f))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { systems })
    }

    /// Best-effort refined solve used inside operator callbacks.
    fn solve(&self, i: usize, b: &[f64]) -> Vec<f64> {
        let (s, f) = &self.systems[i];
        let mut x = f.solve(b);
        let mut r = vec![0.0; b.len()];
        for _ in 0..3 {
            s.matvec(&x, &mut r);
            r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
            f.solve_in_place(&mut r);
            x.iter_mut().zip(&r).for_each(|(xi, ri)| *xi += ri);
        }
        x
    }
}

pub const SAMPLE_RTOL: f64 = 1e-10;

/// Deflated sample vectors `(I − P)(A22 − ξ_i M22)⁻¹ p_j`, ordered with the
/// point index outermost.
pub fn sample_vectors(
    a22: &SymSparseMatrix,
    m22: &SymSparseMatrix,
    projector: &SpectralProjector,
    xi: &[f64],
    p: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(xi.len() * p.len());
    for &x in xi {
        let s = SymSparseMatrix::lin_comb(1.0, a22, -x, m22);
        let f = SkylineLdl::factor(&s, Definiteness::Indefinite)?;
        for pj in p {
            let mut q = f.solve_refined(&s, pj, SAMPLE_RTOL, 6)?;
            projector.deflate(&mut q);
            out.push(q);
        }
    }
    Ok(out)
}

/// `B = [v_1 … v_K, (I − P) q_11 … (I − P) q_Nr]`
pub fn assemble_b(projector: &SpectralProjector, samples: &[Vec<f64>]) -> DMatrix<f64> {
    let n2 = projector.n();
    let k = projector.k();
    let mut b = DMatrix::zeros(n2, k + samples.len());
    b.columns_mut(0, k).copy_from(projector.vectors());
    for (j, s) in samples.iter().enumerate() {
        b.column_mut(k + j).copy_from_slice(s);
    }
    b
}

/// `R B` applied through the stored factorizations, never forming `B`.
struct SampleOperator<'a> {
    r: &'a SkylineLdl,
    projector: &'a SpectralProjector,
    shifted: ShiftedSystems,
    p: &'a [Vec<f64>],
}

impl SampleOperator<'_> {
    fn n_samples(&self) -> usize {
        self.shifted.systems.len() * self.p.len()
    }
}

impl LinearOperator for SampleOperator<'_> {
    fn nrows(&self) -> usize {
        self.projector.n()
    }

    fn ncols(&self) -> usize {
        self.projector.k() + self.n_samples()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n2 = self.projector.n();
        let k = self.projector.k();
        let r = self.p.len();
        let mut b = vec![0.0; n2];
        for (kk, &c) in x[..k].iter().enumerate() {
            for (bi, vi) in b.iter_mut().zip(self.projector.vectors().column(kk).iter()) {
                *bi += c * vi;
            }
        }
        let mut acc = vec![0.0; n2];
        for i in 0..self.shifted.systems.len() {
            let mut s = vec![0.0; n2];
            for (j, pj) in self.p.iter().enumerate() {
                let c = x[k + i * r + j];
                s.iter_mut().zip(pj).for_each(|(si, pv)| *si += c * pv);
            }
            let w = self.shifted.solve(i, &s);
            acc.iter_mut().zip(&w).for_each(|(a, wi)| *a += wi);
        }
        self.projector.deflate(&mut acc);
        b.iter_mut().zip(&acc).for_each(|(bi, a)| *bi += a);
        y.copy_from_slice(&self.r.apply_r(&b));
    }

    fn apply_t(&self, y: &[f64], x: &mut [f64]) {
        let k = self.projector.k();
        let r = self.p.len();
        let mut z = self.r.apply_rt(y);
        let vt = self.projector.vectors().tr_mul(&nalgebra::DVector::from_column_slice(&z));
        x[..k].copy_from_slice(vt.as_slice());
        self.projector.deflate_t(&mut z);
        for i in 0..self.shifted.systems.len() {
            let w = self.shifted.solve(i, &z);
            for (j, pj) in self.p.iter().enumerate() {
                x[k + i * r + j] = pj.iter().zip(&w).map(|(a, b)| a * b).sum();
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CpiOptions {
    /// Exterior eigensolve.
    pub exterior: LanczosOptions,
    /// Reduced eigensolve.
    pub reduced: LanczosOptions,
    /// Reduced pencils up to this size are solved densely.
    pub dense_limit: usize,
}

impl Default for CpiOptions {
    fn default() -> Self {
        Self { exterior: LanczosOptions::with_tol(1e-10), reduced: LanczosOptions::with_tol(1e-10), dense_limit: 300 }
    }
}

/// The full left singular basis of `R B`, kept so that several truncation
/// tolerances can be applied without repeating the solves and the SVD.
#[derive(Debug, Clone)]
pub struct SampleSpace {
    /// `R⁻¹ u_i` for every numerically nonzero `σ_i`.
    q_all: DMatrix<f64>,
    spectrum: Vec<f64>,
    k: usize,
    r: usize,
    plan: CpiPlan,
    a22: Arc<SymSparseMatrix>,
    m22: Arc<SymSparseMatrix>,
}

/// `K_c = max{i : σ_i² α² > tol}`, restricted to the numerical rank.
pub fn cutoff_index(spectrum: &[f64], alpha_bound: f64, tol: f64) -> usize {
    let Some(&s1) = spectrum.first() else { return 0 };
    spectrum.iter().take_while(|&&s| s > RANK_RTOL * s1 && s * s * alpha_bound * alpha_bound > tol).count()
}

/// Runs the exterior eigensolve, the sample solves and the SVD of `R B`.
pub fn build_sample_space(pencil: &BlockPencil, plan: &CpiPlan, opts: &CpiOptions) -> Result<SampleSpace> {
    let (a22, m22) =
        pencil.exterior().ok_or_else(|| CpiError::DimensionMismatch("exterior blocks are not sparse".into()))?;
    let ext = exterior_eigs(pencil, plan.lambda_tilde(), &opts.exterior)?;
    let projector = build_projector(ext, a22, m22, plan.lambda_tilde())?;
    let plan = guard_collisions(plan, projector.values())?;
    let p = match coupling_columns(pencil) {
        Ok(p) => p,
        Err(CpiError::EmptyCoupling) => {
            log::warn!("decoupled pencil: the basis holds exterior eigenvectors only");
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    let r_factor = SkylineLdl::factor(a22, Definiteness::Positive)?;
    let n2 = pencil.n2();
    let ncols = projector.k() + plan.n * p.len();
    let matrix_free = match plan.mode {
        BasisMode::Dense => false,
        BasisMode::MatrixFree => true,
        BasisMode::Auto => (n2 as f64) * (ncols as f64) > MATRIX_FREE_THRESHOLD,
    };
    log::info!(
        "sample space: K = {}, r = {}, N = {}, {} columns ({})",
        projector.k(),
        p.len(),
        plan.n,
        ncols,
        if matrix_free { "matrix-free" } else { "dense" }
    );
    let svd = if matrix_free {
        let op = SampleOperator {
            r: &r_factor,
            projector: &projector,
            shifted: ShiftedSystems::new(a22, m22, &plan.xi)?,
            p: &p,
        };
        // only directions that can survive the cutoff are needed
        let cutoff = (plan.tol.sqrt() / plan.alpha_bound).max(0.0);
        truncated_svd(SvdInput::Operator(&op), SvdMode::SubspaceIteration, ncols.min(n2), cutoff)?
    } else {
        let samples = sample_vectors(a22, m22, &projector, &plan.xi, &p)?;
        let b = assemble_b(&projector, &samples);
        let mut rb = DMatrix::zeros(n2, ncols);
        for j in 0..ncols {
            let col = r_factor.apply_r(b.column(j).as_slice());
            rb.column_mut(j).copy_from_slice(&col);
        }
        truncated_svd(SvdInput::Dense(&rb), SvdMode::Dense, ncols, 0.0)?
    };
    let s1 = svd.spectrum.first().copied().unwrap_or(0.0);
    let rank = svd.sigma.iter().take_while(|&&s| s > RANK_RTOL * s1).count();
    let mut q_all = svd.u.columns(0, rank).into_owned();
    for mut col in q_all.column_iter_mut() {
        r_factor.solve_r(col.as_mut_slice());
    }
    Ok(SampleSpace {
        q_all,
        spectrum: svd.spectrum,
        k: projector.k(),
        r: p.len(),
        plan,
        a22: Arc::clone(a22),
        m22: Arc::clone(m22),
    })
}

impl SampleSpace {
    /// Singular values of `R B`, non-increasing.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn plan(&self) -> &CpiPlan {
        &self.plan
    }

    /// Numerical rank of `R B`.
    pub fn rank(&self) -> usize {
        self.q_all.ncols()
    }

    pub fn k_c(&self, tol: f64, alpha_bound: f64) -> usize {
        cutoff_index(&self.spectrum, alpha_bound, tol).min(self.rank())
    }

    /// Keeps the `K_c` leading directions.
    pub fn truncate(&self, tol: f64, alpha_bound: f64) -> Result<ReducedBasis> {
        self.keep(self.k_c(tol, alpha_bound), tol, alpha_bound)
    }

    /// Keeps the `dim` leading directions (at most the rank), whatever their
    /// singular values.
    pub fn truncate_to(&self, dim: usize) -> Result<ReducedBasis> {
        let dim = dim.min(self.rank());
        let tol = match self.spectrum.get(dim) {
            Some(&s) if dim < self.rank() => s * s * self.plan.alpha_bound * self.plan.alpha_bound,
            _ => 0.0,
        };
        self.keep(dim, tol, self.plan.alpha_bound)
    }

    fn keep(&self, k_c: usize, tol: f64, alpha_bound: f64) -> Result<ReducedBasis> {
        if k_c == 0 {
            return Err(CpiError::AllTruncated {
                largest: self.spectrum.first().copied().unwrap_or(0.0),
                spectrum: self.spectrum.clone(),
            });
        }
        let q = Arc::new(self.q_all.columns(0, k_c).into_owned());
        let reduction = ExteriorReduction::new(&self.a22, &self.m22, q)?;
        let plan = CpiPlan { tol, alpha_bound, ..self.plan.clone() };
        Ok(ReducedBasis {
            reduction,
            k: self.k,
            k_c,
            r: self.r,
            sigma: self.spectrum[..k_c].to_vec(),
            spectrum: self.spectrum.clone(),
            plan,
            exterior: (Arc::clone(&self.a22), Arc::clone(&self.m22)),
        })
    }
}

/// SVD truncation of an explicit `B` against `A22 = RᵀR`.
pub fn truncate_basis(
    b: &DMatrix<f64>,
    a22: Arc<SymSparseMatrix>,
    m22: Arc<SymSparseMatrix>,
    alpha_bound: f64,
    tol: f64,
    plan: &CpiPlan,
) -> Result<ReducedBasis> {
    if b.nrows() != a22.n() {
        return Err(CpiError::DimensionMismatch(format!("B has {} rows, A22 is {}", b.nrows(), a22.n())));
    }
    let r_factor = SkylineLdl::factor(&a22, Definiteness::Positive)?;
    let mut rb = b.clone();
    for mut col in rb.column_iter_mut() {
        let c = r_factor.apply_r(col.as_slice());
        col.copy_from_slice(&c);
    }
    let svd = truncated_svd(SvdInput::Dense(&rb), SvdMode::Dense, b.ncols(), 0.0)?;
    let s1 = svd.spectrum.first().copied().unwrap_or(0.0);
    let rank = svd.sigma.iter().take_while(|&&s| s > RANK_RTOL * s1).count();
    let mut q_all = svd.u.columns(0, rank).into_owned();
    for mut col in q_all.column_iter_mut() {
        r_factor.solve_r(col.as_mut_slice());
    }
    let space = SampleSpace { q_all, spectrum: svd.spectrum, k: 0, r: 0, plan: plan.clone(), a22, m22 };
    space.truncate(tol, alpha_bound)
}

/// The exterior basis `Q̃22` with its cached reduced blocks.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    pub reduction: ExteriorReduction,
    /// Exterior eigenvalues below `Λ̃`.
    pub k: usize,
    pub k_c: usize,
    /// Number of coupling columns used as right-hand sides.
    pub r: usize,
    /// Retained singular values.
    pub sigma: Vec<f64>,
    /// Every singular value of `R B`.
    pub spectrum: Vec<f64>,
    /// Plan actually used, after the collision guard.
    pub plan: CpiPlan,
    /// `(A22, M22)` the basis was built for.
    pub exterior: (Arc<SymSparseMatrix>, Arc<SymSparseMatrix>),
}

/// Relative difference allowed between a pencil's exterior blocks and the
/// ones a basis was built for.
pub const EXTERIOR_MATCH_RTOL: f64 = 1e-12;

impl ReducedBasis {
    pub fn q22(&self) -> &DMatrix<f64> {
        &self.reduction.q22
    }

    pub fn dim(&self) -> usize {
        self.k_c
    }

    /// Whether fewer directions were kept than `R B` has.
    pub fn is_truncated(&self) -> bool {
        let s1 = self.spectrum.first().copied().unwrap_or(0.0);
        self.spectrum.iter().filter(|&&s| s > RANK_RTOL * s1).count() > self.k_c
    }

    /// `‖Q̃ᵀ A22 Q̃ − I‖_max`
    pub fn orthonormality_defect(&self) -> f64 {
        crate::dense::max_dev_from_identity(&self.reduction.a22)
    }

    /// Fails with `BasisMismatch` unless the pencil has the exterior blocks
    /// this basis was built for.
    pub fn check_exterior(&self, pencil: &BlockPencil) -> Result<()> {
        let (a22, m22) =
            pencil.exterior().ok_or_else(|| CpiError::BasisMismatch("pencil exterior is not sparse".into()))?;
        for (name, mine, theirs) in [("A22", &self.exterior.0, a22), ("M22", &self.exterior.1, m22)] {
            if Arc::ptr_eq(mine, theirs) {
                continue;
            }
            if mine.n() != theirs.n() {
                return Err(CpiError::BasisMismatch(format!("{name} is {}, basis expects {}", theirs.n(), mine.n())));
            }
            let scale = mine.max_abs().max(theirs.max_abs());
            let diff = SymSparseMatrix::lin_comb(1.0, mine, -1.0, theirs).max_abs();
            if diff > EXTERIOR_MATCH_RTOL * scale {
                return Err(CpiError::BasisMismatch(format!("{name} differs by {diff:e}")));
            }
        }
        Ok(())
    }
}

/// Exterior reduction, sample solves and truncation in one call.
pub fn build_basis(pencil: &BlockPencil, plan: &CpiPlan, opts: &CpiOptions) -> Result<ReducedBasis> {
    build_sample_space(pencil, plan, opts)?.truncate(plan.tol, plan.alpha_bound)
}

/// `[I 0; 0 Q̃22]`, applied without forming it.
#[derive(Debug, Clone)]
pub struct MethodOperator {
    n1: usize,
    q22: Arc<DMatrix<f64>>,
}

pub fn build_method_matrix(basis: &ReducedBasis, n1: usize) -> MethodOperator {
    MethodOperator { n1, q22: Arc::clone(&basis.reduction.q22) }
}

impl MethodOperator {
    /// `(n, n1 + K_c)`
    pub fn shape(&self) -> (usize, usize) {
        (self.n1 + self.q22.nrows(), self.n1 + self.q22.ncols())
    }

    /// Full-space vector from reduced coordinates.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut x = y[..self.n1].to_vec();
        let y2 = nalgebra::DVector::from_column_slice(&y[self.n1..]);
        x.extend((&*self.q22 * y2).iter());
        x
    }

    /// `Qᵀ x`
    pub fn apply_t(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x[..self.n1].to_vec();
        let x2 = nalgebra::DVector::from_column_slice(&x[self.n1..]);
        y.extend(self.q22.tr_mul(&x2).iter());
        y
    }
}

/// Reduced pencil for new interior and coupling blocks, reusing the cached
/// exterior products.
pub fn recycle_reduced_blocks(
    cache: &ReducedBasis,
    a11: Arc<SymSparseMatrix>,
    m11: Arc<SymSparseMatrix>,
    a21: &crate::sparse::CsrMatrix,
    m21: &crate::sparse::CsrMatrix,
) -> Result<BlockPencil> {
    cache.reduction.apply(a11, m11, a21, m21)
}

/// Eigenvalues in `(0, Λ)` with eigenvectors mapped back to the full space.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub values: Vec<f64>,
    /// `M`-normalized, one column per eigenvalue.
    pub vectors: DMatrix<f64>,
    /// Relative residuals against the full pencil.
    pub residuals: Vec<f64>,
    /// Dimension of the reduced problem.
    pub reduced_dim: usize,
    /// A-priori relative error bound, when one applies.
    pub bound: Option<f64>,
}

/// Eigenpairs of a (reduced) pencil below `lambda`.
pub fn solve_below(pencil: &BlockPencil, lambda: f64, opts: &CpiOptions) -> Result<EigenPairSet> {
    solve_target(pencil, Target::Below(lambda), opts)
}

/// Eigenpairs of a (reduced) pencil for any target. Small pencils are solved
/// densely; reduced pencils with dense blocks are assembled into one sparse
/// pencil first.
pub fn solve_target(pencil: &BlockPencil, target: Target, opts: &CpiOptions) -> Result<EigenPairSet> {
    if pencil.n() <= opts.dense_limit {
        let e = dense_geneig(&pencil.a().to_dense(), &pencil.m().to_dense())?;
        Ok(match target {
            Target::Below(l) => e.truncate_below(l),
            Target::Smallest(k) => e.truncate_count(k),
        })
    } else if pencil.full().is_some() {
        lanczos(pencil, target, &opts.reduced)
    } else {
        let asm = pencil.assemble_reordered()?;
        let mut e = lanczos(&SparsePencil { a: &asm.a, m: &asm.m }, target, &opts.reduced)?;
        e.vectors = asm.unpermute_rows(&e.vectors);
        Ok(e)
    }
}

/// Solves the pencil on the CPI subspace, building the basis first unless
/// one is supplied.
pub fn cpi_solve(
    pencil: &BlockPencil,
    plan: &CpiPlan,
    basis: Option<&ReducedBasis>,
    opts: &CpiOptions,
) -> Result<SpectralResult> {
    let built;
    let basis = match basis {
        Some(b) => {
            b.check_exterior(pencil)?;
            b
        }
        None => {
            built = build_basis(pencil, plan, opts)?;
            &built
        }
    };
    let (a21, m21) =
        pencil.coupling().ok_or_else(|| CpiError::DimensionMismatch("coupling blocks are not sparse".into()))?;
    let reduced = recycle_reduced_blocks(basis, Arc::clone(&pencil.a().b11), Arc::clone(&pencil.m().b11), a21, m21)?;
    let eig = solve_below(&reduced, plan.lambda, opts)?;
    let q = build_method_matrix(basis, pencil.n1());
    Ok(back_map(pencil, &eig, |y| q.apply(y), reduced.n(), Some(basis.plan.error_bound(basis.is_truncated()))))
}

/// Maps reduced eigenvectors to the full space, normalizes them in `M` and
/// measures residuals against the full pencil.
pub(crate) fn back_map(
    pencil: &BlockPencil,
    eig: &EigenPairSet,
    map: impl Fn(&[f64]) -> Vec<f64>,
    reduced_dim: usize,
    bound: Option<f64>,
) -> SpectralResult {
    use crate::eigen::PencilOperator;
    let n = pencil.n();
    let mut vectors = DMatrix::zeros(n, eig.len());
    let mut residuals = Vec::with_capacity(eig.len());
    let mut mx = vec![0.0; n];
    for (k, &lam) in eig.values.iter().enumerate() {
        let mut x = map(eig.vectors.column(k).as_slice());
        pencil.apply_m(&x, &mut mx);
        let s = crate::skyline::dot(&x, &mx).sqrt();
        x.iter_mut().for_each(|v| *v /= s);
        residuals.push(relative_residual(pencil, lam, &x));
        vectors.column_mut(k).copy_from_slice(&x);
    }
    SpectralResult { values: eig.values.clone(), vectors, residuals, reduced_dim, bound }
}
