//! Leading singular triplets, either from a dense SVD or by block subspace
//! iteration on `B Bᵀ` using only products with `B` and `Bᵀ`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CpiError, Result};

/// A matrix known only through its action.
pub trait LinearOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `y = B x`
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `x = Bᵀ y`
    fn apply_t(&self, y: &[f64], x: &mut [f64]);
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            for (yi, b) in y.iter_mut().zip(self.column(j).iter()) {
                *yi += b * xj;
            }
        }
    }

    fn apply_t(&self, y: &[f64], x: &mut [f64]) {
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = self.column(j).iter().zip(y).map(|(a, b)| a * b).sum();
        }
    }
}

pub enum SvdInput<'a> {
    Dense(&'a DMatrix<f64>),
    Operator(&'a dyn LinearOperator),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvdMode {
    Dense,
    SubspaceIteration,
}

#[derive(Debug, Clone)]
pub struct SvdTriplet {
    /// Retained singular values, non-increasing.
    pub sigma: Vec<f64>,
    /// Left vectors, one column per retained value.
    pub u: DMatrix<f64>,
    /// Right vectors, one column per retained value.
    pub w: DMatrix<f64>,
    /// Every singular value that was computed, including truncated ones.
    pub spectrum: Vec<f64>,
}

const SUBSPACE_OVERSAMPLE: usize = 10;
const SUBSPACE_MAX_ITER: usize = 200;
const SUBSPACE_RTOL: f64 = 1e-10;

/// Leading triplets with `σ ≥ sigma_cutoff`, at most `rank_bound` of them.
pub fn truncated_svd(input: SvdInput<'_>, mode: SvdMode, rank_bound: usize, sigma_cutoff: f64) -> Result<SvdTriplet> {
    match (mode, input) {
        (SvdMode::Dense, SvdInput::Dense(b)) => Ok(dense_svd(b, rank_bound, sigma_cutoff)),
        (SvdMode::Dense, SvdInput::Operator(op)) => {
            let mut b = DMatrix::zeros(op.nrows(), op.ncols());
            let mut e = vec![0.0; op.ncols()];
            for j in 0..op.ncols() {
                e[j] = 1.0;
                op.apply(&e, b.column_mut(j).as_mut_slice());
                e[j] = 0.0;
            }
            Ok(dense_svd(&b, rank_bound, sigma_cutoff))
        }
        (SvdMode::SubspaceIteration, SvdInput::Dense(b)) => subspace_svd(b, rank_bound, sigma_cutoff),
        (SvdMode::SubspaceIteration, SvdInput::Operator(op)) => subspace_svd(op, rank_bound, sigma_cutoff),
    }
}

fn dense_svd(b: &DMatrix<f64>, rank_bound: usize, cutoff: f64) -> SvdTriplet {
    let (m, n) = b.shape();
    if m == 0 || n == 0 {
        return SvdTriplet { sigma: vec![], u: DMatrix::zeros(m, 0), w: DMatrix::zeros(n, 0), spectrum: vec![] };
    }
    let svd = b.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let spectrum: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let keep = spectrum.iter().take(rank_bound).take_while(|&&s| s >= cutoff).count();
    let uk = DMatrix::from_fn(m, keep, |r, k| u[(r, order[k])]);
    let wk = DMatrix::from_fn(n, keep, |r, k| vt[(order[k], r)]);
    SvdTriplet { sigma: spectrum[..keep].to_vec(), u: uk, w: wk, spectrum }
}

fn subspace_svd<B: LinearOperator + ?Sized>(op: &B, rank_bound: usize, cutoff: f64) -> Result<SvdTriplet> {
    let (m, n) = (op.nrows(), op.ncols());
    let rank_bound = rank_bound.min(m).min(n);
    if rank_bound == 0 {
        return Ok(SvdTriplet { sigma: vec![], u: DMatrix::zeros(m, 0), w: DMatrix::zeros(n, 0), spectrum: vec![] });
    }
    let b = (rank_bound + SUBSPACE_OVERSAMPLE).min(m).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5bd1);
    let mut y = DMatrix::from_fn(m, b, |_, _| rng.random::<f64>() - 0.5);
    let mut prev: Vec<f64> = Vec::new();
    for it in 0..SUBSPACE_MAX_ITER {
        let q = y.clone().qr().q();
        // T = Bᵀ Q, then Qᵀ B = Tᵀ = U_b Σ Wᵀ
        let mut t = DMatrix::zeros(n, b);
        for k in 0..b {
            op.apply_t(q.column(k).as_slice(), t.column_mut(k).as_mut_slice());
        }
        let small = t.transpose().svd(true, true);
        let ub = small.u.expect("requested");
        let wt = small.v_t.expect("requested");
        let mut order: Vec<usize> = (0..small.singular_values.len()).collect();
        order.sort_by(|&i, &j| small.singular_values[j].total_cmp(&small.singular_values[i]));
        let sig: Vec<f64> = order.iter().map(|&i| small.singular_values[i]).collect();

        let floor = cutoff.max(1e-12 * sig[0]);
        let watch = sig.iter().take(rank_bound).take_while(|&&s| s >= floor).count();
        let converged = !prev.is_empty() && (0..watch).all(|i| (sig[i] - prev[i]).abs() <= SUBSPACE_RTOL * sig[i]);
        let full_space = b >= n;
        if converged || (full_space && it > 0) {
            let keep = sig.iter().take(rank_bound).take_while(|&&s| s >= cutoff).count();
            let u = &q * DMatrix::from_fn(b, keep, |r, k| ub[(r, order[k])]);
            let w = DMatrix::from_fn(n, keep, |r, k| wt[(order[k], r)]);
            log::debug!("subspace iteration converged after {} sweeps", it + 1);
            return Ok(SvdTriplet { sigma: sig[..keep].to_vec(), u, w, spectrum: sig });
        }
        prev = sig;
        // Y = B Bᵀ Q
        for k in 0..b {
            op.apply(t.column(k).as_slice(), y.column_mut(k).as_mut_slice());
        }
    }
    Err(CpiError::ConvergenceFailure { converged: 0, requested: rank_bound, restarts: SUBSPACE_MAX_ITER })
}
