//! Shift-and-invert Lanczos with full reorthogonalization.
//!
//! The iteration runs on `(A + σM)⁻¹ M` in the `M` inner product. A run
//! grows one Krylov space without implicit restarts; pairs that converge are
//! locked and later runs are deflated against them. Completeness of an
//! interval is certified by an inertia count, which also catches copies of
//! repeated eigenvalues that a single Krylov space cannot see.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{count_below_robust, relative_residual, EigenPairSet, PencilOperator};
use crate::error::{CpiError, Result};
use crate::skyline::{dot, SymSolve};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// The `k` smallest eigenvalues.
    Smallest(usize),
    /// Every eigenvalue in `(0, l)`.
    Below(f64),
}

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    /// Relative residual `‖Ax − λMx‖ / (λ‖x‖_M)` required of each pair.
    pub tol: f64,
    /// Factor `A + σM`.
    pub shift: f64,
    pub max_restarts: usize,
    /// Cap on the Krylov dimension of one run; `None` picks one from the
    /// number of wanted pairs.
    pub max_basis: Option<usize>,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { tol: 1e-9, shift: 0.0, max_restarts: 10, max_basis: None, seed: 0x5eed }
    }
}

impl LanczosOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

struct Pair {
    value: f64,
    vector: Vec<f64>,
    mvector: Vec<f64>,
    residual: f64,
}

pub fn lanczos<P: PencilOperator + ?Sized>(op: &P, target: Target, opts: &LanczosOptions) -> Result<EigenPairSet> {
    let n = op.dim();
    if !(opts.shift >= 0.0) {
        return Err(CpiError::DomainError(format!("shift {} must be non-negative", opts.shift)));
    }
    let (mut limit, mut expected, want) = match target {
        Target::Below(l) => {
            if !(l > 0.0) {
                return Ok(EigenPairSet::empty(n));
            }
            let e = count_below_robust(op, l)?;
            (Some(l), Some(e), e)
        }
        Target::Smallest(k) => (None, None, k.min(n)),
    };
    if want == 0 {
        return Ok(EigenPairSet::empty(n));
    }
    let solver = op.factor_plus(opts.shift)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut locked: Vec<Pair> = Vec::new();

    for restart in 0..=opts.max_restarts {
        let found_below = |locked: &[Pair], l: Option<f64>| match l {
            Some(l) => locked.iter().filter(|p| p.value < l).count(),
            None => locked.len(),
        };
        let have = found_below(&locked, limit);
        let need = match expected {
            Some(e) => e.saturating_sub(have),
            None => want.saturating_sub(locked.len()),
        };
        if need == 0 {
            break;
        }
        let avail = n - locked.len();
        if avail == 0 {
            break;
        }
        let cap = opts.max_basis.unwrap_or((4 * need + 60).max(150)).min(avail).max(need.min(avail));
        let fresh = run(op, &*solver, opts, &locked, need, limit, cap, &mut rng)?;
        log::debug!("lanczos run {restart}: {} new pairs (need {need}, basis cap {cap})", fresh.len());
        locked.extend(fresh);
        locked.sort_by(|a, b| a.value.total_cmp(&b.value));

        if expected.is_none() && locked.len() >= want {
            // certify the `want` smallest by inertia just above the last one
            let top = locked[want - 1].value;
            let l = top + 1e-8 * top.abs().max(f64::MIN_POSITIVE);
            limit = Some(l);
            expected = Some(count_below_robust(op, l)?.max(want));
        }
        if let (Some(l), Some(e)) = (limit, expected) {
            if found_below(&locked, Some(l)) >= e {
                break;
            }
        }
    }

    let (l, e) = match (limit, expected) {
        (Some(l), Some(e)) => (l, e),
        _ => {
            return Err(CpiError::ConvergenceFailure {
                converged: locked.len(),
                requested: want,
                restarts: opts.max_restarts,
            })
        }
    };
    let mut below: Vec<Pair> = locked.into_iter().filter(|p| p.value < l).collect();
    if below.len() < e {
        return Err(CpiError::ConvergenceFailure { converged: below.len(), requested: e, restarts: opts.max_restarts });
    }
    if below.len() > e {
        log::warn!("{} converged pairs below {l} but inertia counts {e}; keeping the smallest", below.len());
        below.truncate(e);
    }
    if matches!(target, Target::Smallest(_)) {
        below.truncate(want);
    }
    let mut vectors = DMatrix::zeros(n, below.len());
    for (k, p) in below.iter().enumerate() {
        vectors.column_mut(k).copy_from_slice(&p.vector);
    }
    Ok(EigenPairSet {
        values: below.iter().map(|p| p.value).collect(),
        residuals: below.iter().map(|p| p.residual).collect(),
        vectors,
    })
}

/// `x -= Σ b (mbᵀ x)` over the given `M`-orthonormal basis, twice.
fn orthogonalize(x: &mut [f64], sets: &[(&[Vec<f64>], &[Vec<f64>])]) -> f64 {
    let mut first = 0.0;
    for pass in 0..2 {
        for (basis, mbasis) in sets {
            let coef: Vec<f64> = mbasis.iter().map(|mb| dot(mb, x)).collect();
            for (b, c) in basis.iter().zip(&coef) {
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi -= c * bi;
                }
            }
            if pass == 0 && !coef.is_empty() {
                first = *coef.last().unwrap();
            }
        }
    }
    first
}

#[allow(clippy::too_many_arguments)]
fn run<P: PencilOperator + ?Sized>(
    op: &P,
    solver: &dyn SymSolve,
    opts: &LanczosOptions,
    locked: &[Pair],
    need: usize,
    limit: Option<f64>,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Pair>> {
    let n = op.dim();
    let sigma = opts.shift;
    let lx: Vec<Vec<f64>> = locked.iter().map(|p| p.vector.clone()).collect();
    let lmx: Vec<Vec<f64>> = locked.iter().map(|p| p.mvector.clone()).collect();
    let mut v: Vec<Vec<f64>> = Vec::new();
    let mut mv: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut scratch = vec![0.0; n];

    let new_start = |v: &[Vec<f64>], mv: &[Vec<f64>], rng: &mut ChaCha8Rng, scratch: &mut Vec<f64>| {
        for _ in 0..5 {
            let mut r: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            op.apply_m(&r, scratch);
            let before = dot(&r, scratch).sqrt();
            orthogonalize(&mut r, &[(&lx, &lmx), (v, mv)]);
            op.apply_m(&r, scratch);
            let nrm = dot(&r, scratch).sqrt();
            if nrm > 1e-8 * before {
                let mr: Vec<f64> = scratch.iter().map(|x| x / nrm).collect();
                r.iter_mut().for_each(|x| *x /= nrm);
                return Some((r, mr));
            }
        }
        None
    };

    let (v0, mv0) = match new_start(&v, &mv, rng, &mut scratch) {
        Some(s) => s,
        None => return Ok(Vec::new()),
    };
    v.push(v0);
    mv.push(mv0);

    let mut next_check = (need + 10).min(cap);
    let mut theta_scale = 0.0f64;
    loop {
        let j = v.len() - 1;
        let mut w = solver.solve(&mv[j]);
        let a_j = orthogonalize(&mut w, &[(&lx, &lmx), (&v, &mv)]);
        // coefficient against v_j from the first pass is the diagonal entry
        alpha.push(a_j + dot(&mv[j], &w));
        theta_scale = theta_scale.max(alpha[j].abs());
        op.apply_m(&w, &mut scratch);
        let b = dot(&w, &scratch).max(0.0).sqrt();
        let dim = v.len();
        let exhausted = dim >= cap;
        let breakdown = b <= 1e-12 * theta_scale;

        if breakdown || exhausted || dim >= next_check {
            beta.push(if breakdown { 0.0 } else { b });
            let vnext: Vec<f64> = if breakdown { vec![0.0; n] } else { w.iter().map(|x| x / b).collect() };
            let done = check(op, opts, &v, &alpha, &beta, &vnext, sigma, need, limit, exhausted || breakdown)?;
            if let Some(pairs) = done {
                let accept = pairs.len() >= need || exhausted || (breakdown && v.len() + locked.len() >= n);
                if accept {
                    return Ok(pairs);
                }
            }
            beta.pop();
            next_check = (dim + (dim / 4).max(5)).min(cap);
        }
        if breakdown {
            match new_start(&v, &mv, rng, &mut scratch) {
                Some((r, mr)) => {
                    beta.push(0.0);
                    v.push(r);
                    mv.push(mr);
                }
                None => {
                    beta.push(0.0);
                    return Ok(check(op, opts, &v, &alpha, &beta, &vec![0.0; n], sigma, need, limit, true)?
                        .unwrap_or_default());
                }
            }
        } else {
            beta.push(b);
            let mw: Vec<f64> = scratch.iter().map(|x| x / b).collect();
            w.iter_mut().for_each(|x| *x /= b);
            v.push(w);
            mv.push(mw);
        }
    }
}

/// Rayleigh–Ritz on the tridiagonal matrix. Returns the converged pairs
/// when enough of the wanted ones have converged, or whatever converged when
/// `final_check` is set.
#[allow(clippy::too_many_arguments)]
fn check<P: PencilOperator + ?Sized>(
    op: &P,
    opts: &LanczosOptions,
    v: &[Vec<f64>],
    alpha: &[f64],
    beta: &[f64],
    vnext: &[f64],
    sigma: f64,
    need: usize,
    limit: Option<f64>,
    final_check: bool,
) -> Result<Option<Vec<Pair>>> {
    let m = alpha.len();
    let n = op.dim();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = t.symmetric_eigen();
    let b_last = beta[m - 1];
    let vn_norm = if b_last == 0.0 {
        0.0
    } else {
        let mut av = vec![0.0; n];
        let mut mvv = vec![0.0; n];
        op.apply_a(vnext, &mut av);
        op.apply_m(vnext, &mut mvv);
        av.iter().zip(&mvv).map(|(a, b)| (a + sigma * b).powi(2)).sum::<f64>().sqrt()
    };
    let mut ritz: Vec<(f64, usize, f64)> = (0..m)
        .filter(|&i| eig.eigenvalues[i] > 0.0)
        .map(|i| {
            let th = eig.eigenvalues[i];
            let lam = 1.0 / th - sigma;
            let est = (b_last * eig.eigenvectors[(m - 1, i)]).abs() * vn_norm / (th * lam.abs());
            (lam, i, est)
        })
        .collect();
    ritz.sort_by(|a, b| a.0.total_cmp(&b.0));

    // wanted: the smallest Ritz values (below `limit` if one is set)
    let wanted: Vec<&(f64, usize, f64)> = match limit {
        Some(l) => ritz.iter().filter(|r| r.0 < l).collect(),
        None => ritz.iter().take(need).collect(),
    };
    let conv_wanted = wanted.iter().take_while(|r| r.2 <= opts.tol).count();
    let enough = conv_wanted >= need && (limit.is_some() || conv_wanted >= need.min(wanted.len()));
    if !enough && !final_check {
        return Ok(None);
    }
    let mut out = Vec::new();
    for &&(lam, i, est) in &wanted {
        if est > opts.tol {
            continue;
        }
        let s = eig.eigenvectors.column(i);
        let mut x = vec![0.0; n];
        for (vk, &sk) in v.iter().zip(s.iter()) {
            for (xi, vi) in x.iter_mut().zip(vk) {
                *xi += sk * vi;
            }
        }
        let res = relative_residual(op, lam, &x);
        if res <= opts.tol {
            let mut mx = vec![0.0; n];
            op.apply_m(&x, &mut mx);
            out.push(Pair { value: lam, vector: x, mvector: mx, residual: res });
        }
    }
    if !final_check && out.len() < need {
        return Ok(None);
    }
    Ok(Some(out))
}

impl Default for Pair {
    fn default() -> Self {
        Pair { value: 0.0, vector: Vec::new(), mvector: Vec::new(), residual: 0.0 }
    }
}
