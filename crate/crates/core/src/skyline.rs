//! Envelope (skyline) `L D Lᵀ` factorization without pivoting.
//!
//! Fill is confined to the row envelope, so the cost is governed by the
//! ordering of the unknowns. The signs of `D` give the inertia of the
//! factored matrix, which is how eigenvalue counts below a shift are
//! obtained.

use nalgebra::DMatrix;

use crate::error::{CpiError, FactorBlock, Result};
use crate::sparse::SymSparseMatrix;

/// Pivots below `PIVOT_TOL * max|a_ij|` are treated as breakdown.
pub const PIVOT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    Positive,
    Indefinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

impl std::ops::Add for Inertia {
    type Output = Inertia;
    fn add(self, o: Inertia) -> Inertia {
        Inertia { negative: self.negative + o.negative, zero: self.zero + o.zero, positive: self.positive + o.positive }
    }
}

/// Anything that can solve with a fixed symmetric matrix.
pub trait SymSolve: Send + Sync {
    fn dim(&self) -> usize;
    fn solve_in_place(&self, b: &mut [f64]);

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[derive(Debug, Clone)]
pub struct SkylineLdl {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    lower: Vec<f64>,
    d: Vec<f64>,
}

impl SkylineLdl {
    pub fn factor(a: &SymSparseMatrix, mode: Definiteness) -> Result<Self> {
        let n = a.n();
        let mut first = vec![0usize; n];
        for (i, f) in first.iter_mut().enumerate() {
            let (c, _) = a.row(i);
            *f = c.first().map_or(i, |&j| j.min(i));
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i]);
        }
        let mut lower = vec![0.0; start[n]];
        let mut d = vec![0.0; n];
        let tiny = PIVOT_TOL * a.max_abs();

        for i in 0..n {
            let fi = first[i];
            let (row_lo, row_hi) = (start[i], start[i + 1]);
            let mut diag = 0.0;
            {
                let w = &mut lower[row_lo..row_hi];
                let (c, v) = a.row(i);
                for (&j, &x) in c.iter().zip(v) {
                    if j < i {
                        w[j - fi] = x;
                    } else if j == i {
                        diag = x;
                    }
                }
            }
            // w_j = a_ij - sum_{k<j} w_k l_jk, stored in place
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                if k0 < j {
                    let (head, _) = lower.split_at(row_lo);
                    let lj = &head[start[j] + (k0 - fj)..start[j] + (j - fj)];
                    let wi = &lower[row_lo + (k0 - fi)..row_lo + (j - fi)];
                    let s: f64 = wi.iter().zip(lj).map(|(a, b)| a * b).sum();
                    lower[row_lo + (j - fi)] -= s;
                }
            }
            for j in fi..i {
                let w = lower[row_lo + (j - fi)];
                let l = w / d[j];
                diag -= w * l;
                lower[row_lo + (j - fi)] = l;
            }
            let bad = match mode {
                Definiteness::Positive => !(diag > tiny),
                Definiteness::Indefinite => !(diag.abs() > tiny),
            };
            if bad {
                return Err(match mode {
                    Definiteness::Positive => {
                        CpiError::NotPositiveDefinite { block: FactorBlock::Whole, pivot: i, value: diag }
                    }
                    Definiteness::Indefinite => {
                        CpiError::FactorizationFailure(format!("zero pivot {diag:e} at row {i}"))
                    }
                });
            }
            d[i] = diag;
        }
        Ok(Self { n, first, start, lower, d })
    }

    /// Number of stored strictly-lower entries.
    pub fn envelope_size(&self) -> usize {
        self.lower.len()
    }

    pub fn pivots(&self) -> &[f64] {
        &self.d
    }

    pub fn inertia(&self) -> Inertia {
        let mut out = Inertia::default();
        for &x in &self.d {
            if x < 0.0 {
                out.negative += 1;
            } else if x > 0.0 {
                out.positive += 1;
            } else {
                out.zero += 1;
            }
        }
        out
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.lower[self.start[i]..self.start[i + 1]]
    }

    /// `L y = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let s: f64 = self.row(i).iter().zip(&b[fi..i]).map(|(l, y)| l * y).sum();
            b[i] -= s;
        }
    }

    /// `Lᵀ x = b` in place.
    pub fn backward(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            let xi = b[i];
            let fi = self.first[i];
            for (bk, l) in b[fi..i].iter_mut().zip(self.row(i)) {
                *bk -= l * xi;
            }
        }
    }

    /// `y = R x` with `R = D^{1/2} Lᵀ` (positive pivots only).
    pub fn apply_r(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for i in 0..self.n {
            let fi = self.first[i];
            let xi = x[i];
            for (yk, l) in y[fi..i].iter_mut().zip(self.row(i)) {
                *yk += l * xi;
            }
        }
        for (yi, di) in y.iter_mut().zip(&self.d) {
            *yi *= di.sqrt();
        }
        y
    }

    /// `x = Rᵀ y`.
    pub fn apply_rt(&self, y: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = y.iter().zip(&self.d).map(|(v, d)| v * d.sqrt()).collect();
        let mut x = z.clone();
        for i in 0..self.n {
            let fi = self.first[i];
            x[i] += self.row(i).iter().zip(&z[fi..i]).map(|(l, v)| l * v).sum::<f64>();
        }
        x
    }

    /// `R⁻¹ y` in place.
    pub fn solve_r(&self, y: &mut [f64]) {
        for (yi, di) in y.iter_mut().zip(&self.d) {
            *yi /= di.sqrt();
        }
        self.backward(y);
    }

    /// `R⁻ᵀ y` in place.
    pub fn solve_rt(&self, y: &mut [f64]) {
        self.forward(y);
        for (yi, di) in y.iter_mut().zip(&self.d) {
            *yi /= di.sqrt();
        }
    }

    /// Dense upper-triangular `R = D^{1/2} Lᵀ`, for verification.
    pub fn r_dense(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let s = self.d[i].sqrt();
            r[(i, i)] = s;
        }
        for i in 0..self.n {
            let fi = self.first[i];
            for (k, &l) in (fi..i).zip(self.row(i)) {
                r[(k, i)] = l * self.d[k].sqrt();
            }
        }
        r
    }

    /// Solve followed by iterative refinement until
    /// `‖b − A x‖ ≤ rtol ‖b‖`.
    pub fn solve_refined(&self, a: &SymSparseMatrix, b: &[f64], rtol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let bnorm = norm(b);
        let mut x = self.solve(b);
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = vec![0.0; b.len()];
        for _ in 0..=max_iter {
            a.matvec(&x, &mut r);
            r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
            if norm(&r) <= rtol * bnorm {
                return Ok(x);
            }
            self.solve_in_place(&mut r);
            x.iter_mut().zip(&r).for_each(|(xi, ri)| *xi += ri);
        }
        a.matvec(&x, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let rel = norm(&r) / bnorm;
        if rel <= rtol {
            Ok(x)
        } else {
            Err(CpiError::FactorizationFailure(format!("iterative refinement stalled at relative residual {rel:e}")))
        }
    }
}

impl SymSolve for SkylineLdl {
    fn dim(&self) -> usize {
        self.n
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        self.forward(b);
        for (bi, di) in b.iter_mut().zip(&self.d) {
            *bi /= di;
        }
        self.backward(b);
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
