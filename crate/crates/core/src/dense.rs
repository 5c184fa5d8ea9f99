//! Small dense kernels that need pivot diagnostics or a fixed operation
//! order, which the general-purpose decompositions do not expose.

use nalgebra::DMatrix;

/// Upper-triangular `R` with `Rᵀ R = S`. On breakdown returns the failing
/// pivot index and value.
pub fn cholesky_upper(s: &DMatrix<f64>) -> Result<DMatrix<f64>, (usize, f64)> {
    let n = s.nrows();
    let mut r = DMatrix::zeros(n, n);
    let tiny = 1e-14 * s.diagonal().amax();
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= r[(k, j)] * r[(k, j)];
        }
        if !(d > tiny) {
            return Err((j, d));
        }
        let rjj = d.sqrt();
        r[(j, j)] = rjj;
        for i in j + 1..n {
            let mut v = s[(j, i)];
            for k in 0..j {
                v -= r[(k, j)] * r[(k, i)];
            }
            r[(j, i)] = v / rjj;
        }
    }
    Ok(r)
}

/// `R x = b` in place for upper-triangular `R`.
pub fn solve_upper(r: &DMatrix<f64>, b: &mut [f64]) {
    let n = r.nrows();
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= r[(i, k)] * b[k];
        }
        b[i] = v / r[(i, i)];
    }
}

/// `Rᵀ x = b` in place for upper-triangular `R`.
pub fn solve_upper_t(r: &DMatrix<f64>, b: &mut [f64]) {
    let n = r.nrows();
    for i in 0..n {
        let col = r.column(i);
        let mut v = b[i];
        for k in 0..i {
            v -= col[k] * b[k];
        }
        b[i] = v / col[i];
    }
}

pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Largest entrywise deviation from the identity.
pub fn max_dev_from_identity(x: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            let e = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((x[(i, j)] - e).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_spd;

    #[test]
    fn cholesky_matches_nalgebra() {
        let s = random_spd(15, 11);
        let r = cholesky_upper(&s).unwrap();
        let l = s.clone().cholesky().unwrap().l();
        assert!((r - l.transpose()).norm() < 1e-12);
    }

    #[test]
    fn triangular_solves() {
        let s = random_spd(8, 12);
        let r = cholesky_upper(&s).unwrap();
        let b: Vec<f64> = (0..8).map(|i| i as f64 - 3.0).collect();
        let mut x = b.clone();
        solve_upper_t(&r, &mut x);
        solve_upper(&r, &mut x);
        let back = &s * nalgebra::DVector::from_vec(x);
        assert!(back.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-10));
    }

    #[test]
    fn indefinite_reports_pivot() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(cholesky_upper(&s).unwrap_err().0, 1);
    }
}
