//! Closed-form error and cost analysis: the normalized tolerance, the
//! relative-error bound, the Weyl estimate of exterior eigenvalue counts,
//! optimal `(γ, N)`, the Lebesgue constant of Chebyshev nodes, `C_M` and the
//! Lagrange remainder coefficients.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::cpi::chebyshev_points;
use crate::dense;
use crate::error::{CpiError, Result};
use crate::skyline::{norm, Definiteness, SkylineLdl, SymSolve};
use crate::sparse::SymSparseMatrix;

/// `γ³ (1/(4(γ−1)))^{2N+2}`
pub fn ntol(gamma: f64, n: u32) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(ntol_real(gamma, n as f64))
}

fn ntol_real(gamma: f64, n: f64) -> f64 {
    gamma.powi(3) * (1.0 / (4.0 * (gamma - 1.0))).powf(2.0 * n + 2.0)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 1.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(CpiError::DomainError(format!("oversampling factor {gamma} must exceed 1")))
    }
}

/// `C_M C(λ) Λ (4γ)³ (1/(4(γ−1)))^{2N+2}`
pub fn theoretical_bound(lambda: f64, gamma: f64, n: u32, c_m: f64, c_lambda: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(c_m * c_lambda * lambda * (4.0 * gamma).powi(3) * (1.0 / (4.0 * (gamma - 1.0))).powi(2 * n as i32 + 2))
}

/// Volume of the unit ball in `d` dimensions.
pub fn ball_volume(d: u32) -> Result<f64> {
    match d {
        2 => Ok(PI),
        3 => Ok(4.0 * PI / 3.0),
        _ => Err(CpiError::UnsupportedDimension(d as usize)),
    }
}

/// `C(d) = (2π)^{-d} vol(B_d)`
pub fn weyl_constant(d: u32) -> Result<f64> {
    Ok(ball_volume(d)? / (2.0 * PI).powi(d as i32))
}

/// Weyl estimate `C(d) vol l^{d/2}` of the number of eigenvalues below `l`.
pub fn weyl_count(d: u32, vol: f64, l: f64) -> Result<f64> {
    let c = weyl_constant(d)?;
    if !(vol > 0.0 && l > 0.0) {
        return Err(CpiError::DomainError(format!("volume {vol} and level {l} must be positive")));
    }
    Ok(c * vol * l.powf(d as f64 / 2.0))
}

/// Volume that makes the Weyl estimate reproduce an observed count.
pub fn weyl_calibrate(d: u32, count: usize, l: f64) -> Result<f64> {
    let c = weyl_constant(d)?;
    if count == 0 || !(l > 0.0) {
        return Err(CpiError::DomainError("calibration needs a positive count and level".into()));
    }
    Ok(count as f64 / (c * l.powf(d as f64 / 2.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemProfile {
    pub d: u32,
    pub vol: f64,
    pub n_gamma: usize,
    pub lambda: f64,
    /// Exponent of the cost model, `1 < r < 3`.
    pub r: f64,
    pub eta: f64,
}

impl ProblemProfile {
    pub fn validate(&self) -> Result<()> {
        ball_volume(self.d)?;
        if !(self.vol > 0.0 && self.lambda > 0.0) {
            return Err(CpiError::DomainError("volume and Λ must be positive".into()));
        }
        if !(self.r > 1.0 && self.r < 3.0) {
            return Err(CpiError::DomainError(format!("cost exponent {} outside (1, 3)", self.r)));
        }
        Ok(())
    }
}

/// `(K̂(γΛ) + n_Γ N)^r` with the Weyl estimate for `K̂`.
pub fn cost(profile: &ProblemProfile, gamma: f64, n: u32) -> Result<f64> {
    check_gamma(gamma)?;
    let k = weyl_count(profile.d, profile.vol, gamma * profile.lambda)?;
    Ok((k + (profile.n_gamma as f64) * n as f64).powf(profile.r))
}

/// Stationarity condition of the constrained cost minimization, `N(γ)`.
pub fn optimal_n_of_gamma(profile: &ProblemProfile, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if profile.n_gamma == 0 {
        return Err(CpiError::DomainError("interface rank must be positive".into()));
    }
    let d = profile.d as f64;
    let c = weyl_constant(profile.d)?;
    let lead = d * c * profile.lambda.powf(d / 2.0) * profile.vol / (2.0 * profile.n_gamma as f64);
    Ok(lead * gamma.powf(d / 2.0 - 1.0) * (gamma - 1.0) * (4.0 * (gamma - 1.0)).ln() - 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalParameters {
    pub gamma: f64,
    /// `N(γ*)` before rounding.
    pub n_real: f64,
    pub n: u32,
    pub ntol: f64,
}

pub const GAMMA_MAX: f64 = 64.0;

/// Solves `ntol(γ, N(γ)) = η` for `γ` by bisection and rounds `N` up.
pub fn optimize_parameters(profile: &ProblemProfile) -> Result<OptimalParameters> {
    profile.validate()?;
    if !(profile.eta > 0.0 && profile.eta < 1.0) {
        return Err(CpiError::DomainError(format!("target η = {} outside (0, 1)", profile.eta)));
    }
    // N(γ) only becomes non-negative past γ = 5/4; locate that point first
    let nz = |g: f64| optimal_n_of_gamma(profile, g).map(|v| v + 2.0);
    let mut lo = 1.25;
    let hi = GAMMA_MAX;
    if nz(hi)? <= 2.0 {
        return direct_search(profile);
    }
    let mut a = lo + 1e-12;
    let mut b = hi;
    while b - a > 1e-12 {
        let mid = 0.5 * (a + b);
        if nz(mid)? < 2.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    lo = b;
    let g = |gamma: f64| -> Result<f64> {
        let n = optimal_n_of_gamma(profile, gamma)?.max(0.0);
        Ok(ntol_real(gamma, n).ln() - profile.eta.ln())
    };
    let (glo, ghi) = (g(lo)?, g(hi)?);
    if !(glo > 0.0 && ghi < 0.0) {
        return direct_search(profile);
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > 1e-10 {
        let mid = 0.5 * (a + b);
        if g(mid)? > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let gamma = b;
    let n_real = optimal_n_of_gamma(profile, gamma)?;
    let n = (n_real.ceil().max(1.0)) as u32;
    let t = ntol(gamma, n)?;
    debug_assert!(t <= profile.eta * (1.0 + 1e-9));
    Ok(OptimalParameters { gamma, n_real, n, ntol: t })
}

/// Largest `N` tried by [`direct_search`].
pub const DIRECT_SEARCH_MAX_N: u32 = 200;

/// Fallback when the stationarity curve misses `η` inside the bracket: for
/// every integer `N` the smallest `γ` with `ntol(γ, N) ≤ η` (ntol falls
/// monotonically in `γ` once `N ≥ 1`), keeping the cheapest pair.
fn direct_search(profile: &ProblemProfile) -> Result<OptimalParameters> {
    let (lo, hi) = (1.25, GAMMA_MAX);
    let mut best: Option<(f64, OptimalParameters)> = None;
    for n in 1..=DIRECT_SEARCH_MAX_N {
        if ntol(hi, n)? > profile.eta {
            continue;
        }
        let (mut a, mut b) = (lo, hi);
        while b - a > 1e-10 {
            let mid = 0.5 * (a + b);
            if ntol(mid, n)? > profile.eta {
                a = mid;
            } else {
                b = mid;
            }
        }
        let c = cost(profile, b, n)?;
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, OptimalParameters { gamma: b, n_real: n as f64, n, ntol: ntol(b, n)? }));
        }
    }
    best.map(|(_, p)| p).ok_or(CpiError::NoRoot { lo, hi })
}

/// `Ñ(γ) = (γ − 1) ln(4(γ − 1))`
pub fn nomogram_n(gamma: f64) -> f64 {
    (gamma - 1.0) * (4.0 * (gamma - 1.0)).ln()
}

/// `η̃(γ) ≈ 2 (1/(4(γ − 1)))^{Ñ(γ)}`
pub fn nomogram_eta(gamma: f64) -> f64 {
    2.0 * (1.0 / (4.0 * (gamma - 1.0))).powf(nomogram_n(gamma))
}

/// Inverts the two-dimensional nomogram relation on `γ ∈ [2, 5]`.
pub fn nomogram_approx(eta_tilde: f64) -> Result<(f64, f64)> {
    let (lo, hi) = (2.0, 5.0);
    if !(eta_tilde > 0.0 && eta_tilde < 1.0) {
        return Err(CpiError::OutOfRange { lo, hi });
    }
    let f = |g: f64| nomogram_eta(g).ln() - eta_tilde.ln();
    if f(lo) < 0.0 || f(hi) > 0.0 {
        return Err(CpiError::OutOfRange { lo, hi });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > 1e-13 {
        let mid = 0.5 * (a + b);
        if f(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let gamma = 0.5 * (a + b);
    Ok((gamma, nomogram_n(gamma)))
}

pub const LEBESGUE_GRID: usize = 100_000;

/// Lebesgue constant of `N` Chebyshev nodes, by maximization over a uniform
/// grid that includes the interval endpoints.
pub fn lebesgue_constant(n: usize) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    let nodes: Vec<f64> = (1..=n).map(|i| ((2 * i - 1) as f64 * PI / (2 * n) as f64).cos()).collect();
    let weights: Vec<f64> = (1..=n)
        .map(|i| {
            let s = ((2 * i - 1) as f64 * PI / (2 * n) as f64).sin();
            if i % 2 == 0 {
                -s
            } else {
                s
            }
        })
        .collect();
    let mut best = 1.0f64;
    for k in 0..=LEBESGUE_GRID {
        let t = -1.0 + 2.0 * k as f64 / LEBESGUE_GRID as f64;
        if nodes.contains(&t) {
            continue;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (x, w) in nodes.iter().zip(&weights) {
            let q = w / (t - x);
            num += q.abs();
            den += q;
        }
        best = best.max(num / den.abs());
    }
    best
}

/// `sqrt(1 + Λ_N² (1 + λ²) ‖M⁻¹‖)`
pub fn alpha_bound(n: usize, lambda: f64, m_inv_norm: f64) -> f64 {
    let ln = lebesgue_constant(n);
    (1.0 + ln * ln * (1.0 + lambda * lambda) * m_inv_norm).sqrt()
}

/// `‖M⁻¹‖` estimated as `C h^{-d}` from the mesh size.
pub fn m_inv_norm_from_mesh(h: f64, d: u32, c: f64) -> f64 {
    c * h.powi(-(d as i32))
}

/// `‖M⁻¹‖₂` by inverse power iteration.
pub fn m_inv_norm_power(m: &SymSparseMatrix, iters: usize) -> Result<f64> {
    let f = SkylineLdl::factor(m, Definiteness::Positive)?;
    let n = m.n();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 * 0.01).collect();
    let mut est = 0.0;
    for _ in 0..iters {
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let y = f.solve(&x);
        let e = crate::skyline::dot(&x, &y);
        let done = (e - est).abs() <= 1e-10 * e;
        est = e;
        x = y;
        if done {
            break;
        }
    }
    Ok(est)
}

/// `C_M`, the reciprocal of the smallest eigenvalue of
/// `I − M22^{-1/2} M12ᵀ M11⁻¹ M12 M22^{-1/2}`.
pub fn constant_cm(m: &DMatrix<f64>, n1: usize) -> Result<f64> {
    let n = m.nrows();
    if n1 == 0 || n1 >= n || m.ncols() != n {
        return Err(CpiError::DimensionMismatch(format!("split {n1} of a {n}x{} matrix", m.ncols())));
    }
    let m11 = m.view((0, 0), (n1, n1)).into_owned();
    let m12 = m.view((0, n1), (n1, n - n1)).into_owned();
    let m22 = m.view((n1, n1), (n - n1, n - n1)).into_owned();
    let chol11 = m11
        .cholesky()
        .ok_or_else(|| CpiError::FactorizationFailure("leading mass block is not positive definite".into()))?;
    let schur = dense::symmetrize(&(&m22 - m12.transpose() * chol11.solve(&m12)));
    // congruence with the Cholesky factor of M22 gives a matrix similar to
    // the one in the definition
    let l22 = m22
        .cholesky()
        .ok_or_else(|| CpiError::FactorizationFailure("trailing mass block is not positive definite".into()))?
        .l();
    let k = n - n1;
    let linv = l22
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| CpiError::FactorizationFailure("singular mass factor".into()))?;
    let s = dense::symmetrize(&(&linv * schur * linv.transpose()));
    let smallest = s.symmetric_eigenvalues().iter().cloned().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    if !smallest.is_finite() {
        return Err(CpiError::NoPositiveElement);
    }
    Ok(1.0 / smallest)
}

/// Lagrange basis polynomials of the nodes `xi` evaluated at `t`.
pub fn lagrange_basis(xi: &[f64], t: f64) -> Vec<f64> {
    (0..xi.len())
        .map(|j| xi.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &x)| (t - x) / (xi[j] - x)).product())
        .collect()
}

/// `c_k(λ) = 1/(μ_k − λ) − Σ_j ℓ_j(λ)/(μ_k − ξ_j)`, the remainder of
/// interpolating `t ↦ 1/(μ_k − t)` at the nodes.
pub fn lagrange_error_coeffs(mu: &[f64], xi: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-14 * a.abs().max(b.abs());
    for &m in mu {
        if close(m, lambda) {
            return Err(CpiError::PoleCollision { xi: lambda, mu: m });
        }
        if let Some(&x) = xi.iter().find(|&&x| close(x, m)) {
            return Err(CpiError::PoleCollision { xi: x, mu: m });
        }
    }
    let ell = lagrange_basis(xi, lambda);
    Ok(mu.iter().map(|&m| 1.0 / (m - lambda) - ell.iter().zip(xi).map(|(l, x)| l / (m - x)).sum::<f64>()).collect())
}

/// Remainder bound `Λ^N / (2^{2N−1} (μ − Λ)^{N+1})` for Chebyshev nodes on
/// `(0, Λ)` and a pole `μ > Λ`.
pub fn lagrange_coeff_bound(lambda: f64, n: usize, mu: f64) -> f64 {
    let n_i = n as i32;
    lambda.powi(n_i) / (2f64.powi(2 * n_i - 1) * (mu - lambda).powi(n_i + 1))
}

/// Everything the bound needs for one `(γ, N)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBudget {
    pub gamma: f64,
    pub n: u32,
    pub ntol: f64,
    pub bound: f64,
    pub c_m: f64,
    pub lebesgue: f64,
    pub alpha_bound: f64,
}

impl ErrorBudget {
    pub fn new(lambda: f64, gamma: f64, n: u32, c_m: f64, c_lambda: f64, m_inv_norm: f64) -> Result<Self> {
        Ok(Self {
            gamma,
            n,
            ntol: ntol(gamma, n)?,
            bound: theoretical_bound(lambda, gamma, n, c_m, c_lambda)?,
            c_m,
            lebesgue: lebesgue_constant(n as usize),
            alpha_bound: alpha_bound(n as usize, lambda, m_inv_norm),
        })
    }
}

/// Chebyshev nodes on `(0, Λ)` in the order of the point formula; kept here
/// so analysis code does not reach into the basis module for it.
pub fn nodes(lambda: f64, n: usize) -> Vec<f64> {
    chebyshev_points(lambda, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_spd;
    use approx::assert_relative_eq;

    #[test]
    fn ntol_examples() {
        assert_relative_eq!(ntol(2.0, 0).unwrap(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(ntol(8.0, 3).unwrap(), 512.0 / 28f64.powi(8), max_relative = 1e-14);
        assert!((ntol(8.0, 3).unwrap() - 1.355e-9).abs() < 1e-12);
        for n in 0..5 {
            assert_relative_eq!(ntol(1.25, n).unwrap(), 1.25f64.powi(3), max_relative = 1e-14);
        }
        assert!(matches!(ntol(1.0, 2), Err(CpiError::DomainError(_))));
    }

    #[test]
    fn weyl_examples() {
        assert_relative_eq!(weyl_count(2, 4.0 * PI, 1.0).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(weyl_count(3, 6.0 * PI * PI, 4.0).unwrap(), 8.0, max_relative = 1e-14);
        assert!(matches!(weyl_count(4, 1.0, 1.0), Err(CpiError::UnsupportedDimension(4))));
    }

    #[test]
    fn cost_cases() {
        let p = ProblemProfile { d: 2, vol: 1.0, n_gamma: 10, lambda: 100.0, r: 1.5, eta: 1e-3 };
        let k = weyl_count(2, 1.0, 250.0).unwrap();
        let lin = ProblemProfile { r: 1.0 + 1e-12, ..p };
        assert_relative_eq!(cost(&lin, 2.5, 3).unwrap(), k + 30.0, max_relative = 1e-9);
        let none = ProblemProfile { n_gamma: 0, ..p };
        assert_relative_eq!(cost(&none, 2.5, 3).unwrap(), k.powf(1.5), max_relative = 1e-12);
        assert!(cost(&p, 2.5, 4).unwrap() > cost(&p, 2.5, 3).unwrap());
        assert!(cost(&p, 3.0, 3).unwrap() > cost(&p, 2.5, 3).unwrap());
    }

    #[test]
    fn bound_examples() {
        assert_relative_eq!(theoretical_bound(1.0, 2.0, 0, 1.0, 1.0).unwrap(), 32.0, max_relative = 1e-14);
        let g = 3.0;
        let r = theoretical_bound(1.0, g, 4, 1.0, 1.0).unwrap() / theoretical_bound(1.0, g, 3, 1.0, 1.0).unwrap();
        assert_relative_eq!(r, (4.0 * (g - 1.0)).powi(-2), max_relative = 1e-13);
    }

    #[test]
    fn nomogram_examples() {
        assert_relative_eq!(nomogram_n(2.0), 4f64.ln(), max_relative = 1e-15);
        assert!((nomogram_eta(2.0) - 0.2927).abs() < 1e-4);
        assert_relative_eq!(nomogram_n(5.0), 4.0 * 16f64.ln(), max_relative = 1e-15);
        for g0 in [2.5, 3.0, 4.0] {
            let (g, _) = nomogram_approx(nomogram_eta(g0)).unwrap();
            assert!((g - g0).abs() < 1e-6);
        }
        assert!(matches!(nomogram_approx(0.9), Err(CpiError::OutOfRange { .. })));
    }

    #[test]
    fn lebesgue_examples() {
        assert_eq!(lebesgue_constant(1), 1.0);
        assert!((lebesgue_constant(2) - 2f64.sqrt()).abs() < 1e-9);
        let l50 = lebesgue_constant(50);
        let lo = 2.0 / PI * 50f64.ln();
        assert!(l50 >= lo && l50 <= lo + 1.0);
    }

    #[test]
    fn alpha_examples() {
        assert_relative_eq!(alpha_bound(1, 0.0, 1.0), 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(alpha_bound(1, 1.0, 2.0), 5f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn cm_examples() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 1.0, 0.2, 0.0, 0.2, 1.0]);
        assert_relative_eq!(constant_cm(&m, 1).unwrap(), 1.0, max_relative = 1e-12);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(constant_cm(&m, 1).unwrap(), 4.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn cm_inequality_on_random_probes() {
        let m = random_spd(12, 61);
        let n1 = 5;
        let c = constant_cm(&m, n1).unwrap();
        let mut g = crate::testutil::rng(62);
        use rand::Rng;
        for _ in 0..200 {
            let x = nalgebra::DVector::from_fn(12, |_, _| g.random::<f64>() - 0.5);
            let x2 = x.rows(n1, 12 - n1);
            let lhs = c * x.dot(&(&m * &x));
            let rhs = x2.dot(&(m.view((n1, n1), (7, 7)) * x2));
            assert!(lhs >= rhs * (1.0 - 1e-12));
        }
    }

    #[test]
    fn lagrange_examples() {
        let lam = 7.0;
        let xi = chebyshev_points(lam, 3);
        let c = lagrange_error_coeffs(&[20.0, 31.0], &xi, xi[0]).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-14));
        let big = 5.0;
        let c = lagrange_error_coeffs(&[2.0 * big], &[big / 2.0], big / 4.0).unwrap();
        assert_relative_eq!(c[0], -2.0 / (21.0 * big), max_relative = 1e-13);
        assert!(matches!(lagrange_error_coeffs(&[xi[1]], &xi, 1.0), Err(CpiError::PoleCollision { .. })));
    }

    #[test]
    fn optimizer_meets_target() {
        let p = ProblemProfile { d: 2, vol: 1.2, n_gamma: 30, lambda: 135.0, r: 2.0, eta: 1e-6 };
        let o = optimize_parameters(&p).unwrap();
        assert!(o.ntol <= 1e-6);
        assert!(o.n >= 1);
        let tighter = optimize_parameters(&ProblemProfile { eta: 1e-12, ..p }).unwrap();
        assert!(tighter.n >= o.n);
    }

    #[test]
    fn wide_interface_falls_back_to_direct_search() {
        // the interface term dominates, so the stationary N(γ) stays negative
        let p = ProblemProfile { d: 2, vol: 0.1, n_gamma: 2000, lambda: 10.0, r: 2.0, eta: 1e-8 };
        assert!(optimal_n_of_gamma(&p, GAMMA_MAX).unwrap() < 0.0);
        let o = optimize_parameters(&p).unwrap();
        assert!(o.ntol <= 1e-8);
        // nothing cheaper with the same N is feasible
        assert!(ntol(o.gamma * (1.0 - 1e-6), o.n).unwrap() > 1e-8);
    }
}
