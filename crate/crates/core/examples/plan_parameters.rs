//! Pick the oversampling factor and the number of interpolation points for a
//! target tolerance, then print the error budget of the chosen pair.

use cpi::planner::{self, ErrorBudget, ProblemProfile};

fn main() -> cpi::Result<()> {
    let profile = ProblemProfile { d: 2, vol: 1.25, n_gamma: 31, lambda: 135.0, r: 2.0, eta: 1e-8 };
    let p = planner::optimize_parameters(&profile)?;
    println!("gamma = {:.4}, N = {} (N(gamma) = {:.3}), ntol = {:.3e}", p.gamma, p.n, p.n_real, p.ntol);

    let h = 1.0 / 32.0;
    let budget = ErrorBudget::new(profile.lambda, p.gamma, p.n, 1.0, 1.0, planner::m_inv_norm_from_mesh(h, 2, 1.0))?;
    println!("{budget:#?}");

    // the same tolerance through the two-dimensional nomogram
    let (g, n) = planner::nomogram_approx(profile.eta)?;
    println!("nomogram: gamma = {g:.4}, N = {n:.3}");

    for eta in [1e-4, 1e-6, 1e-10, 1e-14] {
        let p = planner::optimize_parameters(&ProblemProfile { eta, ..profile })?;
        let cost = planner::cost(&profile, p.gamma, p.n)?;
        println!("eta {eta:.0e}: gamma {:.3}, N {}, cost {cost:.3e}", p.gamma, p.n);
    }
    Ok(())
}
