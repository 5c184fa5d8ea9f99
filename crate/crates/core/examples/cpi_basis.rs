//! Build a reduced exterior basis and compare the reduced eigenvalues with a
//! full solve.

use cpi::bench;
use cpi::cpi::{build_basis, cpi_solve, CpiOptions, CpiPlan};
use cpi::fem;
use cpi::planner;

fn main() -> cpi::Result<()> {
    let problem = fem::desk_rectangle(16)?;
    let pencil = &problem.pencil;
    let lambda = 135.0;
    let opts = CpiOptions::default();

    let full = bench::reference_spectrum(pencil, 10)?;
    for n in 1..=4 {
        let alpha = planner::alpha_bound(n, lambda, planner::m_inv_norm_from_mesh(problem.h, 2, 1.0));
        let plan = CpiPlan::new(lambda, 2.5, n, 0.0, alpha)?;
        let basis = build_basis(pencil, &plan, &opts)?;
        let res = cpi_solve(pencil, &plan, Some(&basis), &opts)?;
        let err = res.values.iter().zip(&full.values).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
        println!(
            "N={n}: K={}, K_c={}, reduced dim {}, max rel error {err:.2e}, bound {:.2e}",
            basis.k,
            basis.k_c,
            res.reduced_dim,
            res.bound.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
