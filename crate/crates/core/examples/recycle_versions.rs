//! One exterior basis serves every interior perturbation of the same model.

use std::time::Instant;

use cpi::bench;
use cpi::cpi::{build_basis, CpiOptions, CpiPlan};
use cpi::fem::{self, PerturbationSpec};

fn main() -> cpi::Result<()> {
    let problem = fem::desk_rectangle(32)?;
    let versions = fem::make_versions(&problem, &PerturbationSpec { lo: 0.5, hi: 2.0, seed: 11 }, 5)?;
    let pencils: Vec<_> = versions.into_iter().map(|v| v.pencil).collect();
    let opts = CpiOptions::default();
    let plan = CpiPlan::new(135.0, 2.5, 3, 0.0, 1e4)?;

    let t = Instant::now();
    let basis = build_basis(&problem.pencil, &plan, &opts)?;
    println!("basis: dim {} in {:.3} s", basis.dim(), t.elapsed().as_secs_f64());

    let report = bench::run_solve(&basis, &pencils, plan.lambda, &opts)?;
    println!(
        "{} versions: reduce {:.4} s, solve {:.4} s, exterior recomputed {} times",
        pencils.len(),
        report.reduce_seconds,
        report.solve_seconds,
        report.exterior_reductions
    );
    for v in 0..pencils.len() {
        let first: Vec<String> =
            report.rows.iter().filter(|r| r.version == v).take(4).map(|r| format!("{:.5}", r.value)).collect();
        println!("version {v}: {}", first.join(" "));
    }
    Ok(())
}
