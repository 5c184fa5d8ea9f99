//! CPI against component mode synthesis at the same exterior dimension.

use cpi::bench;
use cpi::cpi::{CpiOptions, CpiPlan};
use cpi::fem;

fn main() -> cpi::Result<()> {
    let problem = fem::desk_rectangle(16)?;
    let plan = CpiPlan::new(135.0, 2.5, 6, 0.0, 1e4)?;
    let dims = [10, 20, 30, 40, 60, 80];
    let report = bench::run_compare_cms(&problem.pencil, &plan, 12, &dims, &CpiOptions::default())?;
    println!("K = {}", report.k);
    for r in &report.rows {
        match r.cpi_error {
            Some(e) => println!("dim {:>3}: cpi {e:.2e}  cms {:.2e}", r.dim, r.cms_error),
            None => println!("dim {:>3}: cpi needs at least K  cms {:.2e}", r.dim, r.cms_error),
        }
    }
    Ok(())
}
