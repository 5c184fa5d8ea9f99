//! Save a basis, load it back and solve with it.

use cpi::cpi::{build_basis, cpi_solve, CpiOptions, CpiPlan};
use cpi::fem;
use cpi::io;

fn main() -> cpi::Result<()> {
    let problem = fem::desk_rectangle(16)?;
    let opts = CpiOptions::default();
    let plan = CpiPlan::new(135.0, 2.5, 3, 0.0, 1e4)?;
    let basis = build_basis(&problem.pencil, &plan, &opts)?;

    let path = std::env::temp_dir().join("desk16.cpib");
    io::save_basis(&path, &basis)?;
    let size = std::fs::metadata(&path)?.len();
    let loaded = io::load_basis(&path)?;
    println!("{}: {size} bytes, K_c = {}", path.display(), loaded.k_c);

    let a = cpi_solve(&problem.pencil, &plan, Some(&basis), &opts)?;
    let b = cpi_solve(&problem.pencil, &plan, Some(&loaded), &opts)?;
    assert_eq!(a.values, b.values);
    println!("lowest: {:.10}", b.values[0]);
    std::fs::remove_file(&path)?;
    Ok(())
}
