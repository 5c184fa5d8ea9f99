//! Assemble the desk rectangle and compare its lowest eigenvalues with the
//! closed-form Dirichlet spectrum of a 2 x 1 rectangle.

use cpi::cpi::{solve_target, CpiOptions};
use cpi::eigen::Target;
use cpi::fem;

fn main() -> cpi::Result<()> {
    let m = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let problem = fem::desk_rectangle(m)?;
    let p = &problem.pencil;
    println!(
        "n = {}, interior {}, exterior {}, interface vertices {}, h = {:.4}",
        p.n(),
        p.n1(),
        p.n2(),
        problem.n_interface,
        problem.h
    );

    let eig = solve_target(p, Target::Smallest(8), &CpiOptions::default())?;
    let exact = fem::rectangle_eigenvalues(2.0, 1.0, 8);
    for (i, (a, e)) in eig.values.iter().zip(&exact).enumerate() {
        println!("{:>2}  {a:>12.6}  {e:>12.6}  {:+.2e}", i + 1, (a - e) / e);
    }
    Ok(())
}
