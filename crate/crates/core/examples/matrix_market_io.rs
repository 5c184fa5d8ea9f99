//! Write a pencil to Matrix Market files with a manifest, then read it back
//! the way the command line tool does.

use cpi::bench;
use cpi::fem;
use cpi::io::{self, Manifest};

fn main() -> cpi::Result<()> {
    let dir = std::env::temp_dir().join("cpi-square");
    std::fs::create_dir_all(&dir)?;
    let problem = fem::unit_square(8)?;
    let (a, m) = problem.pencil.full().expect("assembled pencil");
    io::write_matrix_market(&dir.join("A.mtx"), a)?;
    io::write_matrix_market(&dir.join("M.mtx"), m)?;
    let text = format!("a = A.mtx\nm = M.mtx\nn1 = {}\nlambda = 60\nh = {}\n", problem.pencil.n1(), problem.h);
    std::fs::write(dir.join("manifest.txt"), text)?;

    let man = Manifest::load(&dir.join("manifest.txt"))?;
    let pencil = bench::load_problem(&man)?;
    println!("read n = {}, n1 = {}, nnz(A) = {}", pencil.n(), pencil.n1(), pencil.full().unwrap().0.nnz());
    print!("{}", man.to_text(&dir));

    let entry =
        io::parse_matrix_market("%%MatrixMarket matrix coordinate real symmetric\n2 2 3\n1 1 2\n2 1 -1\n2 2 2\n")?;
    println!("{}", entry.to_dense());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
