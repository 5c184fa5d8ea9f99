use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    DMatrix::from_fn(r, c, |_, _| g.random::<f64>() * 2.0 - 1.0)
}

/// Random SPD matrix with eigenvalues roughly in `[1, n + 1]`.
pub fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
    let b = random_matrix(n, n, seed);
    let s = &b * b.transpose() / n as f64;
    s + DMatrix::identity(n, n)
}
