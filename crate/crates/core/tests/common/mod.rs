#![allow(dead_code)]

use cpi::pencil::{build_pencil, BlockPencil};
use cpi::sparse::SymSparseMatrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense SPD matrix with eigenvalues roughly in `[1, n + 1]`.
pub fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    let b = DMatrix::from_fn(n, n, |_, _| g.random::<f64>() * 2.0 - 1.0);
    &b * b.transpose() / n as f64 + DMatrix::identity(n, n)
}

/// Sparse diagonally dominant SPD matrix. Entries between the two blocks
/// only touch the last `coupled` interior unknowns.
pub fn random_sparse_spd(n: usize, n1: usize, coupled: usize, density: f64, seed: u64) -> SymSparseMatrix {
    let mut g = rng(seed);
    let mut trip = Vec::new();
    let mut rowsum = vec![0.0; n];
    for i in 0..n {
        for j in 0..i {
            let crosses = (i >= n1) != (j >= n1);
            if crosses && j < n1 - coupled.min(n1) {
                continue;
            }
            if g.random::<f64>() < density {
                let v = g.random::<f64>() * 2.0 - 1.0;
                trip.push((i, j, v));
                trip.push((j, i, v));
                rowsum[i] += v.abs();
                rowsum[j] += v.abs();
            }
        }
    }
    for (i, s) in rowsum.iter().enumerate() {
        trip.push((i, i, s + 0.5 + g.random::<f64>()));
    }
    SymSparseMatrix::from_triplets(n, trip).unwrap()
}

pub fn random_block_pencil(n: usize, n1: usize, seed: u64) -> BlockPencil {
    let coupled = (n1 / 3).max(1);
    let a = random_sparse_spd(n, n1, coupled, 0.3, seed);
    let m = random_sparse_spd(n, n1, coupled, 0.15, seed.wrapping_add(1000));
    build_pencil(a, m, n1).unwrap()
}
