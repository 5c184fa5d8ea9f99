mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use cpi::cpi::{build_sample_space, chebyshev_points, cutoff_index, CpiOptions, CpiPlan};
use cpi::planner::{self, ProblemProfile};
use cpi::sparse::CsrMatrix;

fn sparse_entries(rows: usize, cols: usize) -> impl Strategy<Value = Vec<(usize, usize, f64)>> {
    prop::collection::vec((0..rows, 0..cols, -10.0..10.0f64), 0..(rows * cols).min(60))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_matvec_matches_dense(
        (rows, cols, trip) in (1usize..12, 1usize..12).prop_flat_map(|(r, c)| (Just(r), Just(c), sparse_entries(r, c))),
        seed in any::<u64>(),
    ) {
        let s = CsrMatrix::from_triplets(rows, cols, trip).unwrap();
        let d = s.to_dense();
        let x: Vec<f64> = (0..cols).map(|i| ((seed.wrapping_add(i as u64) % 17) as f64) - 8.0).collect();
        let mut y = vec![0.0; rows];
        s.matvec(&x, &mut y);
        let yd = &d * nalgebra::DVector::from_column_slice(&x);
        for (a, b) in y.iter().zip(yd.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let xt: Vec<f64> = (0..rows).map(|i| i as f64 - 3.0).collect();
        let mut yt = vec![0.0; cols];
        s.matvec_t(&xt, &mut yt);
        let ytd = d.transpose() * nalgebra::DVector::from_column_slice(&xt);
        for (a, b) in yt.iter().zip(ytd.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn ntol_falls_with_more_points(gamma in 1.3..60.0f64, n in 0u32..20) {
        prop_assert!(planner::ntol(gamma, n + 1).unwrap() < planner::ntol(gamma, n).unwrap());
    }

    // with no points ntol grows again past γ = 3, so the sweep starts at one
    #[test]
    fn ntol_falls_with_oversampling(gamma in 2.0..60.0f64, step in 0.01..5.0f64, n in 1u32..20) {
        prop_assert!(planner::ntol(gamma + step, n).unwrap() <= planner::ntol(gamma, n).unwrap());
    }

    #[test]
    fn chebyshev_points_are_inside(lambda in 1e-3..1e5f64, n in 1usize..64) {
        let xi = chebyshev_points(lambda, n);
        prop_assert_eq!(xi.len(), n);
        prop_assert!(xi.iter().all(|&x| x > 0.0 && x < lambda));
        prop_assert!(xi.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn lebesgue_constant_at_least_one(n in 1usize..40) {
        prop_assert!(planner::lebesgue_constant(n) >= 1.0);
    }

    #[test]
    fn cutoff_shrinks_with_tolerance(
        mut spectrum in prop::collection::vec(1e-14..1e3f64, 1..40),
        alpha in 1.0..1e4f64,
        t1 in -14.0..2.0f64,
        dt in 0.0..6.0f64,
    ) {
        spectrum.sort_by(|a, b| b.total_cmp(a));
        let loose = cutoff_index(&spectrum, alpha, 10f64.powf(t1 + dt));
        let tight = cutoff_index(&spectrum, alpha, 10f64.powf(t1));
        prop_assert!(loose <= tight);
        prop_assert!(tight <= spectrum.len());
    }

    #[test]
    fn optimizer_is_feasible(
        d in 2u32..=3,
        vol in 0.05..20.0f64,
        n_gamma in 1usize..5000,
        lambda in 1.0..1e4f64,
        r in 1.1..2.9f64,
        eta_exp in -12.0..-1.0f64,
    ) {
        let p = ProblemProfile { d, vol, n_gamma, lambda, r, eta: 10f64.powf(eta_exp) };
        let o = planner::optimize_parameters(&p).unwrap();
        prop_assert!(planner::ntol(o.gamma, o.n).unwrap() <= p.eta * (1.0 + 1e-9));
        prop_assert!(o.gamma > 1.25 && o.gamma <= planner::GAMMA_MAX);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn compressed_dimension_bounded(n in 16usize..40, seed in 0u64..1000, npts in 1usize..5) {
        let n1 = n / 3;
        let pencil = common::random_block_pencil(n, n1, seed);
        let d = cpi::eigen::dense_eigenvalues(&pencil.a().to_dense(), &pencil.m().to_dense()).unwrap();
        let lambda = 0.5 * (d[1] + d[2]);
        let plan = CpiPlan::new(lambda, 2.0, npts, 0.0, 1.0).unwrap();
        let space = build_sample_space(&pencil, &plan, &CpiOptions::default()).unwrap();
        let basis = space.truncate(0.0, 1.0).unwrap();
        prop_assert_eq!(basis.k_c, space.rank());
        prop_assert!(basis.k_c <= basis.k + plan.n * basis.r);
        prop_assert!(basis.k_c <= pencil.n2());
        let q = basis.q22();
        let a22 = pencil.a().b22.to_dense();
        let g: DMatrix<f64> = q.transpose() * a22 * q;
        prop_assert!((g - DMatrix::identity(basis.k_c, basis.k_c)).abs().max() < 1e-8);
    }
}
