//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;

use cpi::bench::{self, Reference};
use cpi::cpi::{
    build_basis, build_projector, build_sample_space, cpi_solve, recycle_reduced_blocks, solve_target, CpiOptions,
    CpiPlan, ReducedBasis,
};
use cpi::eigen::{dense_eigenvalues, exterior_eigs, truncated_svd, SvdInput, SvdMode, Target};
use cpi::fem::{self, FemProblem, PerturbationSpec};
use cpi::io::{fmt15, Manifest};
use cpi::pencil::{BlockCholesky, BlockPencil};
use cpi::planner::{self, ProblemProfile};
use cpi::Result;

const DESK_M: usize = 32;
const DESK_LAMBDA: f64 = 135.0;
const DESK_TRACK: usize = 15;
const REFERENCE_FLOOR: f64 = 1e-11;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

struct Desk {
    problem: FemProblem,
    man: Manifest,
    reference: Option<Reference>,
}

impl Desk {
    fn new() -> Result<Self> {
        let problem = fem::desk_rectangle(DESK_M)?;
        let man = Manifest {
            a: "A.mtx".into(),
            m: "M.mtx".into(),
            n1: problem.pencil.n1(),
            lambda: DESK_LAMBDA,
            eta: 1e-6,
            d: 2,
            vol: Some(bench::exterior_area(&problem)),
            tol: 0.0,
            r: 2.0,
            out: ".".into(),
            n_gamma: None,
            gamma: None,
            n: None,
            alpha: None,
            h: Some(problem.h),
            track: Some(DESK_TRACK),
            versions: Vec::new(),
            seed: 7,
        };
        Ok(Self { problem, man, reference: None })
    }

    fn pencil(&self) -> &BlockPencil {
        &self.problem.pencil
    }

    fn reference(&mut self) -> Result<&Reference> {
        if self.reference.is_none() {
            self.reference = Some(bench::reference_spectrum(&self.problem.pencil, DESK_TRACK)?);
        }
        Ok(self.reference.as_ref().unwrap())
    }
}

fn reduce(pencil: &BlockPencil, basis: &ReducedBasis) -> Result<BlockPencil> {
    let (a21, m21) = pencil.coupling().expect("assembled pencil");
    recycle_reduced_blocks(basis, Arc::clone(&pencil.a().b11), Arc::clone(&pencil.m().b11), a21, m21)
}

fn max_rel_error(values: &[f64], reference: &[f64]) -> f64 {
    reference
        .iter()
        .enumerate()
        .map(|(i, r)| values.get(i).map_or(f64::INFINITY, |v| (v - r).abs() / r))
        .fold(0.0, f64::max)
}

fn exact_recovery() -> Result<Outcome> {
    let opts = CpiOptions::default();
    let mut g = common::rng(101);
    let mut worst: f64 = 0.0;
    let mut bad_counts = 0;
    for trial in 0..20 {
        let n = g.random_range(12..=60);
        let n1 = g.random_range(3..n / 2);
        let pencil = common::random_block_pencil(n, n1, 500 + trial);
        let full = dense_eigenvalues(&pencil.a().to_dense(), &pencil.m().to_dense())?;
        let j = g.random_range(1..n / 3);
        let lambda = 0.5 * (full[j - 1] + full[j]);
        let (a22, m22) = pencil.exterior().expect("sparse exterior");
        let mu = dense_eigenvalues(&a22.to_dense(), &m22.to_dense())?;
        let gamma = (1.05 * mu[mu.len() - 1] / lambda).max(1.5);
        let plan = CpiPlan::new(lambda, gamma, 2, 0.0, 1.0)?;
        let res = cpi_solve(&pencil, &plan, None, &opts)?;
        if res.values.len() != j {
            bad_counts += 1;
        }
        worst = worst.max(max_rel_error(&res.values, &full[..j]));
    }
    Ok(Outcome::new(
        worst <= 1e-9 && bad_counts == 0,
        format!("20 pencils, max rel error {worst:.3e} (tol 1e-9), count mismatches {bad_counts}"),
    ))
}

/// Criteria 2 and 3 share the sweep.
fn convergence_sweep(desk: &mut Desk) -> Result<(Outcome, Outcome)> {
    let opts = CpiOptions::default();
    let reference = desk.reference()?.clone();
    let ns: Vec<usize> = (1..=6).collect();
    let report = bench::convergence_against(&desk.man, desk.pencil(), &reference, &[2.5], &ns, &opts)?;
    let violations = report.rows.iter().filter(|r| !(r.rel_error <= r.bound)).count();
    let maxes = report.max_errors();
    let summary: Vec<String> = maxes.iter().map(|m| format!("N={} {:.2e}/{:.2e}", m.1, m.2, m.3)).collect();
    let dominance = Outcome::new(
        violations == 0 && report.rows.len() == 6 * DESK_TRACK,
        format!("{violations} of {} errors above the bound; {}", report.rows.len(), summary.join(", ")),
    );

    let required = 2.0 * (4.0 * (2.5 - 1.0f64)).ln() * 0.5;
    let mut slow = Vec::new();
    let mut checked = 0;
    for w in maxes.windows(2) {
        if w[0].2 > REFERENCE_FLOOR && w[1].2 > REFERENCE_FLOOR {
            checked += 1;
            let drop = (w[0].2 / w[1].2).ln();
            if drop < required {
                slow.push(format!("N={}->{}: {drop:.2}", w[0].1, w[1].1));
            }
        }
    }
    let floor_reached = maxes.last().is_some_and(|m| m.2 <= REFERENCE_FLOOR);
    let trend = Outcome::new(
        slow.is_empty() && checked > 0 && floor_reached,
        format!("{checked} steps above the floor, required log drop {required:.3}, slow steps {slow:?}, floor reached {floor_reached}"),
    );
    Ok((dominance, trend))
}

fn optimizer_consistency() -> Result<Outcome> {
    let mut g = common::rng(202);
    let mut failures = Vec::new();
    for i in 0..100 {
        let p = ProblemProfile {
            d: g.random_range(2..=3),
            vol: 10f64.powf(g.random_range(-1.0..1.0)),
            n_gamma: g.random_range(10..=2000),
            lambda: 10f64.powf(g.random_range(1.0..3.7)),
            r: g.random_range(1.2..2.8),
            eta: 10f64.powf(g.random_range(-10.0..-2.0)),
        };
        match planner::optimize_parameters(&p) {
            Ok(o) => {
                let t = planner::ntol(o.gamma, o.n)?;
                if !(t <= p.eta) {
                    failures.push(format!("#{i}: ntol {t:.3e} > η {:.3e}", p.eta));
                }
            }
            Err(e) => failures.push(format!("#{i}: {e}")),
        }
    }
    let t83 = planner::ntol(8.0, 3)?;
    let ok83 = (t83 - 1.355e-9).abs() <= 1e-3 * 1.355e-9 && t83 <= 1e-6;
    Ok(Outcome::new(
        failures.is_empty() && ok83,
        format!(
            "100 profiles, {} failures {:?}; ntol(8,3) = {t83:.4e}",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    ))
}

fn random_mass(n: usize, seed: u64, strong: bool) -> DMatrix<f64> {
    if strong {
        let b = DMatrix::from_fn(n, n, {
            let mut g = common::rng(seed);
            move |_, _| g.random::<f64>() * 2.0 - 1.0
        });
        &b * b.transpose() + DMatrix::identity(n, n) * 0.05
    } else {
        common::random_spd(n, seed)
    }
}

fn cm_lemma() -> Result<Outcome> {
    let mut g = common::rng(303);
    let mut probe_violations = 0;
    let mut worst_sharp: f64 = 0.0;
    for trial in 0..50 {
        let n = g.random_range(2..=40);
        let n1 = g.random_range(1..n);
        let k = n - n1;
        let m = random_mass(n, 900 + trial, trial % 2 == 0);
        let c_m = planner::constant_cm(&m, n1)?;
        let m22 = m.view((n1, n1), (k, k)).into_owned();
        for _ in 0..1000 {
            let x = nalgebra::DVector::from_fn(n, |_, _| g.random::<f64>() * 2.0 - 1.0);
            let x2 = x.rows(n1, k);
            let lhs = c_m * x.dot(&(&m * &x));
            let rhs = x2.dot(&(&m22 * x2));
            if lhs < rhs * (1.0 - 1e-12) {
                probe_violations += 1;
            }
        }
        // maximize ‖x2‖²_M22 / xᵀMx: the optimal x1 is −M11⁻¹ M12 x2 and the
        // optimal x2 is the top eigenvector of S^{-1/2} M22 S^{-1/2}
        let m11 = m.view((0, 0), (n1, n1)).into_owned();
        let m12 = m.view((0, n1), (n1, k)).into_owned();
        let chol11 = m11.clone().cholesky().expect("SPD");
        let s = &m22 - m12.transpose() * chol11.solve(&m12);
        let s = (&s + s.transpose()) * 0.5;
        let ls = s.cholesky().expect("Schur complement is SPD").l();
        let lsinv = ls.solve_lower_triangular(&DMatrix::identity(k, k)).unwrap();
        let c = &lsinv * &m22 * lsinv.transpose();
        let eig = ((&c + c.transpose()) * 0.5).symmetric_eigen();
        let top = eig.eigenvalues.imax();
        let x2 = lsinv.transpose() * eig.eigenvectors.column(top);
        let x1 = -chol11.solve(&(&m12 * &x2));
        let mut x = nalgebra::DVector::zeros(n);
        x.rows_mut(0, n1).copy_from(&x1);
        x.rows_mut(n1, k).copy_from(&x2);
        let ratio = x.dot(&(&m * &x)) / x2.dot(&(&m22 * &x2));
        worst_sharp = worst_sharp.max((ratio - 1.0 / c_m).abs() * c_m);
    }
    Ok(Outcome::new(
        probe_violations == 0 && worst_sharp <= 1e-6,
        format!("50 matrices x 1000 probes, {probe_violations} violations; min ratio vs 1/C_M rel dev {worst_sharp:.2e} (tol 1e-6)"),
    ))
}

fn truncation_control(desk: &mut Desk) -> Result<Outcome> {
    let opts = CpiOptions::default();
    let reference = desk.reference()?.values.clone();
    let plan = bench::make_plan(&desk.man, desk.pencil(), 4.0, 6)?;
    let space = build_sample_space(desk.pencil(), &plan, &opts)?;
    let untruncated = plan.error_bound(false);
    let mut prev = 0;
    let mut monotone = true;
    let mut violations = Vec::new();
    let mut dims = Vec::new();
    for e in 2..=12 {
        let tol = 10f64.powi(-e);
        let basis = space.truncate(tol, plan.alpha_bound)?;
        monotone &= basis.k_c >= prev;
        prev = basis.k_c;
        dims.push(basis.k_c);
        let reduced = reduce(desk.pencil(), &basis)?;
        let eig = solve_target(&reduced, Target::Smallest(reference.len()), &opts)?;
        let err = max_rel_error(&eig.values, &reference);
        if !(err <= 2.0 * untruncated + 2.0 * tol) {
            violations.push(format!("tol 1e-{e}: {err:.2e}"));
        }
    }
    Ok(Outcome::new(
        monotone && violations.is_empty(),
        format!("dims {dims:?}, monotone {monotone}, bound violations {violations:?}"),
    ))
}

fn cms_comparison(desk: &mut Desk) -> Result<Outcome> {
    let opts = CpiOptions::default();
    let reference = desk.reference()?.clone();
    let plan = bench::make_plan(&desk.man, desk.pencil(), 2.5, 6)?;
    let dims: Vec<usize> = (60..=180).step_by(10).collect();
    let report = bench::compare_cms_against(desk.pencil(), &plan, &reference, &dims, &opts)?;
    let wins = report.rows.iter().filter(|r| r.cpi_error.is_some_and(|e| e <= r.cms_error)).count();
    let total = report.rows.len();
    let first = &report.rows[0];
    let last = &report.rows[total - 1];
    Ok(Outcome::new(
        wins * 10 >= total * 9,
        format!(
            "CPI <= CMS at {wins}/{total} dims (K = {}); dim {}: {:.2e} vs {:.2e}, dim {}: {:.2e} vs {:.2e}",
            report.k,
            first.dim,
            first.cpi_error.unwrap_or(f64::NAN),
            first.cms_error,
            last.dim,
            last.cpi_error.unwrap_or(f64::NAN),
            last.cms_error
        ),
    ))
}

fn recycling(desk: &Desk) -> Result<Outcome> {
    let opts = CpiOptions::default();
    let versions = fem::make_versions(&desk.problem, &PerturbationSpec::default(), 10)?;
    let plan = bench::make_plan(&desk.man, desk.pencil(), 2.5, 3)?;

    let solve = |basis: &ReducedBasis, v: &BlockPencil| -> Result<Vec<f64>> {
        let reduced = reduce(v, basis)?;
        Ok(solve_target(&reduced, Target::Below(DESK_LAMBDA), &opts)?.values)
    };

    let t = Instant::now();
    let basis = build_basis(desk.pencil(), &plan, &opts)?;
    let recycled: Vec<Vec<f64>> = versions.iter().map(|v| solve(&basis, &v.pencil)).collect::<Result<_>>()?;
    let with = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let fresh: Vec<Vec<f64>> =
        versions.iter().map(|v| solve(&build_basis(&v.pencil, &plan, &opts)?, &v.pencil)).collect::<Result<_>>()?;
    let without = t.elapsed().as_secs_f64();

    let mismatches = recycled
        .iter()
        .zip(&fresh)
        .filter(|(a, b)| a.len() != b.len() || a.iter().zip(b.iter()).any(|(x, y)| fmt15(*x) != fmt15(*y)))
        .count();
    let ratio = with / without;
    Ok(Outcome::new(
        mismatches == 0 && ratio < 0.6,
        format!("{mismatches} of 10 versions differ at 15 digits; {with:.3} s recycled vs {without:.3} s rebuilt, ratio {ratio:.3} (< 0.6)"),
    ))
}

fn fem_sanity() -> Result<Outcome> {
    let opts = CpiOptions::default();
    let exact = 2.0 * std::f64::consts::PI.powi(2);
    let lambda1 = |m: usize| -> Result<f64> {
        let p = fem::unit_square(m)?;
        Ok(solve_target(&p.pencil, Target::Smallest(1), &opts)?.values[0])
    };
    let (l16, l32) = (lambda1(16)?, lambda1(32)?);
    let above = l32 >= exact && l32 <= 1.01 * exact;
    let ratio = (l16 - exact) / (l32 - exact);
    Ok(Outcome::new(
        above && (3.6..=4.4).contains(&ratio),
        format!("λ1(m=32) = {l32:.6} vs 2π² = {exact:.6}; error ratio m=16/m=32 = {ratio:.3}"),
    ))
}

fn invariants() -> Result<Outcome> {
    let opts = CpiOptions::default();
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool, value: String| {
        if !ok {
            failed.push(format!("{name} ({value})"));
        }
    };

    // projector on a small desk problem
    let small = fem::desk_rectangle(16)?;
    let pencil = &small.pencil;
    let (a22, m22) = pencil.exterior().expect("sparse exterior");
    let lt = 2.5 * DESK_LAMBDA;
    let ext = exterior_eigs(pencil, lt, &opts.exterior)?;
    let proj = build_projector(ext, a22, m22, lt)?;
    let p = proj.to_dense();
    let m22d = m22.to_dense();
    let idem = (&p * &p - &p).abs().max() / p.abs().max();
    check("projector idempotence", idem <= 1e-8, format!("{idem:.2e}"));
    let adj = (&m22d * &p - p.transpose() * &m22d).abs().max() / (m22d.abs().max() * p.abs().max());
    check("projector self-adjointness", adj <= 1e-8, format!("{adj:.2e}"));

    // A22-orthonormality of the basis
    let plan = CpiPlan::new(DESK_LAMBDA, 2.5, 3, 0.0, planner::alpha_bound(3, DESK_LAMBDA, small.h.powi(-2)))?;
    let basis = build_basis(pencil, &plan, &opts)?;
    let defect = basis.orthonormality_defect();
    check("basis orthonormality", defect <= 1e-8, format!("{defect:.2e}"));

    // block Cholesky of the reduced stiffness
    let reduced = reduce(pencil, &basis)?;
    let a = reduced.a();
    let bc = BlockCholesky::from_blocks(&a.b11, &a.b21.to_dense(), &a.b22.to_dense())?;
    let r = bc.r_dense();
    let ad = a.to_dense();
    let rec = (r.transpose() * &r - &ad).norm() / ad.norm();
    check("block Cholesky reconstruction", rec <= 1e-10, format!("{rec:.2e}"));

    // truncated SVD error identity
    let mut g = common::rng(404);
    let b = DMatrix::from_fn(40, 25, |_, _| g.random::<f64>() * 2.0 - 1.0);
    for mode in [SvdMode::Dense, SvdMode::SubspaceIteration] {
        let rank = 10;
        let t = truncated_svd(SvdInput::Dense(&b), mode, rank, 0.0)?;
        let approx = &t.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(t.sigma.clone())) * t.w.transpose();
        let err2 = (&b - approx).singular_values().max();
        let exact = b.singular_values().as_slice().to_vec();
        let mut sorted = exact.clone();
        sorted.sort_by(|x, y| y.total_cmp(x));
        let dev = (err2 - sorted[rank]).abs() / sorted[0];
        check(&format!("SVD truncation identity {mode:?}"), dev <= 1e-8, format!("{dev:.2e}"));
    }

    // Lebesgue constant band
    let l50 = planner::lebesgue_constant(50);
    let lo = 2.0 / std::f64::consts::PI * 50f64.ln();
    check("Lebesgue band N=50", l50 >= lo && l50 <= lo + 1.0, format!("{l50:.4}"));
    let l2 = planner::lebesgue_constant(2);
    check("Lebesgue N=2", (l2 - 2f64.sqrt()).abs() <= 1e-6, format!("{l2:.6}"));

    // Lagrange remainder bound
    let mut worst: f64 = 0.0;
    for n in [2, 4, 6, 8] {
        let xi = planner::nodes(1.0, n);
        for mu in [1.3, 2.0, 5.0, 40.0] {
            let bound = planner::lagrange_coeff_bound(1.0, n, mu);
            for k in 1..1000 {
                let l = k as f64 / 1000.0;
                let c = planner::lagrange_error_coeffs(&[mu], &xi, l)?[0];
                // the remainder is a difference of O(1/(μ − λ)) terms, so it
                // cannot be resolved below a few ulps of that size
                let floor = 64.0 * f64::EPSILON / (mu - l);
                worst = worst.max(c.abs() / (bound + floor));
            }
        }
    }
    check("Lagrange coefficient bound", worst <= 1.0 + 1e-9, format!("max ratio {worst:.4}"));

    // σ_Q does not depend on the basis of the subspace
    let mut worst: f64 = 0.0;
    for trial in 0..10u64 {
        let n = 30;
        let a = common::random_spd(n, 700 + trial);
        let m = common::random_spd(n, 800 + trial);
        let q = DMatrix::from_fn(n, 8, |_, _| g.random::<f64>() * 2.0 - 1.0);
        let u = DMatrix::from_fn(8, 8, |_, _| g.random::<f64>() - 0.5).qr().q();
        let v = DMatrix::from_fn(8, 8, |_, _| g.random::<f64>() - 0.5).qr().q();
        let s = nalgebra::DVector::from_fn(8, |i, _| 10f64.powf(3.0 * i as f64 / 7.0));
        let c = u * DMatrix::from_diagonal(&s) * v.transpose();
        let qc = &q * c;
        let e1 = dense_eigenvalues(&(q.transpose() * &a * &q), &(q.transpose() * &m * &q))?;
        let e2 = dense_eigenvalues(&(qc.transpose() * &a * &qc), &(qc.transpose() * &m * &qc))?;
        for (x, y) in e1.iter().zip(&e2) {
            worst = worst.max((x - y).abs() / x.abs());
        }
    }
    check("basis independence", worst <= 1e-8, format!("{worst:.2e}"));

    let detail = if failed.is_empty() {
        format!("idempotence {idem:.1e}, adjointness {adj:.1e}, orthonormality {defect:.1e}, Cholesky {rec:.1e}, Lebesgue(50) {l50:.3}")
    } else {
        format!("failed: {}", failed.join("; "))
    };
    Ok(Outcome::new(failed.is_empty(), detail))
}

fn report(id: usize, name: &str, limit: Option<f64>, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let t = Instant::now();
    let out = f();
    let secs = t.elapsed().as_secs_f64();
    let in_time = limit.is_none_or(|l| secs < l);
    let (pass, detail) = match out {
        Ok(o) => (o.pass && in_time, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let limit = limit.map_or(String::new(), |l| format!(" limit {l} s"));
    println!("{} {id:>2} {name}: {detail} [{secs:.2} s{limit}]", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() -> ExitCode {
    let mut desk = match Desk::new() {
        Ok(d) => d,
        Err(e) => {
            println!("FAIL desk setup: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut results = Vec::new();
    results.push(report(1, "exact recovery", Some(10.0), exact_recovery));

    let mut trend = None;
    results.push(report(2, "bound dominance", Some(60.0), || {
        let (dominance, t) = convergence_sweep(&mut desk)?;
        trend = Some(t);
        Ok(dominance)
    }));
    results.push(report(3, "exponential trend", None, || {
        Ok(trend.unwrap_or_else(|| Outcome::new(false, "sweep did not run")))
    }));
    results.push(report(4, "optimizer consistency", Some(5.0), optimizer_consistency));
    results.push(report(5, "C_M lemma", Some(30.0), cm_lemma));
    results.push(report(6, "truncation control", Some(120.0), || truncation_control(&mut desk)));
    results.push(report(7, "CMS comparison", Some(120.0), || cms_comparison(&mut desk)));
    results.push(report(8, "recycling", None, || recycling(&desk)));
    results.push(report(9, "FEM sanity", None, fem_sanity));
    results.push(report(10, "component invariants", None, invariants));

    let failed = results.iter().filter(|&&p| !p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
