//! Experiment runners behind the command-line tool. Each runner returns a
//! report that can be written as CSV with a fixed, versioned header.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::cms::{cms_build, cms_reduce};
use crate::cpi::{
    build_basis, build_method_matrix, build_sample_space, recycle_reduced_blocks, solve_target, CpiOptions, CpiPlan,
    ReducedBasis,
};
use crate::eigen::{count_below, dense_eigenvalues, lanczos, LanczosOptions, Target};
use crate::error::{CpiError, Result};
use crate::fem::{self, FemProblem, PerturbationSpec};
use crate::io::{fmt15, read_matrix_market, write_matrix_market, Manifest};
use crate::pencil::{build_pencil, BlockPencil, Diag22};
use crate::planner::{self, OptimalParameters, ProblemProfile};

/// Version of every CSV layout written here.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const SOLVE_HEADER: &[&str] = &["version", "index", "eigenvalue", "residual"];
pub const CONVERGENCE_HEADER: &[&str] =
    &["gamma", "n", "k", "k_c", "index", "reference", "eigenvalue", "rel_error", "bound"];
pub const CMS_HEADER: &[&str] = &["dim", "cpi_dim", "cpi_max_rel_error", "cms_max_rel_error", "cpi_feasible"];
pub const TIMING_HEADER: &[&str] = &["phase", "median_s", "min_s", "max_s", "variance_s2", "repeats"];

/// Pencils up to this size get a dense reference spectrum.
pub const DENSE_REFERENCE_LIMIT: usize = 2000;
pub const REFERENCE_TOL: f64 = 1e-11;

fn write_csv<W: Write>(
    mut w: W,
    kind: &str,
    meta: &[(&str, String)],
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    writeln!(w, "# cpi {kind} schema v{CSV_SCHEMA_VERSION}")?;
    for (k, v) in meta {
        writeln!(w, "# {k}={v}")?;
    }
    let mut c = csv::Writer::from_writer(w);
    c.write_record(header)?;
    for r in rows {
        c.write_record(r)?;
    }
    c.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- inputs

pub fn load_pencil(a: &Path, m: &Path, n1: usize) -> Result<BlockPencil> {
    build_pencil(read_matrix_market(a)?, read_matrix_market(m)?, n1)
}

pub fn load_problem(man: &Manifest) -> Result<BlockPencil> {
    load_pencil(&man.a, &man.m, man.n1)
}

/// The manifest's pencil followed by every listed version.
pub fn load_versions(man: &Manifest, extra: &[(PathBuf, PathBuf)]) -> Result<Vec<BlockPencil>> {
    let mut out = vec![load_problem(man)?];
    for (a, m) in man.versions.iter().chain(extra) {
        out.push(load_pencil(a, m, man.n1)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMethod {
    Dense,
    Lanczos,
}

impl std::fmt::Display for ReferenceMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReferenceMethod::Dense => write!(f, "dense"),
            ReferenceMethod::Lanczos => write!(f, "lanczos tol={REFERENCE_TOL:e}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reference {
    pub values: Vec<f64>,
    pub method: ReferenceMethod,
}

/// The `count` lowest eigenvalues of the full pencil.
pub fn reference_spectrum(pencil: &BlockPencil, count: usize) -> Result<Reference> {
    if pencil.n() <= DENSE_REFERENCE_LIMIT {
        let mut values = dense_eigenvalues(&pencil.a().to_dense(), &pencil.m().to_dense())?;
        values.truncate(count);
        Ok(Reference { values, method: ReferenceMethod::Dense })
    } else {
        let e = lanczos(pencil, Target::Smallest(count), &LanczosOptions::with_tol(REFERENCE_TOL))?;
        Ok(Reference { values: e.values, method: ReferenceMethod::Lanczos })
    }
}

/// Number of eigenvalues tracked in error columns: the manifest's `track`,
/// or every eigenvalue below `Λ`.
pub fn tracked_count(man: &Manifest, pencil: &BlockPencil) -> Result<usize> {
    match man.track {
        Some(t) => Ok(t),
        None => crate::eigen::count_below_robust(pencil, man.lambda),
    }
}

/// `‖M⁻¹‖` from `h⁻ᵈ` when a mesh size is known, else by inverse iteration.
pub fn m_inv_norm(man: &Manifest, pencil: &BlockPencil) -> Result<f64> {
    match (man.h, pencil.full()) {
        (Some(h), _) => Ok(planner::m_inv_norm_from_mesh(h, man.d, 1.0)),
        (None, Some((_, m))) => planner::m_inv_norm_power(m, 200),
        (None, None) => Err(CpiError::DimensionMismatch("pencil is already reduced".into())),
    }
}

/// The manifest's `alpha`, or the `‖α‖` bound for `n` points.
pub fn alpha_for(man: &Manifest, pencil: &BlockPencil, n: usize) -> Result<f64> {
    match man.alpha {
        Some(a) => Ok(a),
        None => Ok(planner::alpha_bound(n, man.lambda, m_inv_norm(man, pencil)?)),
    }
}

pub fn make_plan(man: &Manifest, pencil: &BlockPencil, gamma: f64, n: usize) -> Result<CpiPlan> {
    CpiPlan::new(man.lambda, gamma, n, man.tol, alpha_for(man, pencil, n)?)
}

// ---------------------------------------------------------------- plan

#[derive(Debug, Clone)]
pub struct PlanReport {
    pub profile: ProblemProfile,
    pub params: OptimalParameters,
    pub bound: f64,
    /// `K̂(γΛ) + n_Γ N`
    pub predicted_dim: f64,
    /// Whether `vol` came from an eigenvalue count.
    pub calibrated: bool,
}

/// Profile from the manifest, filling `vol` and `n_Γ` from the pencil when
/// they are not given.
pub fn profile(man: &Manifest, pencil: Option<&BlockPencil>) -> Result<(ProblemProfile, bool)> {
    let need =
        || pencil.ok_or_else(|| CpiError::Parse("manifest lacks vol or n_gamma and no pencil was loaded".into()));
    let (vol, calibrated) = match man.vol {
        Some(v) => (v, false),
        None => {
            let p = need()?;
            let (a22, m22) =
                p.exterior().ok_or_else(|| CpiError::DimensionMismatch("exterior blocks are not sparse".into()))?;
            let count = count_below(a22, m22, man.lambda)?;
            (planner::weyl_calibrate(man.d, count, man.lambda)?, true)
        }
    };
    let n_gamma = match man.n_gamma {
        Some(g) => g,
        None => need()?.coupled_interior().len(),
    };
    let profile = ProblemProfile { d: man.d, vol, n_gamma, lambda: man.lambda, r: man.r, eta: man.eta };
    profile.validate()?;
    Ok((profile, calibrated))
}

pub fn run_plan(man: &Manifest, pencil: Option<&BlockPencil>) -> Result<PlanReport> {
    let (profile, calibrated) = profile(man, pencil)?;
    let params = planner::optimize_parameters(&profile)?;
    let bound = planner::theoretical_bound(profile.lambda, params.gamma, params.n, 1.0, 1.0)?;
    let k = planner::weyl_count(profile.d, profile.vol, params.gamma * profile.lambda)?;
    let predicted_dim = k + (profile.n_gamma as f64) * params.n as f64;
    Ok(PlanReport { profile, params, bound, predicted_dim, calibrated })
}

impl PlanReport {
    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let lines = [
            ("gamma", fmt15(self.params.gamma)),
            ("n", self.params.n.to_string()),
            ("n_real", fmt15(self.params.n_real)),
            ("ntol", fmt15(self.params.ntol)),
            ("bound", fmt15(self.bound)),
            ("dim_v2", fmt15(self.predicted_dim)),
            ("vol", fmt15(self.profile.vol)),
            ("vol_source", if self.calibrated { "weyl".into() } else { "manifest".into() }),
            ("n_gamma", self.profile.n_gamma.to_string()),
            ("eta", fmt15(self.profile.eta)),
        ];
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

// ---------------------------------------------------------------- build-basis

#[derive(Debug, Clone)]
pub struct BuildSummary {
    pub k: usize,
    pub k_c: usize,
    pub r: usize,
    pub sigma_head: Vec<f64>,
    pub seconds: f64,
}

impl BuildSummary {
    pub fn to_kv(&self) -> String {
        let head: Vec<String> = self.sigma_head.iter().map(|&s| fmt15(s)).collect();
        format!(
            "k={}\nk_c={}\nr={}\nsigma_head={}\nseconds={}\n",
            self.k,
            self.k_c,
            self.r,
            head.join(","),
            fmt15(self.seconds)
        )
    }
}

pub fn run_build_basis(
    pencil: &BlockPencil,
    plan: &CpiPlan,
    opts: &CpiOptions,
) -> Result<(ReducedBasis, BuildSummary)> {
    let t = Instant::now();
    let b = build_basis(pencil, plan, opts)?;
    let seconds = t.elapsed().as_secs_f64();
    let summary =
        BuildSummary { k: b.k, k_c: b.k_c, r: b.r, sigma_head: b.sigma.iter().take(5).copied().collect(), seconds };
    Ok((b, summary))
}

// ---------------------------------------------------------------- solve

#[derive(Debug, Clone, PartialEq)]
pub struct SolveRow {
    pub version: usize,
    pub index: usize,
    pub value: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub rows: Vec<SolveRow>,
    /// Reduced pencils whose exterior blocks were formed rather than taken
    /// from the basis cache. Zero when recycling worked for every version.
    pub exterior_reductions: usize,
    pub reduce_seconds: f64,
    pub solve_seconds: f64,
}

/// Solves every version on one basis, reusing its reduced exterior blocks.
pub fn run_solve(
    basis: &ReducedBasis,
    versions: &[BlockPencil],
    lambda: f64,
    opts: &CpiOptions,
) -> Result<SolveReport> {
    let mut rows = Vec::new();
    let mut exterior_reductions = 0;
    let (mut reduce_seconds, mut solve_seconds) = (0.0, 0.0);
    for (v, pencil) in versions.iter().enumerate() {
        basis.check_exterior(pencil)?;
        let (a21, m21) =
            pencil.coupling().ok_or_else(|| CpiError::DimensionMismatch("coupling blocks are not sparse".into()))?;
        let t = Instant::now();
        let red = recycle_reduced_blocks(basis, Arc::clone(&pencil.a().b11), Arc::clone(&pencil.m().b11), a21, m21)?;
        reduce_seconds += t.elapsed().as_secs_f64();
        let shared = matches!(&red.a().b22, Diag22::Dense(d) if Arc::ptr_eq(d, &basis.reduction.a22))
            && matches!(&red.m().b22, Diag22::Dense(d) if Arc::ptr_eq(d, &basis.reduction.m22));
        if !shared {
            exterior_reductions += 1;
        }
        let t = Instant::now();
        let eig = solve_target(&red, Target::Below(lambda), opts)?;
        solve_seconds += t.elapsed().as_secs_f64();
        let q = build_method_matrix(basis, pencil.n1());
        for (i, &value) in eig.values.iter().enumerate() {
            let x = q.apply(eig.vectors.column(i).as_slice());
            let residual = crate::eigen::relative_residual(pencil, value, &x);
            rows.push(SolveRow { version: v, index: i + 1, value, residual });
        }
    }
    Ok(SolveReport { rows, exterior_reductions, reduce_seconds, solve_seconds })
}

impl SolveReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.version.to_string(), r.index.to_string(), fmt15(r.value), fmt15(r.residual)])
            .collect();
        let meta = [("exterior_reductions", self.exterior_reductions.to_string())];
        write_csv(w, "solve", &meta, SOLVE_HEADER, &rows)
    }
}

// ---------------------------------------------------------------- convergence

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub gamma: f64,
    pub n: usize,
    pub k: usize,
    pub k_c: usize,
    pub index: usize,
    pub reference: f64,
    pub value: f64,
    pub rel_error: f64,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub reference: ReferenceMethod,
}

/// Relative errors of the `reference.len()` lowest eigenvalues of the
/// reduced pencil. Missing approximations count as infinite error.
fn relative_errors(reduced: &BlockPencil, reference: &[f64], opts: &CpiOptions) -> Result<Vec<(f64, f64)>> {
    let eig = solve_target(reduced, Target::Smallest(reference.len()), opts)?;
    Ok(reference
        .iter()
        .enumerate()
        .map(|(i, &r)| match eig.values.get(i) {
            Some(&v) => (v, (v - r).abs() / r),
            None => (f64::NAN, f64::INFINITY),
        })
        .collect())
}

fn reduce_with(pencil: &BlockPencil, basis: &ReducedBasis) -> Result<BlockPencil> {
    let (a21, m21) =
        pencil.coupling().ok_or_else(|| CpiError::DimensionMismatch("coupling blocks are not sparse".into()))?;
    recycle_reduced_blocks(basis, Arc::clone(&pencil.a().b11), Arc::clone(&pencil.m().b11), a21, m21)
}

/// Errors of the tracked eigenvalues for every `(γ, N)` pair, next to the
/// a-priori bound (with `2 tol` added when the basis was truncated).
pub fn run_convergence(
    man: &Manifest,
    pencil: &BlockPencil,
    track: usize,
    gammas: &[f64],
    ns: &[usize],
    opts: &CpiOptions,
) -> Result<ConvergenceReport> {
    let reference = reference_spectrum(pencil, track)?;
    convergence_against(man, pencil, &reference, gammas, ns, opts)
}

/// [`run_convergence`] with a precomputed reference; every reference value
/// is tracked.
pub fn convergence_against(
    man: &Manifest,
    pencil: &BlockPencil,
    reference: &Reference,
    gammas: &[f64],
    ns: &[usize],
    opts: &CpiOptions,
) -> Result<ConvergenceReport> {
    let mut rows = Vec::new();
    for &gamma in gammas {
        for &n in ns {
            let plan = make_plan(man, pencil, gamma, n)?;
            let basis = build_basis(pencil, &plan, opts)?;
            let reduced = reduce_with(pencil, &basis)?;
            let bound = basis.plan.error_bound(basis.is_truncated());
            for (i, (value, rel_error)) in relative_errors(&reduced, &reference.values, opts)?.into_iter().enumerate() {
                rows.push(ConvergenceRow {
                    gamma,
                    n,
                    k: basis.k,
                    k_c: basis.k_c,
                    index: i + 1,
                    reference: reference.values[i],
                    value,
                    rel_error,
                    bound,
                });
            }
        }
    }
    Ok(ConvergenceReport { rows, reference: reference.method })
}

impl ConvergenceReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    fmt15(r.gamma),
                    r.n.to_string(),
                    r.k.to_string(),
                    r.k_c.to_string(),
                    r.index.to_string(),
                    fmt15(r.reference),
                    fmt15(r.value),
                    fmt15(r.rel_error),
                    fmt15(r.bound),
                ]
            })
            .collect();
        write_csv(w, "convergence", &[("reference", self.reference.to_string())], CONVERGENCE_HEADER, &rows)
    }

    /// Largest relative error per `(γ, N)`, in row order.
    pub fn max_errors(&self) -> Vec<(f64, usize, f64, f64)> {
        let mut out: Vec<(f64, usize, f64, f64)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(l) if l.0 == r.gamma && l.1 == r.n => l.2 = l.2.max(r.rel_error),
                _ => out.push((r.gamma, r.n, r.rel_error, r.bound)),
            }
        }
        out
    }
}

// ---------------------------------------------------------------- compare-cms

#[derive(Debug, Clone, PartialEq)]
pub struct CmsRow {
    pub dim: usize,
    /// Exterior dimension CPI actually used; `None` when `dim < K`.
    pub cpi_dim: Option<usize>,
    pub cpi_error: Option<f64>,
    pub cms_error: f64,
}

#[derive(Debug, Clone)]
pub struct CmsReport {
    pub rows: Vec<CmsRow>,
    pub k: usize,
    pub reference: ReferenceMethod,
}

/// Largest relative error over the tracked eigenvalues for CPI (sample
/// space of `plan`, cut to each dimension) and CMS with as many exterior
/// modes. At `dim ≥ n2` neither method reduces anything and both solve the
/// full pencil.
pub fn run_compare_cms(
    pencil: &BlockPencil,
    plan: &CpiPlan,
    track: usize,
    dims: &[usize],
    opts: &CpiOptions,
) -> Result<CmsReport> {
    let reference = reference_spectrum(pencil, track)?;
    compare_cms_against(pencil, plan, &reference, dims, opts)
}

/// [`run_compare_cms`] with a precomputed reference.
pub fn compare_cms_against(
    pencil: &BlockPencil,
    plan: &CpiPlan,
    reference: &Reference,
    dims: &[usize],
    opts: &CpiOptions,
) -> Result<CmsReport> {
    let max_err = |e: Vec<(f64, f64)>| e.into_iter().map(|x| x.1).fold(0.0, f64::max);
    let space = build_sample_space(pencil, plan, opts)?;
    let n2 = pencil.n2();
    let mut full_error = None;
    let mut rows = Vec::new();
    for &dim in dims {
        if dim >= n2 {
            let err = match full_error {
                Some(e) => e,
                None => {
                    let e = max_err(relative_errors(pencil, &reference.values, opts)?);
                    full_error = Some(e);
                    e
                }
            };
            rows.push(CmsRow { dim, cpi_dim: Some(n2), cpi_error: Some(err), cms_error: err });
            continue;
        }
        let (cpi_dim, cpi_error) = if dim < space.k() {
            (None, None)
        } else {
            let basis = space.truncate_to(dim)?;
            let reduced = reduce_with(pencil, &basis)?;
            (Some(basis.k_c), Some(max_err(relative_errors(&reduced, &reference.values, opts)?)))
        };
        let cms = cms_build(pencil, dim)?;
        let reduced = cms_reduce(pencil, &cms)?;
        let cms_error = max_err(relative_errors(&reduced, &reference.values, opts)?);
        rows.push(CmsRow { dim, cpi_dim, cpi_error, cms_error });
    }
    Ok(CmsReport { rows, k: space.k(), reference: reference.method })
}

impl CmsReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.dim.to_string(),
                    opt(r.cpi_dim.map(|d| d.to_string())),
                    opt(r.cpi_error.map(fmt15)),
                    fmt15(r.cms_error),
                    r.cpi_dim.is_some().to_string(),
                ]
            })
            .collect();
        let meta = [("reference", self.reference.to_string()), ("k", self.k.to_string())];
        write_csv(w, "compare-cms", &meta, CMS_HEADER, &rows)
    }
}

// ---------------------------------------------------------------- timing

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStats {
    pub phase: String,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub variance: f64,
    pub repeats: usize,
}

impl PhaseStats {
    pub fn from_samples(phase: &str, samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        let mean = s.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 { s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { phase: phase.into(), median, min: s[0], max: s[n - 1], variance, repeats: n }
    }
}

pub const TIMING_PHASES: [&str; 5] = ["full_solve", "basis_build", "reduce", "reduced_solve", "cpi_total"];

#[derive(Debug, Clone)]
pub struct TimingReport {
    pub phases: Vec<PhaseStats>,
    /// Median full solve over median reduced solve.
    pub speedup: f64,
}

impl TimingReport {
    pub fn phase(&self, name: &str) -> Option<&PhaseStats> {
        self.phases.iter().find(|p| p.phase == name)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .phases
            .iter()
            .map(|p| {
                vec![
                    p.phase.clone(),
                    fmt15(p.median),
                    fmt15(p.min),
                    fmt15(p.max),
                    fmt15(p.variance),
                    p.repeats.to_string(),
                ]
            })
            .collect();
        write_csv(w, "timing", &[("speedup", fmt15(self.speedup))], TIMING_HEADER, &rows)
    }
}

/// Wall-clock phases over `repeats` runs: the full eigensolve, and the CPI
/// pipeline split into basis build, reduction and reduced solve.
pub fn run_timing(pencil: &BlockPencil, plan: &CpiPlan, repeats: usize, opts: &CpiOptions) -> Result<TimingReport> {
    if repeats < 3 {
        return Err(CpiError::Parse(format!("timing needs at least 3 repeats, got {repeats}")));
    }
    let mut samples = vec![Vec::with_capacity(repeats); TIMING_PHASES.len()];
    for _ in 0..repeats {
        let t = Instant::now();
        lanczos(pencil, Target::Below(plan.lambda), &opts.reduced)?;
        samples[0].push(t.elapsed().as_secs_f64());

        let total = Instant::now();
        let t = Instant::now();
        let basis = build_basis(pencil, plan, opts)?;
        samples[1].push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let reduced = reduce_with(pencil, &basis)?;
        samples[2].push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        solve_target(&reduced, Target::Below(plan.lambda), opts)?;
        samples[3].push(t.elapsed().as_secs_f64());
        samples[4].push(total.elapsed().as_secs_f64());
    }
    let phases: Vec<PhaseStats> =
        TIMING_PHASES.iter().zip(&samples).map(|(p, s)| PhaseStats::from_samples(p, s)).collect();
    let speedup = phases[0].median / phases[3].median;
    Ok(TimingReport { phases, speedup })
}

// ---------------------------------------------------------------- fem-gen

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FemKind {
    /// 2 × 1 rectangle with a slanted interface.
    Desk,
    /// Unit square split down the middle.
    Square,
}

impl std::str::FromStr for FemKind {
    type Err = CpiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(FemKind::Desk),
            "square" => Ok(FemKind::Square),
            _ => Err(CpiError::Parse(format!("unknown mesh kind '{s}' (desk or square)"))),
        }
    }
}

/// Area of the exterior triangles.
pub fn exterior_area(problem: &FemProblem) -> f64 {
    let mesh = &problem.mesh;
    mesh.tris
        .iter()
        .zip(&mesh.interior_tri)
        .filter(|(_, &inside)| !inside)
        .map(|(t, _)| {
            let [a, b, c] = t.map(|v| mesh.coords[v]);
            0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs()
        })
        .sum()
}

/// Writes the base pencil, `versions` interior-perturbed copies and a
/// manifest into `dir`; returns the manifest path.
pub fn run_fem_gen(kind: FemKind, m: usize, lambda: f64, versions: usize, seed: u64, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let problem = match kind {
        FemKind::Desk => fem::desk_rectangle(m)?,
        FemKind::Square => fem::unit_square(m)?,
    };
    let (a, mm) = problem.pencil.full().expect("assembled pencils keep their full matrices");
    write_matrix_market(&dir.join("A.mtx"), a)?;
    write_matrix_market(&dir.join("M.mtx"), mm)?;
    let spec = PerturbationSpec { seed, ..PerturbationSpec::default() };
    let mut pairs = Vec::new();
    for (i, v) in fem::make_versions(&problem, &spec, versions)?.iter().enumerate() {
        let (a, mm) = v.pencil.full().expect("assembled");
        let (pa, pm) = (dir.join(format!("A_v{}.mtx", i + 1)), dir.join(format!("M_v{}.mtx", i + 1)));
        write_matrix_market(&pa, a)?;
        write_matrix_market(&pm, mm)?;
        pairs.push((pa, pm));
    }
    let man = Manifest {
        a: dir.join("A.mtx"),
        m: dir.join("M.mtx"),
        n1: problem.pencil.n1(),
        lambda,
        eta: 1e-6,
        d: 2,
        vol: Some(exterior_area(&problem)),
        tol: 0.0,
        r: 2.0,
        out: dir.to_path_buf(),
        n_gamma: Some(problem.n_interface),
        gamma: None,
        n: None,
        alpha: None,
        h: Some(problem.h),
        track: None,
        versions: pairs,
        seed,
    };
    let path = dir.join("manifest.txt");
    std::fs::write(&path, man.to_text(dir))?;
    Ok(path)
}
