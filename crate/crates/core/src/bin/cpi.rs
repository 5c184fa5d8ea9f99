use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpi::bench::{self, FemKind};
use cpi::cpi::{CpiOptions, CpiPlan};
use cpi::io::{self, Manifest};
use cpi::pencil::BlockPencil;
use cpi::{CpiError, Result};

#[derive(Parser)]
#[command(name = "cpi", version, about = "Reduced eigensolves for families of split symmetric pencils")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Manifest file plus overrides; every flag replaces the key of the same name.
#[derive(Args)]
struct Input {
    manifest: PathBuf,
    /// Override any manifest key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    track: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Choose γ and N for the manifest's target tolerance.
    Plan {
        #[command(flatten)]
        input: Input,
    },
    /// Build and save the exterior basis.
    BuildBasis {
        #[command(flatten)]
        input: Input,
        /// Basis file; defaults to `<out>/basis.cpib`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Solve every version on a saved basis.
    Solve {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        basis: PathBuf,
        /// Extra version as `A_path,M_path`; repeatable.
        #[arg(long = "version-pair", value_name = "A,M")]
        versions: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Errors against the reference spectrum over a (γ, N) grid.
    Convergence {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_delimiter = ',', default_value = "2.5")]
        gammas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
        ns: Vec<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// CPI against component mode synthesis at matched exterior dimension.
    CompareCms {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Phase timings of the full and the reduced solve.
    Timing {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a finite element pencil, perturbed versions and a manifest.
    FemGen {
        #[arg(long, default_value = "desk")]
        kind: String,
        /// Cells per unit length.
        #[arg(long, default_value_t = 32)]
        m: usize,
        #[arg(long, default_value_t = 135.0)]
        lambda: f64,
        #[arg(long, default_value_t = 3)]
        versions: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Input {
    fn manifest(&self) -> Result<Manifest> {
        let text = fs::read_to_string(&self.manifest)
            .map_err(|e| CpiError::Parse(format!("{}: {e}", self.manifest.display())))?;
        let base = self.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut kv = Vec::new();
        for s in &self.set {
            let (k, v) =
                s.split_once('=').ok_or_else(|| CpiError::Parse(format!("--set expects key=value, got '{s}'")))?;
            kv.push((k.trim().to_string(), v.trim().to_string()));
        }
        let flags = [
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("eta", self.eta.map(|v| v.to_string())),
            ("tol", self.tol.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("n", self.n.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("track", self.track.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        kv.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        Manifest::parse(&text, &base, &kv)
    }
}

/// `γ` and `N` from the manifest, or from the planner where missing.
fn plan_for(man: &Manifest, pencil: &BlockPencil) -> Result<CpiPlan> {
    let (gamma, n) = match (man.gamma, man.n) {
        (Some(g), Some(n)) => (g, n),
        (g, n) => {
            let p = bench::run_plan(man, Some(pencil))?;
            (g.unwrap_or(p.params.gamma), n.unwrap_or(p.params.n as usize))
        }
    };
    bench::make_plan(man, pencil, gamma, n)
}

fn output(man: &Manifest, given: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let p = given.unwrap_or_else(|| man.out.join(name));
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(p)
}

fn write_report(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    let opts = CpiOptions::default();
    match cmd {
        Cmd::Plan { input } => {
            let man = input.manifest()?;
            let pencil =
                if man.vol.is_none() || man.n_gamma.is_none() { Some(bench::load_problem(&man)?) } else { None };
            let report = bench::run_plan(&man, pencil.as_ref())?;
            std::io::stdout().write_all(report.to_kv().as_bytes())?;
        }
        Cmd::BuildBasis { input, output: out } => {
            let man = input.manifest()?;
            let pencil = bench::load_problem(&man)?;
            let plan = plan_for(&man, &pencil)?;
            let (basis, summary) = bench::run_build_basis(&pencil, &plan, &opts)?;
            let path = output(&man, out, "basis.cpib")?;
            io::save_basis(&path, &basis)?;
            print!("{}", summary.to_kv());
            println!("wrote {}", path.display());
        }
        Cmd::Solve { input, basis, versions, output: out } => {
            let man = input.manifest()?;
            let extra = versions
                .iter()
                .map(|s| {
                    let (a, m) =
                        s.split_once(',').ok_or_else(|| CpiError::Parse(format!("version '{s}' must be A,M")))?;
                    Ok((PathBuf::from(a), PathBuf::from(m)))
                })
                .collect::<Result<Vec<_>>>()?;
            let pencils = bench::load_versions(&man, &extra)?;
            let basis = io::load_basis(&basis)?;
            let report = bench::run_solve(&basis, &pencils, man.lambda, &opts)?;
            let path = output(&man, out, "solve.csv")?;
            write_report(&path, |w| report.write_csv(w))?;
        }
        Cmd::Convergence { input, gammas, ns, output: out } => {
            let man = input.manifest()?;
            let pencil = bench::load_problem(&man)?;
            let track = bench::tracked_count(&man, &pencil)?;
            let report = bench::run_convergence(&man, &pencil, track, &gammas, &ns, &opts)?;
            let path = output(&man, out, "convergence.csv")?;
            write_report(&path, |w| report.write_csv(w))?;
        }
        Cmd::CompareCms { input, dims, output: out } => {
            let man = input.manifest()?;
            let pencil = bench::load_problem(&man)?;
            let plan = plan_for(&man, &pencil)?;
            let track = bench::tracked_count(&man, &pencil)?;
            let report = bench::run_compare_cms(&pencil, &plan, track, &dims, &opts)?;
            let path = output(&man, out, "compare_cms.csv")?;
            write_report(&path, |w| report.write_csv(w))?;
        }
        Cmd::Timing { input, repeats, output: out } => {
            let man = input.manifest()?;
            let pencil = bench::load_problem(&man)?;
            let plan = plan_for(&man, &pencil)?;
            let report = bench::run_timing(&pencil, &plan, repeats, &opts)?;
            let path = output(&man, out, "timing.csv")?;
            write_report(&path, |w| report.write_csv(w))?;
            println!("speedup={}", io::fmt15(report.speedup));
        }
        Cmd::FemGen { kind, m, lambda, versions, seed, out } => {
            let kind: FemKind = kind.parse()?;
            let path = bench::run_fem_gen(kind, m, lambda, versions, seed, &out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
