use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cpi::bench::{self, CMS_HEADER, CONVERGENCE_HEADER, SOLVE_HEADER, TIMING_HEADER};
use cpi::cpi::{cpi_solve, CpiOptions};
use cpi::io::{self, Manifest, BASIS_MAGIC};
use cpi::pencil::build_pencil;
use cpi::sparse::SymSparseMatrix;
use cpi::CpiError;

fn cpi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpi")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small desk problem with two perturbed versions.
fn generate(dir: &Path) -> PathBuf {
    let out = cpi(&["fem-gen", "--m", "8", "--versions", "2", "--lambda", "135", "--out", path(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("manifest.txt")
}

#[test]
fn generated_basis_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let man = generate(dir.path());
    let (b1, b2) = (dir.path().join("b1.cpib"), dir.path().join("b2.cpib"));
    for b in [&b1, &b2] {
        let out = cpi(&["build-basis", path(&man), "--gamma", "2.5", "--n", "3", "--output", path(b)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("k_c="));
    }
    let (x, y) = (fs::read(&b1).unwrap(), fs::read(&b2).unwrap());
    assert_eq!(&x[..4], BASIS_MAGIC);
    assert_eq!(x, y);
}

#[test]
fn saved_basis_solves_like_a_fresh_one() {
    let dir = tempfile::tempdir().unwrap();
    let man = Manifest::load(&generate(dir.path())).unwrap();
    let pencil = bench::load_problem(&man).unwrap();
    let plan = bench::make_plan(&man, &pencil, 2.5, 3).unwrap();
    let opts = CpiOptions::default();
    let (basis, _) = bench::run_build_basis(&pencil, &plan, &opts).unwrap();
    let file = dir.path().join("basis.cpib");
    io::save_basis(&file, &basis).unwrap();
    let loaded = io::load_basis(&file).unwrap();

    let versions = bench::load_versions(&man, &[]).unwrap();
    assert_eq!(versions.len(), 3);
    let direct = bench::run_solve(&basis, &versions, man.lambda, &opts).unwrap();
    let reloaded = bench::run_solve(&loaded, &versions, man.lambda, &opts).unwrap();
    assert_eq!(direct.exterior_reductions, 0);
    assert_eq!(reloaded.exterior_reductions, 0);
    assert!(!direct.rows.is_empty());
    assert_eq!(direct.rows, reloaded.rows);
    assert!(direct.rows.iter().all(|r| r.residual < 1e-4));
}

#[test]
fn modified_exterior_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let man = Manifest::load(&generate(dir.path())).unwrap();
    let pencil = bench::load_problem(&man).unwrap();
    let plan = bench::make_plan(&man, &pencil, 2.5, 2).unwrap();
    let opts = CpiOptions::default();
    let (basis, _) = bench::run_build_basis(&pencil, &plan, &opts).unwrap();

    let (a, m) = pencil.full().unwrap();
    let last = a.n() - 1;
    let bumped: Vec<_> =
        a.triplets().map(|(i, j, v)| if i == last && j == last { (i, j, 1.01 * v) } else { (i, j, v) }).collect();
    let other = build_pencil(SymSparseMatrix::from_triplets(a.n(), bumped).unwrap(), m.clone(), man.n1).unwrap();
    assert!(matches!(cpi_solve(&other, &plan, Some(&basis), &opts), Err(CpiError::BasisMismatch(_))));
    assert!(matches!(bench::run_solve(&basis, &[other], man.lambda, &opts), Err(CpiError::BasisMismatch(_))));
}

#[test]
fn compressed_dimension_stays_below_its_bound() {
    let dir = tempfile::tempdir().unwrap();
    let man = Manifest::load(&generate(dir.path())).unwrap();
    let pencil = bench::load_problem(&man).unwrap();
    for n in 1..=4 {
        let plan = bench::make_plan(&man, &pencil, 2.5, n).unwrap();
        let (basis, _) = bench::run_build_basis(&pencil, &plan, &CpiOptions::default()).unwrap();
        assert!(basis.k_c <= basis.k + n * basis.r, "N={n}: {} > {} + {n}*{}", basis.k_c, basis.k, basis.r);
    }
}

fn header_lines(file: &Path) -> Vec<String> {
    let text = fs::read_to_string(file).unwrap();
    let mut lines: Vec<String> = text.lines().take_while(|l| l.starts_with('#')).map(String::from).collect();
    lines.push(text.lines().find(|l| !l.starts_with('#')).unwrap().to_string());
    lines
}

#[test]
fn csv_outputs_have_versioned_headers() {
    let dir = tempfile::tempdir().unwrap();
    let man = generate(dir.path());
    let d = |name: &str| dir.path().join(name);
    let common = [path(&man), "--gamma", "2.5", "--n", "3"];
    let run = |extra: &[&str]| {
        let mut args: Vec<&str> = extra[..1].to_vec();
        args.extend(common);
        args.extend(&extra[1..]);
        let out = cpi(&args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["build-basis"]);
    run(&["solve", "--basis", path(&d("basis.cpib"))]);
    run(&["convergence", "--ns", "1,2"]);
    run(&["compare-cms", "--dims", "30,60"]);
    run(&["timing", "--repeats", "3"]);

    let solve = header_lines(&d("solve.csv"));
    assert_eq!(solve, ["# cpi solve schema v1", "# exterior_reductions=0", &SOLVE_HEADER.join(",")]);
    let conv = header_lines(&d("convergence.csv"));
    assert_eq!(conv[0], "# cpi convergence schema v1");
    assert_eq!(conv.last().unwrap(), &CONVERGENCE_HEADER.join(","));
    let cms = header_lines(&d("compare_cms.csv"));
    assert_eq!(cms[0], "# cpi compare-cms schema v1");
    assert_eq!(cms.last().unwrap(), &CMS_HEADER.join(","));
    let timing = header_lines(&d("timing.csv"));
    assert_eq!(timing[0], "# cpi timing schema v1");
    assert_eq!(timing.last().unwrap(), &TIMING_HEADER.join(","));

    // 15 significant digits
    let row = fs::read_to_string(d("solve.csv")).unwrap().lines().last().unwrap().to_string();
    let value = row.split(',').nth(2).unwrap();
    let mantissa = value.split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 15, "{value}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "a = A.mtx\nlambda\n").unwrap();
    assert_eq!(cpi(&["plan", path(&bad)]).status.code(), Some(1));
    assert_eq!(cpi(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(cpi(&["plan", path(&dir.path().join("missing.txt"))]).status.code(), Some(1));
    assert_eq!(cpi(&["--help"]).status.code(), Some(0));

    // indefinite stiffness: the exterior factorization fails
    fs::write(
        dir.path().join("A.mtx"),
        "%%MatrixMarket matrix coordinate real symmetric\n4 4 4\n1 1 2\n2 2 3\n3 3 -1\n4 4 5\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("M.mtx"),
        "%%MatrixMarket matrix coordinate real symmetric\n4 4 5\n1 1 1\n2 2 1\n3 3 1\n4 4 1\n3 2 0.1\n",
    )
    .unwrap();
    let man = dir.path().join("manifest.txt");
    fs::write(&man, "a = A.mtx\nm = M.mtx\nn1 = 2\nlambda = 4\n").unwrap();
    let out = cpi(&["build-basis", path(&man), "--gamma", "2", "--n", "2", "--alpha", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn plan_for_a_large_three_dimensional_profile() {
    let dir = tempfile::tempdir().unwrap();
    let man = dir.path().join("manifest.txt");
    fs::write(&man, "a = A.mtx\nm = M.mtx\nn1 = 1\nlambda = 3000\nd = 3\nn_gamma = 950\neta = 1e-6\nvol = 0.002\n")
        .unwrap();
    let out = cpi(&["plan", path(&man)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let get =
        |k: &str| -> f64 { text.lines().find_map(|l| l.strip_prefix(&format!("{k}="))).unwrap().parse().unwrap() };
    assert!(get("ntol") <= 1e-6);
    assert!(get("gamma") > 1.25);
    assert!(get("n") >= 1.0);
    assert_eq!(text.lines().find(|l| l.starts_with("vol_source=")), Some("vol_source=manifest"));
}

#[test]
fn flags_override_manifest_keys() {
    let dir = tempfile::tempdir().unwrap();
    let man = dir.path().join("manifest.txt");
    fs::write(&man, "a = A.mtx\nm = M.mtx\nn1 = 1\nlambda = 3000\nd = 3\nn_gamma = 950\neta = 1e-6\nvol = 0.002\n")
        .unwrap();
    let base = String::from_utf8(cpi(&["plan", path(&man)]).stdout).unwrap();
    let looser = String::from_utf8(cpi(&["plan", path(&man), "--eta", "1e-3"]).stdout).unwrap();
    let set = String::from_utf8(cpi(&["plan", path(&man), "--set", "eta=1e-3"]).stdout).unwrap();
    assert_ne!(base, looser);
    assert_eq!(looser, set);
    assert!(looser.contains("eta=1.00000000000000e-3"));
}
