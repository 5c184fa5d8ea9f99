//! File formats: Matrix Market matrices, flat `key=value` manifests, the
//! binary basis container and CSV number formatting.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::cpi::{BasisMode, CpiPlan, ReducedBasis};
use crate::error::{CpiError, Result};
use crate::pencil::ExteriorReduction;
use crate::sparse::SymSparseMatrix;

// ---------------------------------------------------------------- Matrix Market

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MmField {
    Real,
    Integer,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MmSymmetry {
    General,
    Symmetric,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> CpiError {
    CpiError::Parse(format!("line {line}: {msg}"))
}

/// Parses a square symmetric matrix from Matrix Market text.
///
/// Accepts `coordinate` (real, integer or pattern; general or symmetric) and
/// `array` (real or integer; general or symmetric) formats. General input is
/// checked for symmetry.
pub fn parse_matrix_market(text: &str) -> Result<SymSparseMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, banner) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
    let words: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(parse_err(1, "missing %%MatrixMarket matrix banner"));
    }
    let coordinate = match words[2].as_str() {
        "coordinate" => true,
        "array" => false,
        f => return Err(parse_err(1, format!("unsupported format '{f}'"))),
    };
    let field = match words[3].as_str() {
        "real" | "double" => MmField::Real,
        "integer" => MmField::Integer,
        "pattern" if coordinate => MmField::Pattern,
        f => return Err(parse_err(1, format!("unsupported field '{f}'"))),
    };
    let symmetry = match words[4].as_str() {
        "general" => MmSymmetry::General,
        "symmetric" => MmSymmetry::Symmetric,
        s => return Err(parse_err(1, format!("unsupported symmetry '{s}'"))),
    };
    let mut data = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (ln, size) = data.next().ok_or_else(|| parse_err(1, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|w| w.parse().map_err(|_| parse_err(ln, format!("bad size '{w}'"))))
        .collect::<Result<_>>()?;
    let (nrows, ncols) = match (coordinate, dims.as_slice()) {
        (true, [r, c, _]) | (false, [r, c]) => (*r, *c),
        _ => return Err(parse_err(ln, "wrong number of size fields")),
    };
    if nrows != ncols {
        return Err(CpiError::DimensionMismatch(format!("matrix is {nrows}x{ncols}, not square")));
    }
    let n = nrows;
    let value = |w: Option<&str>, ln: usize| -> Result<f64> {
        let w = w.ok_or_else(|| parse_err(ln, "missing value"))?;
        let v: f64 = match field {
            MmField::Integer => {
                w.parse::<i64>().map(|v| v as f64).map_err(|_| parse_err(ln, format!("bad integer '{w}'")))?
            }
            _ => w.parse().map_err(|_| parse_err(ln, format!("bad number '{w}'")))?,
        };
        if !v.is_finite() {
            return Err(parse_err(ln, "non-finite value"));
        }
        Ok(v)
    };
    let mut trip = Vec::new();
    if coordinate {
        let nnz = dims[2];
        trip.reserve(2 * nnz);
        for _ in 0..nnz {
            let (ln, l) = data.next().ok_or_else(|| parse_err(0, format!("expected {nnz} entries")))?;
            let mut it = l.split_whitespace();
            let mut index = || -> Result<usize> {
                let w = it.next().ok_or_else(|| parse_err(ln, "missing index"))?;
                let i: usize = w.parse().map_err(|_| parse_err(ln, format!("bad index '{w}'")))?;
                if i == 0 || i > n {
                    return Err(parse_err(ln, format!("index {i} outside 1..={n}")));
                }
                Ok(i - 1)
            };
            let (i, j) = (index()?, index()?);
            let v = if field == MmField::Pattern { 1.0 } else { value(it.next(), ln)? };
            if symmetry == MmSymmetry::Symmetric && j > i {
                return Err(parse_err(ln, "symmetric storage expects the lower triangle"));
            }
            trip.push((i, j, v));
            if symmetry == MmSymmetry::Symmetric && i != j {
                trip.push((j, i, v));
            }
        }
    } else {
        // column-major; symmetric arrays list the lower triangle only
        for j in 0..n {
            let start = if symmetry == MmSymmetry::Symmetric { j } else { 0 };
            for i in start..n {
                let (ln, l) = data.next().ok_or_else(|| parse_err(0, "array data ended early"))?;
                let v = value(l.split_whitespace().next(), ln)?;
                trip.push((i, j, v));
                if symmetry == MmSymmetry::Symmetric && i != j {
                    trip.push((j, i, v));
                }
            }
        }
    }
    if let Some((ln, _)) = data.next() {
        return Err(parse_err(ln, "trailing data after the declared entries"));
    }
    SymSparseMatrix::from_triplets(n, trip)
}

pub fn read_matrix_market(path: &Path) -> Result<SymSparseMatrix> {
    let text = fs::read_to_string(path).map_err(|e| CpiError::Parse(format!("{}: {e}", path.display())))?;
    parse_matrix_market(&text).map_err(|e| match e {
        CpiError::Parse(m) => CpiError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Lower triangle in `coordinate real symmetric` form. Values use the
/// shortest representation that reads back to the same `f64`.
pub fn write_matrix_market(path: &Path, x: &SymSparseMatrix) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let lower: Vec<_> = x.triplets().filter(|&(i, j, _)| j <= i).collect();
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(w, "{} {} {}", x.n(), x.n(), lower.len())?;
    for (i, j, v) in lower {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- manifest

/// Run configuration read from a flat `key=value` file. Paths are resolved
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub a: PathBuf,
    pub m: PathBuf,
    pub n1: usize,
    pub lambda: f64,
    pub eta: f64,
    pub d: u32,
    /// Exterior volume; calibrated from an eigenvalue count when absent.
    pub vol: Option<f64>,
    pub tol: f64,
    pub r: f64,
    pub out: PathBuf,
    /// Interface size for the cost model; defaults to the number of coupled
    /// interior unknowns.
    pub n_gamma: Option<usize>,
    pub gamma: Option<f64>,
    pub n: Option<usize>,
    /// Bound on `‖α‖`; derived from `h` or from `M` when absent.
    pub alpha: Option<f64>,
    /// Mesh size, used for the `‖M⁻¹‖ ≤ h⁻ᵈ` estimate.
    pub h: Option<f64>,
    /// Number of lowest eigenvalues reported in error columns.
    pub track: Option<usize>,
    /// Extra `(A, M)` pairs sharing the exterior blocks.
    pub versions: Vec<(PathBuf, PathBuf)>,
    pub seed: u64,
}

pub const MANIFEST_KEYS: &[&str] = &[
    "a", "m", "n1", "lambda", "eta", "d", "vol", "tol", "r", "out", "n_gamma", "gamma", "n", "alpha", "h", "track",
    "versions", "seed",
];

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CpiError::Parse(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base, &[])
    }

    /// Parses manifest text, then applies `overrides` in order.
    pub fn parse(text: &str, base: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| CpiError::Parse(format!("manifest line {}: expected key=value", ln + 1)))?;
            let k = k.trim().to_string();
            if !MANIFEST_KEYS.contains(&k.as_str()) {
                return Err(CpiError::Parse(format!("manifest line {}: unknown key '{k}'", ln + 1)));
            }
            if kv.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(CpiError::Parse(format!("manifest line {}: duplicate key '{k}'", ln + 1)));
            }
        }
        for (k, v) in overrides {
            if !MANIFEST_KEYS.contains(&k.as_str()) {
                return Err(CpiError::Parse(format!("unknown override key '{k}'")));
            }
            kv.insert(k.clone(), v.clone());
        }
        Self::from_map(&kv, base)
    }

    fn from_map(kv: &BTreeMap<String, String>, base: &Path) -> Result<Self> {
        fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<Option<T>> {
            kv.get(k)
                .map(|v| v.parse::<T>().map_err(|_| CpiError::Parse(format!("key '{k}': cannot parse '{v}'"))))
                .transpose()
        }
        fn need<T: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<T> {
            get(kv, k)?.ok_or_else(|| CpiError::Parse(format!("missing key '{k}'")))
        }
        let path = |p: &str| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else if p == Path::new(".") {
                base.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let a: String = need(kv, "a")?;
        let m: String = need(kv, "m")?;
        let versions = match kv.get("versions") {
            None => Vec::new(),
            Some(v) => v
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|pair| {
                    let parts: Vec<&str> = pair.split_whitespace().collect();
                    match parts.as_slice() {
                        [a, m] => Ok((path(a), path(m))),
                        _ => Err(CpiError::Parse(format!("version '{pair}' must be 'A_path M_path'"))),
                    }
                })
                .collect::<Result<_>>()?,
        };
        let out: Option<String> = get(kv, "out")?;
        let man = Manifest {
            a: path(&a),
            m: path(&m),
            n1: need(kv, "n1")?,
            lambda: need(kv, "lambda")?,
            eta: get(kv, "eta")?.unwrap_or(1e-6),
            d: get(kv, "d")?.unwrap_or(2),
            vol: get(kv, "vol")?,
            tol: get(kv, "tol")?.unwrap_or(0.0),
            r: get(kv, "r")?.unwrap_or(2.0),
            out: path(out.as_deref().unwrap_or(".")),
            n_gamma: get(kv, "n_gamma")?,
            gamma: get(kv, "gamma")?,
            n: get(kv, "n")?,
            alpha: get(kv, "alpha")?,
            h: get(kv, "h")?,
            track: get(kv, "track")?,
            versions,
            seed: get(kv, "seed")?.unwrap_or(7),
        };
        man.validate()?;
        Ok(man)
    }

    /// Range checks on every parameter.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CpiError::Parse(msg));
        if self.n1 == 0 {
            return bad("n1 must be positive".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be positive", self.lambda));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta = {} outside (0, 1)", self.eta));
        }
        if self.d != 2 && self.d != 3 {
            return bad(format!("d = {} must be 2 or 3", self.d));
        }
        if self.vol.is_some_and(|v| !(v > 0.0)) {
            return bad("vol must be positive".into());
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol = {} is negative", self.tol));
        }
        if !(self.r > 1.0 && self.r < 3.0) {
            return bad(format!("r = {} outside (1, 3)", self.r));
        }
        if self.gamma.is_some_and(|g| !(g > 1.0)) {
            return bad("gamma must exceed 1".into());
        }
        if self.n == Some(0) {
            return bad("n must be positive".into());
        }
        if self.alpha.is_some_and(|a| !(a >= 1.0)) {
            return bad("alpha must be at least 1".into());
        }
        if self.h.is_some_and(|h| !(h > 0.0)) {
            return bad("h must be positive".into());
        }
        Ok(())
    }

    /// Manifest text that parses back to the same values when written next
    /// to the referenced files.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| match p.strip_prefix(base) {
            Ok(r) if r.as_os_str().is_empty() => ".".to_string(),
            Ok(r) => r.display().to_string(),
            Err(_) => p.display().to_string(),
        };
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("a", rel(&self.a));
        put("m", rel(&self.m));
        put("n1", self.n1.to_string());
        put("lambda", format!("{:e}", self.lambda));
        put("eta", format!("{:e}", self.eta));
        put("d", self.d.to_string());
        if let Some(v) = self.vol {
            put("vol", format!("{v:e}"));
        }
        put("tol", format!("{:e}", self.tol));
        put("r", format!("{:e}", self.r));
        put("out", rel(&self.out));
        if let Some(v) = self.n_gamma {
            put("n_gamma", v.to_string());
        }
        if let Some(v) = self.gamma {
            put("gamma", format!("{v:e}"));
        }
        if let Some(v) = self.n {
            put("n", v.to_string());
        }
        if let Some(v) = self.alpha {
            put("alpha", format!("{v:e}"));
        }
        if let Some(v) = self.h {
            put("h", format!("{v:e}"));
        }
        if let Some(v) = self.track {
            put("track", v.to_string());
        }
        if !self.versions.is_empty() {
            let v: Vec<String> = self.versions.iter().map(|(a, m)| format!("{} {}", rel(a), rel(m))).collect();
            put("versions", v.join("; "));
        }
        put("seed", self.seed.to_string());
        s
    }
}

// ---------------------------------------------------------------- basis file

pub const BASIS_MAGIC: &[u8; 4] = b"CPIB";
pub const BASIS_VERSION: u32 = 1;

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: usize) -> Result<()> {
        Ok(self.w.write_all(&(v as u64).to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.w.write_all(&v.to_le_bytes())?)
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len())?;
        v.iter().try_for_each(|&x| self.f64(x))
    }
    fn dense(&mut self, x: &DMatrix<f64>) -> Result<()> {
        self.u64(x.nrows())?;
        self.u64(x.ncols())?;
        x.iter().try_for_each(|&v| self.f64(v))
    }
    fn sparse(&mut self, x: &SymSparseMatrix) -> Result<()> {
        self.u64(x.n())?;
        self.u64(x.nnz())?;
        for (i, j, v) in x.triplets() {
            self.u64(i)?;
            self.u64(j)?;
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CpiError::Parse("basis file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| CpiError::Parse("size field overflows".into()))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()?;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(CpiError::Parse("basis file is truncated".into()));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn dense(&mut self) -> Result<DMatrix<f64>> {
        let r = self.u64()?;
        let c = self.u64()?;
        if r.saturating_mul(c).saturating_mul(8) > self.buf.len() - self.pos {
            return Err(CpiError::Parse("basis file is truncated".into()));
        }
        let data: Vec<f64> = (0..r * c).map(|_| self.f64()).collect::<Result<_>>()?;
        Ok(DMatrix::from_vec(r, c, data))
    }
    fn sparse(&mut self) -> Result<SymSparseMatrix> {
        let n = self.u64()?;
        let nnz = self.len(24)?;
        let trip: Vec<_> = (0..nnz)
            .map(|_| {
                let i = self.u64()?;
                let j = self.u64()?;
                Ok((i, j, self.f64()?))
            })
            .collect::<Result<_>>()?;
        SymSparseMatrix::from_triplets(n, trip)
    }
}

/// Serializes a basis: magic, format version, plan, dimensions, singular
/// values, `Q̃22`, the cached reduced exterior blocks and the exterior
/// blocks the basis was built for. All numbers little-endian.
pub fn write_basis<W: Write>(w: W, b: &ReducedBasis) -> Result<()> {
    let mut w = Writer { w };
    w.w.write_all(BASIS_MAGIC)?;
    w.w.write_all(&BASIS_VERSION.to_le_bytes())?;
    let p = &b.plan;
    w.f64(p.lambda)?;
    w.f64(p.gamma)?;
    w.u64(p.n)?;
    w.f64s(&p.xi)?;
    w.f64(p.tol)?;
    w.f64(p.alpha_bound)?;
    w.u64(match p.mode {
        BasisMode::Auto => 0,
        BasisMode::Dense => 1,
        BasisMode::MatrixFree => 2,
    })?;
    w.u64(b.k)?;
    w.u64(b.k_c)?;
    w.u64(b.r)?;
    w.f64s(&b.sigma)?;
    w.f64s(&b.spectrum)?;
    w.dense(&b.reduction.q22)?;
    w.dense(&b.reduction.a22)?;
    w.dense(&b.reduction.m22)?;
    w.sparse(&b.exterior.0)?;
    w.sparse(&b.exterior.1)?;
    w.w.flush()?;
    Ok(())
}

pub fn read_basis<R: Read>(mut r: R) -> Result<ReducedBasis> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != BASIS_MAGIC {
        return Err(CpiError::Parse("not a basis file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != BASIS_VERSION {
        return Err(CpiError::Parse(format!("basis format version {version}, expected {BASIS_VERSION}")));
    }
    let lambda = r.f64()?;
    let gamma = r.f64()?;
    let n = r.u64()?;
    let xi = r.f64s()?;
    let tol = r.f64()?;
    let alpha_bound = r.f64()?;
    let mode = match r.u64()? {
        0 => BasisMode::Auto,
        1 => BasisMode::Dense,
        2 => BasisMode::MatrixFree,
        m => return Err(CpiError::Parse(format!("unknown basis mode {m}"))),
    };
    let mut plan = CpiPlan::new(lambda, gamma, n.max(1), tol, alpha_bound)
        .map_err(|e| CpiError::Parse(format!("stored plan is invalid: {e}")))?;
    plan.n = n;
    plan.xi = xi;
    plan.mode = mode;
    let k = r.u64()?;
    let k_c = r.u64()?;
    let rr = r.u64()?;
    let sigma = r.f64s()?;
    let spectrum = r.f64s()?;
    let q22 = r.dense()?;
    let a22r = r.dense()?;
    let m22r = r.dense()?;
    let a22 = r.sparse()?;
    let m22 = r.sparse()?;
    if r.pos != buf.len() {
        return Err(CpiError::Parse("trailing bytes after basis data".into()));
    }
    let consistent = q22.ncols() == k_c
        && q22.nrows() == a22.n()
        && a22.n() == m22.n()
        && a22r.shape() == (k_c, k_c)
        && m22r.shape() == (k_c, k_c)
        && sigma.len() == k_c;
    if !consistent {
        return Err(CpiError::Parse("basis file dimensions are inconsistent".into()));
    }
    Ok(ReducedBasis {
        reduction: ExteriorReduction { q22: Arc::new(q22), a22: Arc::new(a22r), m22: Arc::new(m22r) },
        k,
        k_c,
        r: rr,
        sigma,
        spectrum,
        plan,
        exterior: (Arc::new(a22), Arc::new(m22)),
    })
}

pub fn save_basis(path: &Path, b: &ReducedBasis) -> Result<()> {
    write_basis(BufWriter::new(fs::File::create(path)?), b)
}

pub fn load_basis(path: &Path) -> Result<ReducedBasis> {
    let f = fs::File::open(path).map_err(|e| CpiError::Parse(format!("{}: {e}", path.display())))?;
    read_basis(std::io::BufReader::new(f))
}

// ---------------------------------------------------------------- CSV numbers

/// Fifteen significant digits in scientific notation.
pub fn fmt15(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.14e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
