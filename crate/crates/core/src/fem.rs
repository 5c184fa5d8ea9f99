//! P1 finite elements for the Dirichlet Laplacian on a rectangle, split by a
//! straight interface into an interior and an exterior part.
//!
//! Triangles are assigned to a side by their centroid. Vertices shared by
//! triangles of both sides form the interface and belong to the exterior.
//! When the segment runs through mesh vertices the interface lies exactly on
//! it; otherwise it is the staircase of vertices closest to it.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CpiError, Result};
use crate::pencil::{build_pencil, BlockPencil};
use crate::sparse::SymSparseMatrix;

/// Directed line segment; the interior lies to its left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub from: [f64; 2],
    pub to: [f64; 2],
}

impl Segment {
    pub fn new(from: [f64; 2], to: [f64; 2]) -> Self {
        Self { from, to }
    }

    /// Positive on the left of the line through the segment.
    fn side(&self, p: [f64; 2]) -> f64 {
        let d = [self.to[0] - self.from[0], self.to[1] - self.from[1]];
        d[0] * (p[1] - self.from[1]) - d[1] * (p[0] - self.from[0])
    }

    fn distance(&self, p: [f64; 2]) -> f64 {
        let d = [self.to[0] - self.from[0], self.to[1] - self.from[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = (((p[0] - self.from[0]) * d[0] + (p[1] - self.from[1]) * d[1]) / len2).clamp(0.0, 1.0);
        let q = [self.from[0] + t * d[0] - p[0], self.from[1] + t * d[1] - p[1]];
        (q[0] * q[0] + q[1] * q[1]).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub coords: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub tris: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
    pub interface: Vec<bool>,
    /// Whether each triangle lies on the interior side.
    pub interior_tri: Vec<bool>,
    pub width: f64,
    pub height: f64,
}

/// Structured `nx × ny` grid on `[0, width] × [0, height]`, each cell cut
/// along its rising diagonal.
pub fn rectangle_mesh(width: f64, height: f64, nx: usize, ny: usize, interface: Segment) -> Result<TriMesh> {
    if nx < 2 || ny < 2 || !(width > 0.0 && height > 0.0) {
        return Err(CpiError::DomainError(format!("mesh {nx}x{ny} on {width}x{height} is too small")));
    }
    if !segment_enters(&interface, width, height) {
        return Err(CpiError::DegenerateInterface);
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut boundary = Vec::with_capacity(coords.capacity());
    for j in 0..=ny {
        for i in 0..=nx {
            coords.push([width * i as f64 / nx as f64, height * j as f64 / ny as f64]);
            boundary.push(i == 0 || j == 0 || i == nx || j == ny);
        }
    }
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let interior_tri: Vec<bool> = tris
        .iter()
        .map(|t| {
            let c = centroid(&coords, t);
            interface.side(c) > 0.0
        })
        .collect();
    let n_in = interior_tri.iter().filter(|&&b| b).count();
    if n_in == 0 || n_in == tris.len() {
        return Err(CpiError::DegenerateInterface);
    }
    let mut touches = vec![[false; 2]; coords.len()];
    for (t, &inside) in tris.iter().zip(&interior_tri) {
        for &v in t {
            touches[v][inside as usize] = true;
        }
    }
    let interface_flags: Vec<bool> = touches.iter().map(|s| s[0] && s[1]).collect();
    let on_line = coords.iter().zip(&interface_flags).filter(|(p, &f)| f && interface.distance(**p) <= 1e-12).count();
    log::debug!("interface: {} vertices, {} on the segment", interface_flags.iter().filter(|&&f| f).count(), on_line);
    Ok(TriMesh { coords, tris, boundary, interface: interface_flags, interior_tri, width, height })
}

fn segment_enters(s: &Segment, w: f64, h: f64) -> bool {
    let inside = |p: [f64; 2]| p[0] > 0.0 && p[0] < w && p[1] > 0.0 && p[1] < h;
    // sample the segment; the mesh scale makes this ample
    (0..=1000).any(|k| {
        let t = k as f64 / 1000.0;
        inside([s.from[0] + t * (s.to[0] - s.from[0]), s.from[1] + t * (s.to[1] - s.from[1])])
    })
}

fn centroid(coords: &[[f64; 2]], t: &[usize; 3]) -> [f64; 2] {
    let mut c = [0.0; 2];
    for &v in t {
        c[0] += coords[v][0] / 3.0;
        c[1] += coords[v][1] / 3.0;
    }
    c
}

/// Exact P1 stiffness and mass of one triangle.
pub fn element_matrices(p: [[f64; 2]; 3]) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det.abs();
    let mut b = [0.0; 3];
    let mut c = [0.0; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        b[i] = p[j][1] - p[k][1];
        c[i] = p[k][0] - p[j][0];
    }
    let mut ke = [[0.0; 3]; 3];
    let mut me = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            ke[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
            me[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
        }
    }
    (ke, me)
}

/// Stiffness and mass over all vertices, boundary included, with a
/// per-triangle coefficient on the stiffness.
pub fn assemble_vertices(mesh: &TriMesh, coefficient: &[f64]) -> Result<(SymSparseMatrix, SymSparseMatrix)> {
    let n = mesh.coords.len();
    let mut ta = Vec::with_capacity(9 * mesh.tris.len());
    let mut tm = Vec::with_capacity(9 * mesh.tris.len());
    for (t, &k) in mesh.tris.iter().zip(coefficient) {
        let (ke, me) = element_matrices([mesh.coords[t[0]], mesh.coords[t[1]], mesh.coords[t[2]]]);
        for i in 0..3 {
            for j in 0..3 {
                ta.push((t[i], t[j], k * ke[i][j]));
                tm.push((t[i], t[j], me[i][j]));
            }
        }
    }
    Ok((SymSparseMatrix::from_triplets(n, ta)?, SymSparseMatrix::from_triplets(n, tm)?))
}

#[derive(Debug, Clone)]
pub struct FemProblem {
    pub pencil: BlockPencil,
    pub mesh: TriMesh,
    /// Longest element edge.
    pub h: f64,
    /// Pencil index of each mesh vertex; `None` for Dirichlet vertices.
    pub dof: Vec<Option<usize>>,
    /// Mesh vertex of each pencil index.
    pub vertex: Vec<usize>,
    /// Free interface vertices.
    pub n_interface: usize,
    /// Stiffness coefficient per triangle.
    pub coefficient: Vec<f64>,
}

/// Assembles the pencil with unit coefficient.
pub fn assemble_laplace(mesh: TriMesh) -> Result<FemProblem> {
    let coefficient = vec![1.0; mesh.tris.len()];
    assemble_with(mesh, coefficient)
}

fn assemble_with(mesh: TriMesh, coefficient: Vec<f64>) -> Result<FemProblem> {
    let n = mesh.coords.len();
    let mut adj = vec![Vec::new(); n];
    for t in &mesh.tris {
        for i in 0..3 {
            for j in 0..3 {
                if i != j && !adj[t[i]].contains(&t[j]) {
                    adj[t[i]].push(t[j]);
                }
            }
        }
    }
    // side of every non-interface vertex, from any of its triangles
    let mut inside = vec![false; n];
    for (t, &s) in mesh.tris.iter().zip(&mesh.interior_tri) {
        for &v in t {
            if s && !mesh.interface[v] {
                inside[v] = true;
            }
        }
    }
    // graph distance from the interface orders each side outward from it
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for v in 0..n {
        if mesh.interface[v] {
            dist[v] = 0;
            queue.push_back(v);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    let free: Vec<usize> = (0..n).filter(|&v| !mesh.boundary[v]).collect();
    if free.is_empty() {
        return Err(CpiError::EmptyProblem);
    }
    let mut interior: Vec<usize> = free.iter().copied().filter(|&v| inside[v]).collect();
    let mut exterior: Vec<usize> = free.iter().copied().filter(|&v| !inside[v]).collect();
    interior.sort_by_key(|&v| (dist[v], v));
    exterior.sort_by_key(|&v| (dist[v], v));
    if interior.is_empty() || exterior.is_empty() {
        return Err(CpiError::DegenerateInterface);
    }
    let n1 = interior.len();
    let vertex: Vec<usize> = interior.into_iter().chain(exterior).collect();
    let mut dof = vec![None; n];
    for (i, &v) in vertex.iter().enumerate() {
        dof[v] = Some(i);
    }
    let (av, mv) = assemble_vertices(&mesh, &coefficient)?;
    let restrict = |x: &SymSparseMatrix| -> Result<SymSparseMatrix> {
        let t: Vec<_> = x.triplets().filter_map(|(i, j, v)| Some((dof[i]?, dof[j]?, v))).collect();
        SymSparseMatrix::from_triplets(vertex.len(), t)
    };
    let pencil = build_pencil(restrict(&av)?, restrict(&mv)?, n1)?;
    let h = mesh
        .tris
        .iter()
        .flat_map(|t| (0..3).map(move |i| (t[i], t[(i + 1) % 3])))
        .map(|(a, b)| {
            let (p, q) = (mesh.coords[a], mesh.coords[b]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    let n_interface = (0..n).filter(|&v| mesh.interface[v] && !mesh.boundary[v]).count();
    Ok(FemProblem { pencil, mesh, h, dof, vertex, n_interface, coefficient })
}

impl FemProblem {
    /// Triangles whose stiffness only reaches the interior block.
    pub fn strictly_interior(&self, t: usize) -> bool {
        self.mesh.interior_tri[t] && self.mesh.tris[t].iter().all(|&v| !self.mesh.interface[v])
    }

    /// Copy with the stiffness of the listed triangles scaled.
    pub fn perturb(&self, scaling: &[(usize, f64)]) -> Result<FemProblem> {
        let mut coefficient = self.coefficient.clone();
        for &(t, f) in scaling {
            if t >= coefficient.len() || !self.strictly_interior(t) {
                return Err(CpiError::PerturbationTouchesExterior(t));
            }
            coefficient[t] *= f;
        }
        assemble_with(self.mesh.clone(), coefficient)
    }
}

/// Random interior coefficient fields with factors drawn from `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self { lo: 0.5, hi: 2.0, seed: 7 }
    }
}

/// `count` versions sharing the exterior and coupling blocks of `problem`.
pub fn make_versions(problem: &FemProblem, spec: &PerturbationSpec, count: usize) -> Result<Vec<FemProblem>> {
    if !(spec.lo > 0.0 && spec.lo <= spec.hi) {
        return Err(CpiError::DomainError(format!("factor range [{}, {}] is invalid", spec.lo, spec.hi)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tris: Vec<usize> = (0..problem.mesh.tris.len()).filter(|&t| problem.strictly_interior(t)).collect();
    (0..count)
        .map(|_| {
            let scaling: Vec<(usize, f64)> =
                tris.iter().map(|&t| (t, spec.lo + (spec.hi - spec.lo) * rng.random::<f64>())).collect();
            problem.perturb(&scaling)
        })
        .collect()
}

pub const DESK_INTERFACE: Segment = Segment { from: [0.25, 0.0], to: [1.25, 1.0] };

/// Dirichlet eigenvalues `π²(m²/a² + n²/b²)` of an `a × b` rectangle, the
/// `count` smallest in ascending order.
pub fn rectangle_eigenvalues(a: f64, b: f64, count: usize) -> Vec<f64> {
    let top = count + 2;
    let mut v: Vec<f64> = (1..=top)
        .flat_map(|m| (1..=top).map(move |n| PI * PI * ((m * m) as f64 / (a * a) + (n * n) as f64 / (b * b))))
        .collect();
    v.sort_by(f64::total_cmp);
    v.truncate(count);
    v
}

/// The 2 × 1 rectangle used throughout the experiments, `m` cells per unit
/// length (a multiple of 4). The interface runs from `(0.25, 0)` to
/// `(1.25, 1)` along cell diagonals, so every interface vertex lies on it.
pub fn desk_rectangle(m: usize) -> Result<FemProblem> {
    if !m.is_multiple_of(4) {
        return Err(CpiError::DomainError(format!("{m} cells per unit do not resolve the interface")));
    }
    let mesh = rectangle_mesh(2.0, 1.0, 2 * m, m, DESK_INTERFACE)?;
    assemble_laplace(mesh)
}

/// Unit square split down the middle, `m` cells per side.
pub fn unit_square(m: usize) -> Result<FemProblem> {
    let mesh = rectangle_mesh(1.0, 1.0, m, m, Segment::new([0.5, 0.0], [0.5, 1.0]))?;
    assemble_laplace(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::dense_eigenvalues;

    #[test]
    fn reference_triangle() {
        let (k, m) = element_matrices([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let want = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - want[i][j]).abs() < 1e-15);
                let wm = 0.5 / 12.0 * if i == j { 2.0 } else { 1.0 };
                assert!((m[i][j] - wm).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_by_quadrature() {
        // edge-midpoint rule is exact for quadratics
        let p = [[0.2, 0.1], [1.3, 0.4], [0.5, 0.9]];
        let (_, m) = element_matrices(p);
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs();
        let mids = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                let q: f64 = mids.iter().map(|l| l[i] * l[j]).sum::<f64>() * area / 3.0;
                assert!((q - m[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn small_mesh_counts() {
        let mesh = rectangle_mesh(1.0, 1.0, 2, 2, Segment::new([0.5, 0.0], [0.5, 1.0])).unwrap();
        assert_eq!(mesh.tris.len(), 8);
        assert_eq!(mesh.coords.len(), 9);
        let inner = (0..9).filter(|&v| mesh.interface[v] && !mesh.boundary[v]).count();
        assert_eq!(inner, 1);
        let big = rectangle_mesh(1.0, 1.0, 64, 64, Segment::new([0.0, 0.0], [1.0, 1.0])).unwrap();
        assert_eq!(big.tris.len(), 2 * 64 * 64);
        assert_eq!(big.coords.len(), 65 * 65);
    }

    #[test]
    fn bad_interface() {
        let r = rectangle_mesh(1.0, 1.0, 4, 4, Segment::new([2.0, 2.0], [3.0, 3.0]));
        assert!(matches!(r, Err(CpiError::DegenerateInterface)));
    }

    #[test]
    fn mass_partition_of_unity() {
        let mesh = rectangle_mesh(2.0, 1.0, 12, 6, Segment::new([0.5, 0.0], [0.8, 1.0])).unwrap();
        let (_, m) = assemble_vertices(&mesh, &vec![1.0; mesh.tris.len()]).unwrap();
        let total: f64 = m.triplets().map(|(_, _, v)| v).sum();
        assert!((total - 2.0).abs() < 1e-12 * 2.0);
    }

    #[test]
    fn coupling_only_near_interface() {
        let p = desk_rectangle(8).unwrap();
        let (a21, _) = p.pencil.coupling().unwrap();
        for (i, j, _) in a21.triplets() {
            let ve = p.vertex[p.pencil.n1() + i];
            let vi = p.vertex[j];
            assert!(p.mesh.interface[ve], "exterior row {ve} is not an interface vertex");
            assert!(!p.mesh.interface[vi]);
        }
        for v in 0..p.mesh.coords.len() {
            if p.mesh.interface[v] {
                assert!(DESK_INTERFACE.distance(p.mesh.coords[v]) < 1e-12);
            }
        }
        let ranks = crate::pencil::interface_rank(&p.pencil, 1e-10);
        assert_eq!(ranks, p.n_interface);
    }

    #[test]
    fn galerkin_upper_bounds() {
        let p = desk_rectangle(8).unwrap();
        let fem = dense_eigenvalues(&p.pencil.a().to_dense(), &p.pencil.m().to_dense()).unwrap();
        let exact = rectangle_eigenvalues(2.0, 1.0, 10);
        for (f, e) in fem.iter().zip(&exact) {
            assert!(f >= e);
        }
    }

    #[test]
    fn versions_share_exterior() {
        let p = desk_rectangle(8).unwrap();
        let vs = make_versions(&p, &PerturbationSpec::default(), 3).unwrap();
        let (a22, m22) = p.pencil.exterior().unwrap();
        let (a21, m21) = p.pencil.coupling().unwrap();
        for v in &vs {
            let (b22, n22) = v.pencil.exterior().unwrap();
            let (b21, n21) = v.pencil.coupling().unwrap();
            assert!(a22.triplets().eq(b22.triplets()));
            assert!(m22.triplets().eq(n22.triplets()));
            assert!(a21.triplets().eq(b21.triplets()));
            assert!(m21.triplets().eq(n21.triplets()));
            assert!(p.pencil.m().b11.triplets().eq(v.pencil.m().b11.triplets()));
            assert!(!p.pencil.a().b11.triplets().eq(v.pencil.a().b11.triplets()));
        }
        let same = p.perturb(&[]).unwrap();
        assert!(p.pencil.a().b11.triplets().eq(same.pencil.a().b11.triplets()));
        let ext = (0..p.mesh.tris.len()).find(|&t| !p.strictly_interior(t)).unwrap();
        assert!(matches!(p.perturb(&[(ext, 2.0)]), Err(CpiError::PerturbationTouchesExterior(_))));
    }
}
