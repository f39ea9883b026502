//! Periodic meshing of the level sets `{e = a}` and surface quadrature.
//!
//! The torus is sampled on a cell-centred grid (`x_i = -pi + (i + 1/2) h`),
//! so no grid node ever sits on a critical point of `e`. Every grid cell is
//! split into the six Kuhn tetrahedra sharing the main diagonal; the split is
//! the same in every cell, so neighbouring cells agree on their shared faces
//! and the extracted surface is a closed combinatorial manifold without any
//! ambiguous configurations. Mesh vertices are exact roots of `e - a` along
//! the crossing grid edge (safeguarded Newton), so they lie on the level set to
//! machine precision while staying on their edge.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dispersion::{self, critical_distance, torus_delta, CurvatureSample, TorusPoint, Vec3};
use crate::par;
use crate::{Error, Result};

/// Smallest admissible resolution.
pub const MIN_RESOLUTION: usize = 16;
/// Levels closer than this to a critical value of `e` are rejected.
pub const MIN_LEVEL_DISTANCE: f64 = 0.05;
// So that e.g. 2.05 counts as exactly 0.05 away from 2.
const LEVEL_SLACK: f64 = 1e-12;
/// Target residual `|e(v) - a|` for mesh vertices.
pub const SNAP_TOLERANCE: f64 = 1e-9;

const KUHN_TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Triangulated level set `{e = a}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SurfaceMesh {
    pub level: f64,
    pub resolution: usize,
    pub vertices: Vec<TorusPoint>,
    pub triangles: Vec<[u32; 3]>,
    pub geometry: Vec<CurvatureSample>,
    pub areas: Vec<f64>,
}

impl SurfaceMesh {
    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Triangle vertices as unwrapped coordinates relative to the first
    /// vertex (which is in the canonical cell).
    pub fn triangle_points(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        let p0 = self.vertices[a as usize].vec();
        let p1 = p0 + torus_delta(&p0, &self.vertices[b as usize].vec());
        let p2 = p0 + torus_delta(&p0, &self.vertices[c as usize].vec());
        [p0, p1, p2]
    }

    /// Longest triangle edge.
    pub fn max_edge(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [p0, p1, p2] = self.triangle_points(t);
                (p1 - p0).norm().max((p2 - p1).norm()).max((p0 - p2).norm())
            })
            .fold(0.0, f64::max)
    }

    fn edge_counts(&self) -> HashMap<(u32, u32), u32> {
        let mut counts = HashMap::with_capacity(self.triangles.len() * 3 / 2);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Number of edges not shared by exactly two triangles.
    pub fn boundary_edge_count(&self) -> usize {
        self.edge_counts().values().filter(|&&c| c != 2).count()
    }

    /// `V - E + F` of the triangulation.
    pub fn euler_characteristic(&self) -> i64 {
        let e = self.edge_counts().len() as i64;
        self.vertices.len() as i64 - e + self.triangles.len() as i64
    }

    /// Largest `|e(v) - a|` over the vertices.
    pub fn max_level_residual(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| (dispersion::eval_e(&v.vec()) - self.level).abs())
            .fold(0.0, f64::max)
    }

    /// Per-vertex `1/|grad e|`, the density of the coarea measure.
    pub fn coarea_density(&self) -> Vec<f64> {
        self.geometry.iter().map(|g| 1.0 / g.grad_norm).collect()
    }

    /// Per-vertex Gauss curvature.
    pub fn gauss(&self) -> Vec<f64> {
        self.geometry.iter().map(|g| g.gauss).collect()
    }
}

/// Samples of `e` on the cell-centred `N^3` grid, reusable for many levels.
#[derive(Clone, Debug)]
pub struct Mesher {
    n: usize,
    h: f64,
    values: Vec<f64>,
    cell_min: Vec<f64>,
    cell_max: Vec<f64>,
}

/// Coordinate of grid index `i` at resolution `n`.
#[inline]
pub fn grid_coord(i: usize, n: usize) -> f64 {
    -PI + (i as f64 + 0.5) * (2.0 * PI / n as f64)
}

impl Mesher {
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_RESOLUTION {
            return Err(Error::ResolutionTooLow(n, MIN_RESOLUTION));
        }
        let cos: Vec<f64> = (0..n).map(|i| grid_coord(i, n).cos()).collect();
        let values: Vec<f64> = (0..n * n * n)
            .map(|idx| {
                let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
                3.0 - cos[i] - cos[j] - cos[k]
            })
            .collect();
        let mut mesher = Self {
            n,
            h: 2.0 * PI / n as f64,
            values,
            cell_min: Vec::new(),
            cell_max: Vec::new(),
        };
        let (lo, hi): (Vec<f64>, Vec<f64>) = par::map_range(n * n * n, |c| {
            let corners = mesher.cell_corner_values(c);
            corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            })
        })
        .into_iter()
        .unzip();
        mesher.cell_min = lo;
        mesher.cell_max = hi;
        Ok(mesher)
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Grid samples of `e`, index `(i * n + j) * n + k`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    fn node(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.n;
        ((i % n) * n + (j % n)) * n + (k % n)
    }

    #[inline]
    fn cell_corner_nodes(&self, cell: usize) -> [usize; 8] {
        let n = self.n;
        let (i, j, k) = (cell / (n * n), (cell / n) % n, cell % n);
        let mut out = [0; 8];
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = self.node(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
        }
        out
    }

    #[inline]
    fn cell_corner_values(&self, cell: usize) -> [f64; 8] {
        let nodes = self.cell_corner_nodes(cell);
        nodes.map(|g| self.values[g])
    }

    fn node_position(&self, g: usize) -> Vec3 {
        let n = self.n;
        Vec3::new(
            grid_coord(g / (n * n), n),
            grid_coord((g / n) % n, n),
            grid_coord(g % n, n),
        )
    }

    /// Extracts `{e = a}`, rejecting levels near critical values. Level 3 is
    /// admissible: it is a regular value (its only defect is the eight flat
    /// umbilics).
    pub fn extract(&self, a: f64) -> Result<SurfaceMesh> {
        let d = critical_distance(a);
        if !(0.0..=6.0).contains(&a) || d < MIN_LEVEL_DISTANCE - LEVEL_SLACK {
            return Err(Error::DegenerateLevel {
                level: a,
                distance: d,
            });
        }
        let raw = self.extract_raw(a);
        let geometry = raw
            .vertices
            .iter()
            .map(|v| dispersion::curvature(&v.vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(SurfaceMesh {
            level: a,
            resolution: self.n,
            vertices: raw.vertices,
            triangles: raw.triangles,
            geometry,
            areas: raw.areas,
        })
    }

    /// Extraction without the level check or per-vertex geometry; used for
    /// coarea profiles that must reach up to the critical values.
    pub(crate) fn extract_raw(&self, a: f64) -> RawMesh {
        let n = self.n;
        // Pass 1: triangles as edge keys, per x-slab.
        let slabs: Vec<Vec<[(usize, usize); 3]>> = par::map_range(n, |i| {
            let mut tris = Vec::new();
            for cell in i * n * n..(i + 1) * n * n {
                if !(self.cell_max[cell] > a && self.cell_min[cell] <= a) {
                    continue;
                }
                let nodes = self.cell_corner_nodes(cell);
                for tet in KUHN_TETS {
                    self.march_tet(tet.map(|c| nodes[c]), a, &mut tris);
                }
            }
            tris
        });
        // Pass 2: deterministic vertex numbering in order of first use.
        let mut index: HashMap<(usize, usize), u32> = HashMap::new();
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut triangles: Vec<[u32; 3]> = Vec::new();
        for tri in slabs.into_iter().flatten() {
            let ids = tri.map(|key| {
                *index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    (edges.len() - 1) as u32
                })
            });
            triangles.push(ids);
        }
        // Pass 3: edge roots.
        let vertices: Vec<TorusPoint> = par::map_slice(&edges, |&(g0, g1)| {
            let p0 = self.node_position(g0);
            let p1 = p0 + torus_delta(&p0, &self.node_position(g1));
            TorusPoint::from_vec(&edge_root(&p0, &p1, self.values[g0] - a, self.values[g1] - a, a))
        });
        // Pass 4: orientation along grad e and areas.
        let oriented: Vec<([u32; 3], f64)> = par::map_slice(&triangles, |&t| {
            let p0 = vertices[t[0] as usize].vec();
            let d1 = torus_delta(&p0, &vertices[t[1] as usize].vec());
            let d2 = torus_delta(&p0, &vertices[t[2] as usize].vec());
            let cross = d1.cross(&d2);
            let centroid = p0 + (d1 + d2) / 3.0;
            let t = if cross.dot(&dispersion::gradient(&centroid)) < 0.0 {
                [t[0], t[2], t[1]]
            } else {
                t
            };
            (t, 0.5 * cross.norm())
        });
        let (triangles, areas) = oriented.into_iter().unzip();
        RawMesh {
            vertices,
            triangles,
            areas,
        }
    }

    fn march_tet(&self, nodes: [usize; 4], a: f64, out: &mut Vec<[(usize, usize); 3]>) {
        let inside: Vec<usize> = (0..4).filter(|&c| self.values[nodes[c]] > a).collect();
        let outside: Vec<usize> = (0..4).filter(|&c| self.values[nodes[c]] <= a).collect();
        let key = |x: usize, y: usize| {
            let (g0, g1) = (nodes[x], nodes[y]);
            (g0.min(g1), g0.max(g1))
        };
        match inside.len() {
            1 => {
                let p = inside[0];
                out.push([key(p, outside[0]), key(p, outside[1]), key(p, outside[2])]);
            }
            3 => {
                let q = outside[0];
                out.push([key(q, inside[0]), key(q, inside[1]), key(q, inside[2])]);
            }
            2 => {
                let (p0, p1) = (inside[0], inside[1]);
                let (q0, q1) = (outside[0], outside[1]);
                let quad = [key(p0, q0), key(p0, q1), key(p1, q1), key(p1, q0)];
                out.push([quad[0], quad[1], quad[2]]);
                out.push([quad[0], quad[2], quad[3]]);
            }
            _ => {}
        }
    }
}

/// Mesh without per-vertex geometry.
#[derive(Clone, Debug)]
pub(crate) struct RawMesh {
    pub vertices: Vec<TorusPoint>,
    pub triangles: Vec<[u32; 3]>,
    pub areas: Vec<f64>,
}

/// Root of `e - a` on the segment `p0 -> p1` given the end residuals (of
/// opposite sign, or zero at an end).
fn edge_root(p0: &Vec3, p1: &Vec3, f0: f64, f1: f64, a: f64) -> Vec3 {
    if f0 == 0.0 {
        return *p0;
    }
    if f1 == 0.0 {
        return *p1;
    }
    let dir = p1 - p0;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let (mut flo, _fhi) = (f0, f1);
    let mut t = f0 / (f0 - f1);
    for _ in 0..80 {
        let x = p0 + dir * t;
        let f = dispersion::eval_e(&x) - a;
        if f.abs() <= 1e-14 {
            break;
        }
        if (f > 0.0) == (flo > 0.0) {
            lo = t;
            flo = f;
        } else {
            hi = t;
        }
        let df = dispersion::gradient(&x).dot(&dir);
        let newton = t - f / df;
        t = if df != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-16 {
            break;
        }
    }
    p0 + dir * t
}

/// Extracts `{e = a}` at resolution `n`.
pub fn extract_surface(a: f64, n: usize) -> Result<SurfaceMesh> {
    if n < MIN_RESOLUTION {
        return Err(Error::ResolutionTooLow(n, MIN_RESOLUTION));
    }
    let d = critical_distance(a);
    if !(0.0..=6.0).contains(&a) || d < MIN_LEVEL_DISTANCE - LEVEL_SLACK {
        return Err(Error::DegenerateLevel {
            level: a,
            distance: d,
        });
    }
    Mesher::new(n)?.extract(a)
}

/// Values that can be integrated over a mesh with the vertex-mean rule.
pub trait Density: Copy + Default + std::ops::Add<Output = Self> + std::ops::Mul<f64, Output = Self> {}
impl Density for f64 {}
impl Density for Complex64 {}

/// Sum over triangles of (mean of the three vertex values) x area.
pub fn integrate_surface<T: Density>(mesh: &SurfaceMesh, f: &[T]) -> T {
    assert_eq!(f.len(), mesh.vertices.len(), "density must cover every vertex");
    mesh.triangles
        .iter()
        .zip(&mesh.areas)
        .fold(T::default(), |acc, (t, &area)| {
            acc + (f[t[0] as usize] + f[t[1] as usize] + f[t[2] as usize]) * (area / 3.0)
        })
}

/// `Phi(a) = int_{Sigma_a} dm / |grad e|` on a grid of levels, computed by
/// mesh quadrature and, independently, by a histogram of `e` over the grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoareaProfile {
    pub resolution: usize,
    pub bin_width: f64,
    /// Bin centres covering `[0, 6]`.
    pub levels: Vec<f64>,
    /// Mesh-quadrature values at the bin centres.
    pub mesh_phi: Vec<f64>,
    /// Histogram values: cell volume x count / bin width.
    pub histogram_phi: Vec<f64>,
}

impl CoareaProfile {
    /// Midpoint-rule integral of the mesh values over `[0, 6]`.
    pub fn total_mass_mesh(&self) -> f64 {
        self.mesh_phi.iter().sum::<f64>() * self.bin_width
    }

    pub fn total_mass_histogram(&self) -> f64 {
        self.histogram_phi.iter().sum::<f64>() * self.bin_width
    }

    /// Histogram value of the bin containing `a`.
    pub fn histogram_at(&self, a: f64) -> f64 {
        let b = ((a / self.bin_width).floor() as usize).min(self.levels.len() - 1);
        self.histogram_phi[b]
    }
}

/// Histogram estimate of `Phi` with `bins` bins on `[0, 6]` from the
/// cell-centred `n^3` grid.
pub fn coarea_histogram(n: usize, bins: usize) -> Vec<f64> {
    let width = 6.0 / bins as f64;
    let cos: Vec<f64> = (0..n).map(|i| grid_coord(i, n).cos()).collect();
    let mut counts = vec![0u64; bins];
    for &ci in &cos {
        for &cj in &cos {
            for &ck in &cos {
                let e = 3.0 - ci - cj - ck;
                let b = ((e / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
    }
    let cell = (2.0 * PI / n as f64).powi(3);
    counts.into_iter().map(|c| c as f64 * cell / width).collect()
}

/// Mesh-quadrature value of `Phi(a)`; valid arbitrarily close to (but not at)
/// critical values.
pub fn coarea_phi(mesher: &Mesher, a: f64) -> f64 {
    let raw = mesher.extract_raw(a);
    let inv: Vec<f64> = raw
        .vertices
        .iter()
        .map(|v| 1.0 / dispersion::gradient(&v.vec()).norm().max(1e-300))
        .collect();
    raw.triangles
        .iter()
        .zip(&raw.areas)
        .map(|(t, &area)| (inv[t[0] as usize] + inv[t[1] as usize] + inv[t[2] as usize]) * area / 3.0)
        .sum()
}

/// Coarea profile with both estimators.
pub fn coarea_profile(n: usize, bins: usize) -> Result<CoareaProfile> {
    if n < 64 {
        return Err(Error::ResolutionTooLow(n, 64));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("coarea profile needs at least one bin".into()));
    }
    let width = 6.0 / bins as f64;
    let levels: Vec<f64> = (0..bins).map(|b| (b as f64 + 0.5) * width).collect();
    let mesher = Mesher::new(n)?;
    let mesh_phi = levels.iter().map(|&a| coarea_phi(&mesher, a)).collect();
    Ok(CoareaProfile {
        resolution: n,
        bin_width: width,
        levels,
        mesh_phi,
        histogram_phi: coarea_histogram(n, bins),
    })
}

/// Curvature read off the mesh alone: at a vertex, the surface is written as
/// a height function over the plane orthogonal to the area-weighted triangle
/// normal, and a full quartic is least-squares fitted to the vertices of the
/// surrounding `rings`-ring; the shape operator of the fitted graph at the
/// origin gives `(K, H)`. Only vertex positions and triangle orientation are
/// used, so this is an independent check of the closed-form curvatures.
pub struct MeshCurvature<'a> {
    mesh: &'a SurfaceMesh,
    adjacency: Vec<Vec<u32>>,
    incident: Vec<Vec<u32>>,
    rings: usize,
}

/// Monomials `x^i y^j` with `1 <= i + j <= 4`; the order fixes the slots of
/// the first and second derivatives read back below.
const HEIGHT_MONOMIALS: [(i32, i32); 14] = [
    (1, 0), (0, 1), (2, 0), (1, 1), (0, 2),
    (3, 0), (2, 1), (1, 2), (0, 3),
    (4, 0), (3, 1), (2, 2), (1, 3), (0, 4),
];

impl<'a> MeshCurvature<'a> {
    pub fn new(mesh: &'a SurfaceMesh, rings: usize) -> Self {
        let nv = mesh.vertices.len();
        let mut adjacency = vec![Vec::new(); nv];
        let mut incident = vec![Vec::new(); nv];
        for (ti, t) in mesh.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k] as usize, t[(k + 1) % 3]);
                adjacency[a].push(b);
                adjacency[b as usize].push(t[k]);
                incident[a].push(ti as u32);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { mesh, adjacency, incident, rings: rings.max(1) }
    }

    /// Vertices within `rings` edges of `v` (excluding `v`), widened until
    /// there are at least `min_len` of them.
    fn neighbourhood(&self, v: usize, min_len: usize) -> Vec<u32> {
        let mut seen = vec![v as u32];
        let mut frontier = vec![v as u32];
        let mut depth = 0;
        while (depth < self.rings || seen.len() <= min_len) && !frontier.is_empty() {
            depth += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                for &w in &self.adjacency[u as usize] {
                    if !seen.contains(&w) {
                        seen.push(w);
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }
        seen.remove(0);
        seen
    }

    /// `(K, H)` at vertex `v`, with `H` the divergence of the unit normal
    /// oriented along `grad e`; `None` if the fit is rank-deficient.
    pub fn at(&self, v: usize) -> Option<(f64, f64)> {
        let mesh = self.mesh;
        let origin = mesh.vertices[v].vec();
        let mut normal = Vec3::zeros();
        for &t in &self.incident[v] {
            let [p0, p1, p2] = mesh.triangle_points(t as usize);
            normal += (p1 - p0).cross(&(p2 - p0));
        }
        let normal = normal.try_normalize(0.0)?;
        let (t1, t2) = dispersion::tangent_basis(&normal);
        let ring = self.neighbourhood(v, 2 * HEIGHT_MONOMIALS.len());
        if ring.len() < 2 * HEIGHT_MONOMIALS.len() {
            return None;
        }
        let d: Vec<Vec3> = ring.iter().map(|&w| torus_delta(&origin, &mesh.vertices[w as usize].vec())).collect();
        // Scale coordinates to O(1) for conditioning.
        let s = d.iter().map(|q| q.norm()).fold(0.0, f64::max);
        let mut a = nalgebra::DMatrix::zeros(d.len(), HEIGHT_MONOMIALS.len());
        let mut b = nalgebra::DVector::zeros(d.len());
        for (row, q) in d.iter().enumerate() {
            let (x, y) = (q.dot(&t1) / s, q.dot(&t2) / s);
            for (col, &(i, j)) in HEIGHT_MONOMIALS.iter().enumerate() {
                a[(row, col)] = x.powi(i) * y.powi(j);
            }
            b[row] = q.dot(&normal) / s;
        }
        let c = a.svd(true, true).solve(&b, 1e-12).ok()?;
        // Back to unscaled derivatives: f_x = c0, f_xx = 2 c2 / s, ...
        let (fx, fy) = (c[0], c[1]);
        let (fxx, fxy, fyy) = (2.0 * c[2] / s, c[3] / s, 2.0 * c[4] / s);
        let w2 = 1.0 + fx * fx + fy * fy;
        let gauss = (fxx * fyy - fxy * fxy) / (w2 * w2);
        // The normal points to increasing e, i.e. away from the graph's
        // sublevel side, hence the sign.
        let mean = -((1.0 + fy * fy) * fxx - 2.0 * fx * fy * fxy + (1.0 + fx * fx) * fyy) / w2.powf(1.5);
        Some((gauss, mean))
    }
}

/// The eight critical points of `e`: every coordinate in `{0, pi}`.
pub fn critical_points() -> Vec<TorusPoint> {
    (0..8)
        .map(|m| {
            let c = |b: usize| if (m >> b) & 1 == 1 { PI } else { 0.0 };
            TorusPoint::new(c(0), c(1), c(2))
        })
        .collect()
}
