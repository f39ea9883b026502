//! The zero-curvature curve `Gamma_a = {K = 0} ∩ Sigma_a`, its frame fields,
//! the tangential points where the zero-curvature direction is tangent to the
//! curve, and sampled certificates for the geometric assumptions.
//!
//! On `Sigma_a` the Gauss curvature vanishes exactly where
//! `M = s1^2 c2 c3 + s2^2 c1 c3 + s3^2 c1 c2` does, and wherever no cosine
//! vanishes this is equivalent to `1/c1 + 1/c2 + 1/c3 = c1 + c2 + c3 = 3 - a`.

use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dispersion::{
    self, m_field, project_to_level, projected_hessian_eigen, torus_delta, Direction, TorusPoint,
    Vec3,
};
use crate::levelset::SurfaceMesh;
use crate::rng::{random_direction, task_rng};
use crate::{par, Error, Result};

/// Samples and tangential points must satisfy `|M|, |e - a|` below this.
pub const CURVE_TOLERANCE: f64 = 1e-8;
/// Residual `||P e'' P w||` accepted at a tangential point.
pub const TANGENTIAL_RESIDUAL: f64 = 1e-6;
/// Tangential points closer than this are merged.
pub const MERGE_DISTANCE: f64 = 1e-6;
/// Below this `min |c_j|` the kernel field `mu` uses its two-cosine limit.
const MU_SERIES_CUTOFF: f64 = 1e-4;

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn vec_of(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// One traced point of `Gamma_a` with its frames and residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSample {
    pub point: TorusPoint,
    /// Unit tangent `grad e x grad M / |grad e x grad M|`.
    pub w: [f64; 3],
    /// Zero-curvature principal direction, oriented continuously.
    pub z: [f64; 3],
    /// Kernel field `mu ∝ (tan p1, tan p2, tan p3)`, oriented continuously.
    pub mu: [f64; 3],
    pub m_residual: f64,
    pub level_residual: f64,
    /// `|1/c1 + 1/c2 + 1/c3 - (3 - a)|`, only where every `|c_j| > 1e-3`.
    pub reci_residual: Option<f64>,
    /// Distance to the nearest tangential point (1 when there are none or
    /// before they are attached).
    pub d_a: f64,
}

/// `Gamma_a` as a list of closed polylines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaCurve {
    pub level: f64,
    pub components: Vec<Vec<GammaSample>>,
}

impl GammaCurve {
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn sample_count(&self) -> usize {
        self.components.iter().map(Vec::len).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &GammaSample> {
        self.components.iter().flatten()
    }

    /// Errors with `ConvexLevel` when the curve is empty.
    pub fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::ConvexLevel(self.level))
        } else {
            Ok(())
        }
    }

    /// Fills `d_a` for every sample from a tangential set.
    pub fn attach_tangential(&mut self, tset: &TangentialSet) {
        for s in self.components.iter_mut().flatten() {
            s.d_a = tset.distance(&s.point);
        }
    }

    /// Largest gap between consecutive samples (including the closing one).
    pub fn max_gap(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| (0..c.len()).map(move |i| c[i].point.distance(&c[(i + 1) % c.len()].point)))
            .fold(0.0, f64::max)
    }
}

/// Minimum-norm Newton iteration onto `{e = a, M = 0}`.
pub fn project_to_gamma(p: &Vec3, a: f64) -> Option<Vec3> {
    let mut x = *p;
    for _ in 0..40 {
        let g = dispersion::gradient(&x);
        let (m, gm) = m_field(&x);
        let f = Vector2::new(dispersion::eval_e(&x) - a, m);
        if f.amax() <= 1e-14 {
            return Some(x);
        }
        let jjt = Matrix2::new(g.dot(&g), g.dot(&gm), gm.dot(&g), gm.dot(&gm));
        let y = jjt.lu().solve(&f)?;
        let step = g * y.x + gm * y.y;
        x -= step;
        if step.norm() < 1e-15 {
            break;
        }
    }
    let residual = (dispersion::eval_e(&x) - a).abs().max(dispersion::m_value(&x).abs());
    (residual <= CURVE_TOLERANCE).then_some(x)
}

/// Unit tangent of `Gamma` from `grad e x grad M`.
pub fn gamma_tangent(p: &Vec3) -> Option<Vec3> {
    let (_, gm) = m_field(p);
    let t = dispersion::gradient(p).cross(&gm);
    let n = t.norm();
    (n > 1e-300).then(|| t / n)
}

/// The kernel field `mu`, up to sign. Where two cosines are (nearly) zero
/// the limit `(s_i e_i - s_j e_j) / sqrt 2` is used.
pub fn kernel_field(p: &Vec3) -> Vec3 {
    let (s1, c1) = p.x.sin_cos();
    let (s2, c2) = p.y.sin_cos();
    let (s3, c3) = p.z.sin_cos();
    let c = [c1, c2, c3];
    let s = [s1, s2, s3];
    let mut order = [0, 1, 2];
    order.sort_by(|&i, &j| c[i].abs().total_cmp(&c[j].abs()));
    if c[order[1]].abs() < MU_SERIES_CUTOFF {
        let (i, j) = (order[0].min(order[1]), order[0].max(order[1]));
        let mut v = Vec3::zeros();
        v[i] = s[i].signum() * FRAC_1_SQRT_2;
        v[j] = -s[j].signum() * FRAC_1_SQRT_2;
        return v;
    }
    let v = Vec3::new(s1 * c2 * c3, s2 * c1 * c3, s3 * c1 * c2);
    let n = v.norm();
    if n > 1e-300 {
        v / n
    } else {
        v
    }
}

/// `||P e'' P w||` with `w` the unit tangent of `Gamma`.
pub fn pap_w_residual(p: &Vec3) -> f64 {
    let Some(w) = gamma_tangent(p) else {
        return f64::INFINITY;
    };
    pap_apply(p, &w).norm()
}

fn pap_apply(p: &Vec3, v: &Vec3) -> Vec3 {
    let nu = dispersion::gradient(p).normalize();
    let pv = v - nu * nu.dot(v);
    let apv = Vec3::new(p.x.cos() * pv.x, p.y.cos() * pv.y, p.z.cos() * pv.z);
    apv - nu * nu.dot(&apv)
}

fn make_sample(x: &Vec3, a: f64) -> Result<GammaSample> {
    let w = gamma_tangent(x).ok_or_else(|| {
        Error::TracingFailure(format!("Gamma tangent undefined at {:?}", arr(x)))
    })?;
    let [(_, z), _] = projected_hessian_eigen(x)?;
    let c = [x.x.cos(), x.y.cos(), x.z.cos()];
    let reci = (c.iter().all(|v| v.abs() > 1e-3))
        .then(|| (c.iter().map(|v| 1.0 / v).sum::<f64>() - (3.0 - a)).abs());
    Ok(GammaSample {
        point: TorusPoint::from_vec(x),
        w: arr(&w),
        z: arr(&z),
        mu: arr(&kernel_field(x)),
        m_residual: dispersion::m_value(x).abs(),
        level_residual: (dispersion::eval_e(x) - a).abs(),
        reci_residual: reci,
        d_a: 1.0,
    })
}

/// Traces `Gamma_a` on a mesh of `Sigma_a`: sign changes of `M` along mesh
/// edges give one crossing per edge, triangles link crossings into closed
/// loops, and every crossing is refined by Newton onto the curve.
///
/// Convex levels (`a < 2` or `a > 4`) give an empty curve.
pub fn extract_gamma(a: f64, mesh: &SurfaceMesh) -> Result<GammaCurve> {
    let empty = GammaCurve {
        level: a,
        components: Vec::new(),
    };
    if !(2.0..=4.0).contains(&a) {
        return Ok(empty);
    }
    if (a - 3.0).abs() < 0.05 || (a - 2.0).abs() < 0.05 || (a - 4.0).abs() < 0.05 {
        return Err(Error::DegenerateLevel {
            level: a,
            distance: dispersion::triple_norm(a),
        });
    }
    let m: Vec<f64> = mesh.vertices.iter().map(|v| dispersion::m_value(&v.vec())).collect();
    let positive = |i: u32| m[i as usize] >= 0.0;

    let mut crossing_id: HashMap<(u32, u32), usize> = HashMap::new();
    let mut crossing_edges: Vec<(u32, u32)> = Vec::new();
    let mut links: Vec<Vec<usize>> = Vec::new();
    for tri in &mesh.triangles {
        let mut ends = Vec::with_capacity(2);
        for k in 0..3 {
            let (u, v) = (tri[k], tri[(k + 1) % 3]);
            if positive(u) != positive(v) {
                let key = (u.min(v), u.max(v));
                let id = *crossing_id.entry(key).or_insert_with(|| {
                    crossing_edges.push(key);
                    links.push(Vec::new());
                    crossing_edges.len() - 1
                });
                ends.push(id);
            }
        }
        match ends.as_slice() {
            [] => {}
            [i, j] => {
                links[*i].push(*j);
                links[*j].push(*i);
            }
            _ => {
                return Err(Error::TracingFailure(format!(
                    "triangle {tri:?} has {} sign changes of M",
                    ends.len()
                )))
            }
        }
    }
    if let Some(bad) = links.iter().position(|l| l.len() != 2) {
        return Err(Error::TracingFailure(format!(
            "crossing on edge {:?} has {} neighbours; component does not close",
            crossing_edges[bad],
            links[bad].len()
        )));
    }

    // Walk the cycles.
    let mut visited = vec![false; links.len()];
    let mut loops: Vec<Vec<usize>> = Vec::new();
    for start in 0..links.len() {
        if visited[start] {
            continue;
        }
        let mut cycle = vec![start];
        visited[start] = true;
        let (mut prev, mut cur) = (start, links[start][0]);
        while cur != start {
            if visited[cur] {
                return Err(Error::TracingFailure("crossing graph is not a union of cycles".into()));
            }
            visited[cur] = true;
            cycle.push(cur);
            let next = if links[cur][0] == prev { links[cur][1] } else { links[cur][0] };
            prev = cur;
            cur = next;
        }
        loops.push(cycle);
    }
    // Deterministic component order: by smallest crossing edge.
    loops.sort_by_key(|l| l.iter().map(|&i| crossing_edges[i]).min());

    let h = 2.0 * PI / mesh.resolution as f64;
    let refined: Vec<Option<Vec3>> = par::map_slice(&crossing_edges, |&(u, v)| {
        let pu = mesh.vertices[u as usize].vec();
        let pv = pu + torus_delta(&pu, &mesh.vertices[v as usize].vec());
        let (mu, mv) = (m[u as usize], m[v as usize]);
        let guess = pu + (pv - pu) * (mu / (mu - mv));
        project_to_gamma(&guess, a)
    });

    let mut components = Vec::with_capacity(loops.len());
    for cycle in loops {
        let mut samples = Vec::with_capacity(cycle.len());
        for &id in &cycle {
            let x = refined[id].ok_or_else(|| {
                Error::TracingFailure(format!("Newton refinement failed near edge {:?}", crossing_edges[id]))
            })?;
            samples.push(make_sample(&x, a)?);
        }
        orient_frames(&mut samples);
        // Consecutive samples come from adjacent triangles.
        for i in 0..samples.len() {
            let d = samples[i].point.distance(&samples[(i + 1) % samples.len()].point);
            if d > 4.0 * h {
                return Err(Error::TracingFailure(format!(
                    "gap {d:.3e} between consecutive samples exceeds four cells"
                )));
            }
        }
        components.push(samples);
    }
    Ok(GammaCurve {
        level: a,
        components,
    })
}

fn orient_frames(samples: &mut [GammaSample]) {
    for i in 1..samples.len() {
        let (prev_z, prev_mu) = (vec_of(&samples[i - 1].z), vec_of(&samples[i - 1].mu));
        let s = &mut samples[i];
        if vec_of(&s.z).dot(&prev_z) < 0.0 {
            s.z = s.z.map(|v| -v);
        }
        if vec_of(&s.mu).dot(&prev_mu) < 0.0 {
            s.mu = s.mu.map(|v| -v);
        }
    }
}

/// How a tangential point was found.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentialKind {
    /// Two coordinates `±pi/2`, the third `±arccos(3 - a)`.
    ClosedForm,
    /// Root of `Phi(c) = (3 - a, 3 - a, 0)` with no vanishing cosine.
    RootFound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentialPoint {
    pub point: TorusPoint,
    pub normal: [f64; 3],
    pub kind: TangentialKind,
    /// `||P e'' P w||` at the point.
    pub residual: f64,
}

/// The tangential points of `Gamma_a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentialSet {
    pub level: f64,
    pub points: Vec<TangentialPoint>,
    /// Multistart seeds whose Newton iteration did not converge.
    pub newton_failures: usize,
}

impl TangentialSet {
    pub fn empty(level: f64) -> Self {
        Self {
            level,
            points: Vec::new(),
            newton_failures: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn normals(&self) -> Vec<Direction> {
        self.points
            .iter()
            .filter_map(|t| Direction::new(vec_of(&t.normal)))
            .collect()
    }

    /// Flat-torus distance to the nearest point; 1 for an empty set.
    pub fn distance(&self, p: &TorusPoint) -> f64 {
        if self.points.is_empty() {
            return 1.0;
        }
        self.points
            .iter()
            .map(|t| t.point.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest pairwise distance (infinite for fewer than two points).
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.min(a.point.distance(&b.point));
            }
        }
        best
    }
}

fn phi_map(c: &Vec3, t: f64) -> (Vec3, nalgebra::Matrix3<f64>) {
    let [c1, c2, c3] = [c.x, c.y, c.z];
    let cube = |v: f64| v * v * v;
    let f3 = (1.0 - c1.powi(4)) * cube(c2) * cube(c3)
        + (1.0 - c2.powi(4)) * cube(c1) * cube(c3)
        + (1.0 - c3.powi(4)) * cube(c2) * cube(c1);
    let f = Vec3::new(c1 + c2 + c3 - t, 1.0 / c1 + 1.0 / c2 + 1.0 / c3 - t, f3);
    let d3 = |x: f64, y: f64, z: f64| {
        -4.0 * cube(x) * cube(y) * cube(z)
            + 3.0 * x * x * ((1.0 - y.powi(4)) * cube(z) + (1.0 - z.powi(4)) * cube(y))
    };
    let j = nalgebra::Matrix3::new(
        1.0,
        1.0,
        1.0,
        -1.0 / (c1 * c1),
        -1.0 / (c2 * c2),
        -1.0 / (c3 * c3),
        d3(c1, c2, c3),
        d3(c2, c1, c3),
        d3(c3, c1, c2),
    );
    (f, j)
}

/// Newton's method on `Phi(c) = (3 - a, 3 - a, 0)` from one seed.
fn phi_newton(seed: Vec3, t: f64) -> Option<Vec3> {
    let mut c = seed;
    for _ in 0..60 {
        let (f, j) = phi_map(&c, t);
        if f.amax() < 1e-14 {
            return Some(c);
        }
        let step = j.lu().solve(&f)?;
        c -= step;
        if c.amax() > 1.5 || c.amin() < 1e-8 || !c.iter().all(|v| v.is_finite()) {
            return None;
        }
        if step.amax() < 1e-15 {
            break;
        }
    }
    (phi_map(&c, t).0.amax() < 1e-11).then_some(c)
}

fn push_merged(points: &mut Vec<TangentialPoint>, cand: TangentialPoint) {
    if points.iter().all(|q| q.point.distance(&cand.point) > MERGE_DISTANCE) {
        points.push(cand);
    }
}

/// Tangential points of `Gamma_a`: the closed-form family plus roots of the
/// cosine system found by multistart Newton.
pub fn find_tangential_points(a: f64, gamma: &GammaCurve) -> Result<TangentialSet> {
    gamma.require_nonempty()?;
    let t = 3.0 - a;
    let mut points = Vec::new();

    if t.abs() <= 1.0 {
        let third = t.acos();
        for free in 0..3 {
            for signs in 0..8u32 {
                let sg = |b: u32| if (signs >> b) & 1 == 1 { -1.0 } else { 1.0 };
                let mut p = [0.0; 3];
                let mut b = 0;
                for (k, pk) in p.iter_mut().enumerate() {
                    if k == free {
                        *pk = sg(2) * third;
                    } else {
                        *pk = sg(b) * FRAC_PI_2;
                        b += 1;
                    }
                }
                let x = Vec3::new(p[0], p[1], p[2]);
                let residual = pap_w_residual(&x);
                if !(residual <= TANGENTIAL_RESIDUAL) {
                    return Err(Error::ResidualFailure(p, residual));
                }
                push_merged(
                    &mut points,
                    TangentialPoint {
                        point: TorusPoint::from_vec(&x),
                        normal: arr(&dispersion::normal(&x)?.vec()),
                        kind: TangentialKind::ClosedForm,
                        residual,
                    },
                );
            }
        }
    }

    // Seeds on the 20^3 grid over ([-1, -0.1] ∪ [0.1, 1])^3.
    let axis: Vec<f64> = (0..10)
        .map(|i| -1.0 + 0.1 * i as f64)
        .chain((0..10).map(|i| 0.1 + 0.1 * i as f64))
        .collect();
    let seeds: Vec<Vec3> = (0..8000)
        .map(|i| Vec3::new(axis[i / 400], axis[(i / 20) % 20], axis[i % 20]))
        .collect();
    let roots = par::map_slice(&seeds, |s| phi_newton(*s, t));
    let newton_failures = roots.iter().filter(|r| r.is_none()).count();
    let mut croots: Vec<Vec3> = Vec::new();
    for c in roots.into_iter().flatten() {
        if c.amax() <= 1.0 && croots.iter().all(|r| (r - c).amax() > 1e-9) {
            croots.push(c);
        }
    }
    for c in croots {
        let base = Vec3::new(c.x.acos(), c.y.acos(), c.z.acos());
        for signs in 0..8u32 {
            let sg = |b: u32| if (signs >> b) & 1 == 1 { -1.0 } else { 1.0 };
            let x = Vec3::new(sg(0) * base.x, sg(1) * base.y, sg(2) * base.z);
            let residual = pap_w_residual(&x);
            if residual <= TANGENTIAL_RESIDUAL {
                push_merged(
                    &mut points,
                    TangentialPoint {
                        point: TorusPoint::from_vec(&x),
                        normal: arr(&dispersion::normal(&x)?.vec()),
                        kind: TangentialKind::RootFound,
                        residual,
                    },
                );
            }
        }
    }
    Ok(TangentialSet {
        level: a,
        points,
        newton_failures,
    })
}

/// `D_a(omega) = min_j |nu(p_j) x omega|`, or 1 without tangential points.
pub fn d_omega(tset: &TangentialSet, omega: &Direction) -> f64 {
    if tset.is_empty() {
        return 1.0;
    }
    tset.normals()
        .iter()
        .map(|n| n.cross_norm(omega))
        .fold(f64::INFINITY, f64::min)
}

/// `min |nu(p) x omega|` over the samples of `Gamma`: how close `omega` is
/// to the set of Gamma normals (1 for an empty curve).
pub fn gamma_normal_distance(gamma: &GammaCurve, omega: &Direction) -> f64 {
    gamma
        .samples()
        .filter_map(|s| dispersion::normal(&s.point.vec()).ok())
        .map(|n| n.cross_norm(omega))
        .fold(1.0, f64::min)
}

/// Zeros of `||P e'' P w||` found by a dense scan of `Gamma`: every segment
/// is subdivided `subdivisions` times, the subdivision points are projected
/// onto the curve, and every local minimum is refined by golden-section
/// search. Minima whose refined value is below `zero_tol` are returned.
pub fn dense_tangential_scan(gamma: &GammaCurve, subdivisions: usize, zero_tol: f64) -> Vec<TorusPoint> {
    let a = gamma.level;
    let k = subdivisions.max(1);
    let mut found: Vec<TorusPoint> = Vec::new();
    for comp in &gamma.components {
        // Unwrapped polyline.
        let mut poly = Vec::with_capacity(comp.len() + 1);
        let first = comp[0].point.vec();
        poly.push(first);
        for i in 1..=comp.len() {
            let prev = poly[i - 1];
            poly.push(prev + torus_delta(&prev, &comp[i % comp.len()].point.vec()));
        }
        let n_pts = comp.len() * k;
        let at = |s: f64| -> Option<Vec3> {
            let s = s.rem_euclid(n_pts as f64);
            let seg = ((s / k as f64).floor() as usize).min(comp.len() - 1);
            let local = s / k as f64 - seg as f64;
            let guess = poly[seg] + (poly[seg + 1] - poly[seg]) * local;
            project_to_gamma(&guess, a)
        };
        let q = |s: f64| at(s).map_or(f64::INFINITY, |x| pap_w_residual(&x));
        let values: Vec<f64> = par::map_range(n_pts, |i| q(i as f64));
        for i in 0..n_pts {
            let (l, c, r) = (values[(i + n_pts - 1) % n_pts], values[i], values[(i + 1) % n_pts]);
            if !(c <= l && c < r) {
                continue;
            }
            // Golden-section refinement on [i - 1, i + 1].
            let (mut lo, mut hi) = (i as f64 - 1.0, i as f64 + 1.0);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
            let (mut f1, mut f2) = (q(x1), q(x2));
            for _ in 0..60 {
                if f1 < f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - g * (hi - lo);
                    f1 = q(x1);
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + g * (hi - lo);
                    f2 = q(x2);
                }
            }
            let s = 0.5 * (lo + hi);
            if let Some(x) = at(s) {
                if pap_w_residual(&x) <= zero_tol {
                    let tp = TorusPoint::from_vec(&x);
                    if found.iter().all(|f| f.distance(&tp) > MERGE_DISTANCE) {
                        found.push(tp);
                    }
                }
            }
        }
    }
    found
}

/// Points `p` of `Sigma_a` with `nu(p) = omega`.
///
/// With `grad e = lambda omega` the sines are `lambda omega_j` and the
/// cosines `sigma_j sqrt(1 - lambda^2 omega_j^2)` for one of eight sign
/// patterns; each root `lambda` of `sum_j cos p_j = 3 - a` gives one point.
pub fn normal_preimages(a: f64, omega: &Direction) -> Vec<TorusPoint> {
    let w = omega.vec();
    let lam_max = 1.0 / w.amax();
    let t = 3.0 - a;
    let mut out: Vec<TorusPoint> = Vec::new();
    const SCAN: usize = 4000;
    for pattern in 0..8u32 {
        let sg = |b: u32| if (pattern >> b) & 1 == 1 { -1.0 } else { 1.0 };
        let f = |lam: f64| -> f64 {
            (0..3)
                .map(|j| sg(j as u32) * (1.0 - (lam * w[j]).powi(2)).max(0.0).sqrt())
                .sum::<f64>()
                - t
        };
        let mut roots = Vec::new();
        // lambda = 0 would be a critical point; start just above it.
        let grid: Vec<f64> = (0..=SCAN).map(|i| lam_max * i as f64 / SCAN as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&l| f(l)).collect();
        for i in 0..SCAN {
            let (l0, l1, f0, f1) = (grid[i], grid[i + 1], vals[i], vals[i + 1]);
            if f1 == 0.0 {
                roots.push(l1);
            } else if f0 != 0.0 && (f0 > 0.0) != (f1 > 0.0) {
                let (mut lo, mut hi, mut flo) = (l0, l1, f0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let fm = f(mid);
                    if (fm > 0.0) == (flo > 0.0) {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-15 * lam_max {
                        break;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
        }
        for lam in roots.into_iter().filter(|&l| l > 0.0) {
            let p: Vec<f64> = (0..3)
                .map(|j| {
                    let s = (lam * w[j]).clamp(-1.0, 1.0);
                    let c = sg(j as u32) * (1.0 - s * s).max(0.0).sqrt();
                    s.atan2(c)
                })
                .collect();
            let tp = TorusPoint::new(p[0], p[1], p[2]);
            if out.iter().all(|q| q.distance(&tp) > 1e-7) {
                out.push(tp);
            }
        }
    }
    out
}

/// Sampled estimates of the constants in the geometric assumptions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCertificate {
    pub a_window: [f64; 2],
    pub levels: Vec<f64>,
    pub resolution: usize,
    /// `min |grad e|` over sampled points with `e` in the window.
    pub c2: f64,
    /// `min |grad e x grad K|` over `Gamma` samples (none on convex levels).
    pub c3: Option<f64>,
    /// Largest number of preimages of a direction under the normal map.
    pub c4: usize,
    /// Smallest number of preimages seen (exactly 1 on convex levels).
    pub c4_min: usize,
    /// `min ||P e'' P w|| / d_a` over `Gamma` samples with `d_a >= 0.05`.
    pub c6: Option<f64>,
    /// Tangential point count per level.
    pub tangential_counts: Vec<usize>,
    pub gamma_samples: usize,
    pub volume_samples: usize,
    pub directions: usize,
}

/// `grad K = |grad e|^-4 grad M - 4 M |grad e|^-5 grad |grad e|`.
pub fn gauss_gradient(p: &Vec3) -> Vec3 {
    let g = dispersion::gradient(p);
    let gn = g.norm();
    let (m, gm) = m_field(p);
    let grad_gn = Vec3::new(p.x.cos() * g.x, p.y.cos() * g.y, p.z.cos() * g.z) / gn;
    gm / gn.powi(4) - grad_gn * (4.0 * m / gn.powi(5))
}

/// Parameters of an assumption check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateConfig {
    pub a_window: [f64; 2],
    pub resolution: usize,
    /// Random points in the foliated domain used for `C2`.
    pub volume_samples: usize,
    /// Random directions used for `C4`.
    pub directions: usize,
    /// Levels sampled across the window.
    pub levels: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            a_window: [2.3, 2.7],
            resolution: 64,
            volume_samples: 20_000,
            directions: 500,
            levels: 3,
            lambda: 0.3,
            seed: 1,
        }
    }
}

/// Estimates `C2, C3, C4, C6` on a window of levels.
pub fn check_assumptions(cfg: &CertificateConfig) -> Result<AssumptionCertificate> {
    let [lo, hi] = cfg.a_window;
    if !(lo <= hi) || lo < 0.0 || hi > 6.0 {
        return Err(Error::InvalidParameter(format!("bad level window [{lo}, {hi}]")));
    }
    let nlev = cfg.levels.max(1);
    let levels: Vec<f64> = if nlev == 1 || lo == hi {
        vec![0.5 * (lo + hi)]
    } else {
        (0..nlev).map(|i| lo + (hi - lo) * i as f64 / (nlev - 1) as f64).collect()
    };
    for &a in &levels {
        if !dispersion::is_regular(a, cfg.lambda) {
            return Err(Error::InvalidParameter(format!(
                "level {a} is within lambda = {} of an exceptional value",
                cfg.lambda
            )));
        }
    }

    // C2: uniform points of the torus whose level lies in the window.
    let mut rng = task_rng(cfg.seed, 0xC2);
    let mut c2 = f64::INFINITY;
    let mut kept = 0;
    while kept < cfg.volume_samples {
        let p = Vec3::from_fn(|_, _| rand::Rng::gen_range(&mut rng, -PI..PI));
        let e = dispersion::eval_e(&p);
        if e >= lo && e <= hi {
            c2 = c2.min(dispersion::gradient(&p).norm());
            kept += 1;
        }
    }

    let mut c3: Option<f64> = None;
    let mut c6: Option<f64> = None;
    let mut counts = Vec::new();
    let mut gamma_samples = 0;
    let mut c4 = 0;
    let mut c4_min = usize::MAX;
    for (li, &a) in levels.iter().enumerate() {
        let mesh = crate::levelset::extract_surface(a, cfg.resolution)?;
        for g in &mesh.geometry {
            c2 = c2.min(g.grad_norm);
        }
        let mut gamma = extract_gamma(a, &mesh)?;
        if !gamma.is_empty() {
            let tset = find_tangential_points(a, &gamma)?;
            gamma.attach_tangential(&tset);
            counts.push(tset.len());
            for s in gamma.samples() {
                let x = s.point.vec();
                let v = dispersion::gradient(&x).cross(&gauss_gradient(&x)).norm();
                c3 = Some(c3.map_or(v, |c: f64| c.min(v)));
                if s.d_a >= 0.05 {
                    let r = pap_w_residual(&x) / s.d_a;
                    c6 = Some(c6.map_or(r, |c: f64| c.min(r)));
                }
            }
            gamma_samples += gamma.sample_count();
        } else {
            counts.push(0);
        }
        let mut drng = task_rng(cfg.seed, 0xC4_0000 + li as u64);
        let dirs: Vec<Direction> = (0..cfg.directions).map(|_| random_direction(&mut drng)).collect();
        for n in par::map_slice(&dirs, |w| normal_preimages(a, w).len()) {
            c4 = c4.max(n);
            c4_min = c4_min.min(n);
        }
    }

    let cert = AssumptionCertificate {
        a_window: cfg.a_window,
        levels,
        resolution: cfg.resolution,
        c2,
        c3,
        c4,
        c4_min,
        c6,
        tangential_counts: counts,
        gamma_samples,
        volume_samples: cfg.volume_samples,
        directions: cfg.directions,
    };
    if !(cert.c2 > 0.0) {
        return Err(Error::CertificateViolation(format!("C2 = {}", cert.c2)));
    }
    if let Some(c) = cert.c3.filter(|c| !(*c > 0.0)) {
        return Err(Error::CertificateViolation(format!("C3 = {c}")));
    }
    if let Some(c) = cert.c6.filter(|c| !(*c > 0.0)) {
        return Err(Error::CertificateViolation(format!("C6 = {c}")));
    }
    if cert.c4 > 64 {
        return Err(Error::CertificateViolation(format!("C4 = {} exceeds 64", cert.c4)));
    }
    Ok(cert)
}

/// `U = |s2 s3 (c2 - c3)| + |s1 s3 (c3 - c1)| + |s1 s2 (c1 - c2)|`.
pub fn u_function(p: &Vec3) -> f64 {
    let (s1, c1) = p.x.sin_cos();
    let (s2, c2) = p.y.sin_cos();
    let (s3, c3) = p.z.sin_cos();
    (s2 * s3 * (c2 - c3)).abs() + (s1 * s3 * (c3 - c1)).abs() + (s1 * s2 * (c1 - c2)).abs()
}

/// Minimum of `U` over mesh vertices with `|M| <= m_tol` and over `Gamma`.
pub fn u_function_min(mesh: &SurfaceMesh, gamma: &GammaCurve, m_tol: f64) -> Option<f64> {
    mesh.vertices
        .iter()
        .map(|v| v.vec())
        .filter(|x| dispersion::m_value(x).abs() <= m_tol)
        .chain(gamma.samples().map(|s| s.point.vec()))
        .map(|x| u_function(&x))
        .reduce(f64::min)
}

/// `C_{eps,delta}(zeta) = {eps <= |K| <= 4 eps, |nu x zeta| <= delta}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapQuery {
    pub eps: f64,
    pub delta: f64,
    pub zeta: Direction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DichotomyBranch {
    /// `vol <= C eps delta / sqrt(D)`.
    SmallVolume,
    /// `D <= C (eps + delta)`.
    NearTangential,
    Violated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapReport {
    pub volume: f64,
    pub d: f64,
    /// `vol sqrt(D) / (eps delta)`: the constant the first branch needs.
    pub volume_constant: f64,
    /// `D / (eps + delta)`: the constant the second branch needs.
    pub alignment_constant: f64,
    pub branch: DichotomyBranch,
}

/// Measures a curvature cap and reports which branch of the volume /
/// alignment dichotomy holds with constant `c_dich`.
///
/// The area is computed by adaptive bisection of the mesh triangles: a
/// piece is accepted or discarded whole when the vertex values, widened by
/// Lipschitz bounds of `|K|` and `nu` on the surface, decide the indicator;
/// otherwise it is split in four, down to `max_depth` levels.
pub fn cap_volume(mesh: &SurfaceMesh, q: &CapQuery, tset: &TangentialSet, c_dich: f64, max_depth: u32) -> Result<CapReport> {
    if !(q.eps > 0.0 && q.eps <= 0.1 && q.delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cap query needs 0 < eps <= 0.1 and delta > 0, got eps = {}, delta = {}",
            q.eps, q.delta
        )));
    }
    let zeta = q.zeta.vec();
    let mut lip_k: f64 = 0.0;
    let mut lip_n: f64 = 0.0;
    for (v, g) in mesh.vertices.iter().zip(&mesh.geometry) {
        let gk = gauss_gradient(&v.vec());
        let nu = g.normal.vec();
        lip_k = lip_k.max((gk - nu * gk.dot(&nu)).norm());
        lip_n = lip_n.max(g.kappa2.abs());
    }
    let cap = CapIndicator {
        lo: q.eps,
        hi: 4.0 * q.eps,
        delta: q.delta,
        zeta,
        lip_k: 1.5 * lip_k,
        lip_n: 1.5 * lip_n,
        level: mesh.level,
    };
    let parts = par::map_range(mesh.triangles.len(), |t| {
        let pts = mesh.triangle_points(t);
        let tri = mesh.triangles[t];
        let vals = [0, 1, 2].map(|i| {
            let g = &mesh.geometry[tri[i] as usize];
            (g.gauss.abs(), g.normal.vec().cross(&zeta).norm())
        });
        cap.area(pts, vals, max_depth)
    });
    let volume: f64 = parts.into_iter().sum();
    let d = d_omega(tset, &q.zeta);
    let volume_constant = if d > 0.0 {
        volume * d.sqrt() / (q.eps * q.delta)
    } else {
        f64::INFINITY
    };
    let alignment_constant = d / (q.eps + q.delta);
    let branch = if volume_constant <= c_dich {
        DichotomyBranch::SmallVolume
    } else if alignment_constant <= c_dich {
        DichotomyBranch::NearTangential
    } else {
        DichotomyBranch::Violated
    };
    Ok(CapReport {
        volume,
        d,
        volume_constant,
        alignment_constant,
        branch,
    })
}

struct CapIndicator {
    lo: f64,
    hi: f64,
    delta: f64,
    zeta: Vec3,
    lip_k: f64,
    lip_n: f64,
    level: f64,
}

impl CapIndicator {
    fn values(&self, x: &Vec3) -> (f64, f64) {
        match dispersion::curvature(x) {
            Ok(g) => (g.gauss.abs(), g.normal.vec().cross(&self.zeta).norm()),
            Err(_) => (f64::INFINITY, f64::INFINITY),
        }
    }

    fn inside(&self, (k, c): (f64, f64)) -> bool {
        k >= self.lo && k <= self.hi && c <= self.delta
    }

    fn area(&self, p: [Vec3; 3], v: [(f64, f64); 3], depth: u32) -> f64 {
        let diam = (p[1] - p[0]).norm().max((p[2] - p[1]).norm()).max((p[0] - p[2]).norm());
        let (mk, mn) = (self.lip_k * diam, self.lip_n * diam);
        let kmin = v.iter().map(|x| x.0).fold(f64::INFINITY, f64::min) - mk;
        let kmax = v.iter().map(|x| x.0).fold(0.0, f64::max) + mk;
        let cmin = v.iter().map(|x| x.1).fold(f64::INFINITY, f64::min) - mn;
        let cmax = v.iter().map(|x| x.1).fold(0.0, f64::max) + mn;
        if kmax < self.lo || kmin > self.hi || cmin > self.delta {
            return 0.0;
        }
        let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
        if kmin >= self.lo && kmax <= self.hi && cmax <= self.delta {
            return area;
        }
        if depth == 0 {
            let c = project_to_level(&((p[0] + p[1] + p[2]) / 3.0), self.level, 8, 1e-13);
            let hits = v.iter().filter(|x| self.inside(**x)).count() + usize::from(self.inside(self.values(&c)));
            return area * hits as f64 / 4.0;
        }
        let mid = |i: usize, j: usize| project_to_level(&(0.5 * (p[i] + p[j])), self.level, 8, 1e-13);
        let (m01, m12, m20) = (mid(0, 1), mid(1, 2), mid(2, 0));
        let (v01, v12, v20) = (self.values(&m01), self.values(&m12), self.values(&m20));
        self.area([p[0], m01, m20], [v[0], v01, v20], depth - 1)
            + self.area([m01, p[1], m12], [v01, v[1], v12], depth - 1)
            + self.area([m20, m12, p[2]], [v20, v12, v[2]], depth - 1)
            + self.area([m01, m12, m20], [v01, v12, v20], depth - 1)
    }
}
