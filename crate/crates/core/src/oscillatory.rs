//! Fourier transform of the weighted surface measure `f dm` on `Sigma_a`,
//! `f = 1/|grad e|`, and the experiments built on it.
//!
//! `mu_hat(xi) = int e^{i xi.p} f(p) dm(p)` with `p` taken in the fundamental
//! cell `[-pi, pi)^3`. The surface is approximated by flat triangles with
//! vertices on `Sigma_a`; on each triangle the phase is linear and `f` is
//! interpolated linearly, and that integral is done exactly (divided
//! differences of `exp`), so the only approximation is geometric. Triangles
//! are refined until the chord-to-surface phase error `r kappa h^2 / 8` is
//! below a tolerance, then clipped to the fundamental cell.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curvegeom::{d_omega, gauss_gradient, TangentialSet};
use crate::dispersion::{self, project_to_level, is_regular, tangent_basis, triple_norm, Direction, Vec3};
use crate::fit::ols;
use crate::levelset::SurfaceMesh;
use crate::output::CsvTable;
use crate::rng::{random_direction, task_rng};
use crate::{par, Error, Result};

/// Japanese bracket `sqrt(1 + x^2)`.
pub fn bracket(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

const SERIES_SPREAD: f64 = 1.0;
const SERIES_TERMS: usize = 22;

/// Divided difference `exp[i t_0, ..., i t_k]` for `k <= 3`; `e` caches
/// `e^{i t_j}`. Stable for any node spacing, including repeated nodes.
fn dd_exp(t: &[f64], e: &[Complex64]) -> Complex64 {
    let k = t.len();
    if k == 1 {
        return e[0];
    }
    let (mut ia, mut ib, mut spread) = (0, 0, 0.0);
    for a in 0..k {
        for b in a + 1..k {
            let d = (t[a] - t[b]).abs();
            if d > spread {
                (ia, ib, spread) = (a, b, d);
            }
        }
    }
    if spread <= SERIES_SPREAD {
        // exp[z] = e^{ic} sum_{m >= k-1} i^{m-k+1} h_{m-k+1}(w) / m!, w = t - c,
        // h_d the complete homogeneous symmetric polynomial.
        let c = t.iter().sum::<f64>() / k as f64;
        let mut h = [0.0; SERIES_TERMS];
        h[0] = 1.0;
        let w0 = t[0] - c;
        for d in 1..SERIES_TERMS {
            h[d] = h[d - 1] * w0;
        }
        for &tv in &t[1..] {
            let w = tv - c;
            for d in 1..SERIES_TERMS {
                h[d] += w * h[d - 1];
            }
        }
        let order = k - 1;
        let mut fact = (1..=order).map(|v| v as f64).product::<f64>();
        let mut acc = Complex64::new(0.0, 0.0);
        let mut ipow = Complex64::new(1.0, 0.0);
        for (d, hd) in h.iter().enumerate() {
            if d > 0 {
                fact *= (order + d) as f64;
                ipow *= Complex64::i();
            }
            acc += ipow * (hd / fact);
        }
        return Complex64::from_polar(1.0, c) * acc;
    }
    let drop = |skip: usize| {
        let mut ts = [0.0; 4];
        let mut es = [Complex64::default(); 4];
        let mut n = 0;
        for j in 0..k {
            if j != skip {
                ts[n] = t[j];
                es[n] = e[j];
                n += 1;
            }
        }
        dd_exp(&ts[..n], &es[..n])
    };
    (drop(ia) - drop(ib)) / Complex64::new(0.0, t[ib] - t[ia])
}

/// Flat triangle with vertex values of the density.
#[derive(Clone, Copy, Debug, PartialEq)]
struct FlatTri {
    p: [Vec3; 3],
    f: [f64; 3],
    area: f64,
}

impl FlatTri {
    fn new(p: [Vec3; 3], f: [f64; 3]) -> Self {
        let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
        Self { p, f, area }
    }

    /// `int_T f e^{i xi.p} dA` for linear `f`, exactly.
    fn integral(&self, xi: &Vec3) -> Complex64 {
        let t = self.p.map(|p| xi.dot(&p));
        let e = t.map(|v| Complex64::from_polar(1.0, v));
        let mut acc = Complex64::default();
        for i in 0..3 {
            let nodes = [t[i], t[0], t[1], t[2]];
            let vals = [e[i], e[0], e[1], e[2]];
            acc += self.f[i] * dd_exp(&nodes, &vals);
        }
        acc * (2.0 * self.area)
    }

    fn mass(&self) -> f64 {
        self.area * (self.f[0] + self.f[1] + self.f[2]) / 3.0
    }
}

/// Sutherland-Hodgman clip of a polygon (with linearly interpolated values)
/// against `sign * x[axis] <= pi`.
fn clip_plane(poly: &[(Vec3, f64)], axis: usize, sign: f64) -> Vec<(Vec3, f64)> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    let inside = |v: &Vec3| sign * v[axis] <= PI;
    for i in 0..poly.len() {
        let (a, fa) = poly[i];
        let (b, fb) = poly[(i + 1) % poly.len()];
        let (ia, ib) = (inside(&a), inside(&b));
        if ia {
            out.push((a, fa));
        }
        if ia != ib {
            let s = (sign * PI - a[axis]) / (b[axis] - a[axis]);
            let mut x = a + (b - a) * s;
            x[axis] = sign * PI;
            out.push((x, fa + (fb - fa) * s));
        }
    }
    out
}

/// Pieces of a triangle inside `[-pi, pi]^3` after all periodic shifts.
fn clip_to_cell(tri: &FlatTri, out: &mut Vec<FlatTri>) {
    let lo = [0, 1, 2].map(|d| tri.p.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min));
    let hi = [0, 1, 2].map(|d| tri.p.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max));
    if (0..3).all(|d| lo[d] >= -PI && hi[d] <= PI) {
        out.push(*tri);
        return;
    }
    let shifts = |d: usize| -> Vec<f64> {
        let mut s = Vec::with_capacity(3);
        if lo[d] < PI && hi[d] > -PI {
            s.push(0.0);
        }
        if hi[d] > PI {
            s.push(-2.0 * PI);
        }
        if lo[d] < -PI {
            s.push(2.0 * PI);
        }
        s
    };
    for sx in shifts(0) {
        for sy in shifts(1) {
            for sz in shifts(2) {
                let shift = Vec3::new(sx, sy, sz);
                let mut poly: Vec<(Vec3, f64)> = (0..3).map(|i| (tri.p[i] + shift, tri.f[i])).collect();
                for axis in 0..3 {
                    for sign in [1.0, -1.0] {
                        if poly.len() < 3 {
                            break;
                        }
                        poly = clip_plane(&poly, axis, sign);
                    }
                }
                for i in 1..poly.len().saturating_sub(1) {
                    let t = FlatTri::new([poly[0].0, poly[i].0, poly[i + 1].0], [poly[0].1, poly[i].1, poly[i + 1].1]);
                    if t.area > 0.0 {
                        out.push(t);
                    }
                }
            }
        }
    }
}

/// Settings of the surface quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Largest `|xi|` the quadrature is built for.
    pub r_max: f64,
    /// Bound on `r kappa h^2 / 8`, the phase error of a chord triangle.
    pub phase_tol: f64,
    /// Refined-triangle budget.
    pub max_triangles: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            r_max: 100.0,
            phase_tol: 0.02,
            max_triangles: 4_000_000,
        }
    }
}

impl QuadratureConfig {
    pub fn for_radius(r: f64) -> Self {
        Self {
            r_max: r.max(1.0),
            ..Default::default()
        }
    }
}

/// Refined, cell-clipped triangulation of `Sigma_a` carrying `f`, plus a
/// half-resolution companion used to estimate the quadrature error.
#[derive(Clone, Debug)]
pub struct MuHatQuadrature {
    pub level: f64,
    pub config: QuadratureConfig,
    fine: Vec<FlatTri>,
    coarse: Vec<FlatTri>,
}

fn refine(mesh: &SurfaceMesh, t: usize, s: usize, out: &mut Vec<FlatTri>) {
    let [p0, p1, p2] = mesh.triangle_points(t);
    let a = mesh.level;
    let node = |i: usize, j: usize| -> (Vec3, f64) {
        let q = p0 + (p1 - p0) * (i as f64 / s as f64) + (p2 - p0) * (j as f64 / s as f64);
        let x = if (i == 0 || i == s) && j == 0 || (i == 0 && j == s) {
            q
        } else {
            project_to_level(&q, a, 20, 1e-14)
        };
        (x, 1.0 / dispersion::gradient(&x).norm())
    };
    // Row-major nodes (i, j), i + j <= s.
    let mut nodes = Vec::with_capacity((s + 1) * (s + 2) / 2);
    let mut row_start = Vec::with_capacity(s + 1);
    for i in 0..=s {
        row_start.push(nodes.len());
        for j in 0..=s - i {
            nodes.push(node(i, j));
        }
    }
    let at = |i: usize, j: usize| nodes[row_start[i] + j];
    let mut push = |a: (Vec3, f64), b: (Vec3, f64), c: (Vec3, f64)| {
        clip_to_cell(&FlatTri::new([a.0, b.0, c.0], [a.1, b.1, c.1]), out);
    };
    for i in 0..s {
        for j in 0..s - i {
            push(at(i, j), at(i + 1, j), at(i, j + 1));
            if i + j + 1 < s {
                push(at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
            }
        }
    }
}

impl MuHatQuadrature {
    pub fn new(mesh: &SurfaceMesh, config: QuadratureConfig) -> Result<Self> {
        if !(config.r_max > 0.0 && config.phase_tol > 0.0) {
            return Err(Error::InvalidParameter("quadrature needs r_max > 0 and phase_tol > 0".into()));
        }
        let subdivisions: Vec<usize> = (0..mesh.triangles.len())
            .map(|t| {
                let [p0, p1, p2] = mesh.triangle_points(t);
                let h = (p1 - p0).norm().max((p2 - p1).norm()).max((p0 - p2).norm());
                let kappa = mesh.triangles[t]
                    .iter()
                    .map(|&v| {
                        let g = &mesh.geometry[v as usize];
                        g.kappa1.abs().max(g.kappa2.abs())
                    })
                    .fold(0.0, f64::max);
                let s = h * (config.r_max * kappa / (8.0 * config.phase_tol)).sqrt();
                (s.ceil() as usize).max(1)
            })
            .collect();
        let needed: usize = subdivisions.iter().map(|s| s * s).sum();
        if needed > config.max_triangles {
            return Err(Error::PhaseUnderresolved {
                xi: config.r_max,
                needed,
                budget: config.max_triangles,
            });
        }
        let build = |halve: bool| -> Vec<FlatTri> {
            par::map_range(mesh.triangles.len(), |t| {
                let s = if halve { subdivisions[t].div_ceil(2) } else { subdivisions[t] };
                let mut out = Vec::with_capacity(s * s + 4);
                refine(mesh, t, s, &mut out);
                out
            })
            .concat()
        };
        Ok(Self {
            level: mesh.level,
            config,
            fine: build(false),
            coarse: build(true),
        })
    }

    pub fn triangle_count(&self) -> usize {
        self.fine.len()
    }

    /// `mu_hat(0) = Phi(a)`, the coarea density.
    pub fn mass(&self) -> f64 {
        self.fine.iter().map(FlatTri::mass).sum()
    }

    fn sum(tris: &[FlatTri], xi: &Vec3) -> Complex64 {
        const CHUNK: usize = 2048;
        par::map_range(tris.len().div_ceil(CHUNK), |c| {
            tris[c * CHUNK..((c + 1) * CHUNK).min(tris.len())]
                .iter()
                .map(|t| t.integral(xi))
                .sum::<Complex64>()
        })
        .into_iter()
        .sum()
    }

    fn check(&self, xi: &Vec3) -> Result<()> {
        let r = xi.norm();
        if r > self.config.r_max * (1.0 + 1e-12) {
            return Err(Error::PhaseUnderresolved {
                xi: r,
                needed: 0,
                budget: self.config.max_triangles,
            });
        }
        Ok(())
    }

    pub fn eval(&self, xi: &Vec3) -> Result<Complex64> {
        self.check(xi)?;
        Ok(Self::sum(&self.fine, xi))
    }

    /// Value and an error estimate `|fine - coarse| / 3` (the chord error is
    /// quadratic in the refinement).
    pub fn eval_with_error(&self, xi: &Vec3) -> Result<(Complex64, f64)> {
        self.check(xi)?;
        let fine = Self::sum(&self.fine, xi);
        let coarse = Self::sum(&self.coarse, xi);
        Ok((fine, (fine - coarse).norm() / 3.0))
    }
}

/// One-shot `mu_hat(xi)` with a quadrature built for `|xi|`.
pub fn mu_hat(mesh: &SurfaceMesh, xi: &Vec3) -> Result<Complex64> {
    MuHatQuadrature::new(mesh, QuadratureConfig::for_radius(xi.norm()))?.eval(xi)
}

/// Bin width of ray profiles, as `r_max * dt`: assigning a bin's mass to its
/// centre costs a relative error of about `(r dt)^2 / 24`.
pub const RAY_PHASE_STEP: f64 = 0.05;

const RAY_CHUNKS: usize = 32;

/// The pushforward of `f dm` under `p -> omega.p`, binned exactly: each
/// flat triangle with linear `f` has a piecewise cubic distribution function
/// in `t = omega.p`, so bin masses are exact. Then
/// `mu_hat(r omega) = sum_b m_b e^{i r t_b}` up to the binning error.
#[derive(Clone, Debug)]
pub struct RayProfile {
    pub direction: Direction,
    pub r_max: f64,
    /// Centre of bin 0.
    pub t0: f64,
    pub dt: f64,
    pub masses: Vec<f64>,
}

fn bin_triangle(tri: &FlatTri, w: &Vec3, lo: f64, dt: f64, masses: &mut [f64]) {
    let mut v = [0, 1, 2].map(|i| (w.dot(&tri.p[i]), tri.f[i]));
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let [(t0, f0), (t1, f1), (t2, f2)] = v;
    let total = tri.mass();
    let last = masses.len() - 1;
    let bin = |t: f64| (((t - lo) / dt).max(0.0) as usize).min(last);
    let span = t2 - t0;
    let (b0, b2) = (bin(t0), bin(t2));
    if b0 == b2 || span <= 0.0 {
        masses[b0] += total;
        return;
    }
    // Split at the middle level into two triangles with an apex at each end;
    // the mass within relative depth s of an apex is A s^2 (f_a + s (f_1 + f_q - 2 f_a) / 3).
    let fq = f0 + (f2 - f0) * (t1 - t0) / span;
    let a_low = tri.area * (t1 - t0) / span;
    let a_up = tri.area - a_low;
    let cdf = |t: f64| -> f64 {
        if t <= t0 {
            0.0
        } else if t >= t2 {
            total
        } else if t <= t1 {
            let s = (t - t0) / (t1 - t0);
            a_low * s * s * (f0 + s * (f1 + fq - 2.0 * f0) / 3.0)
        } else {
            let s = (t2 - t) / (t2 - t1);
            total - a_up * s * s * (f2 + s * (f1 + fq - 2.0 * f2) / 3.0)
        }
    };
    let mut prev = 0.0;
    for (b, m) in masses.iter_mut().enumerate().take(b2).skip(b0) {
        let c = cdf(lo + (b + 1) as f64 * dt);
        *m += c - prev;
        prev = c;
    }
    masses[b2] += total - prev;
}

impl RayProfile {
    fn from_tris(tris: &[FlatTri], omega: &Direction, r_max: f64) -> Self {
        let dt = RAY_PHASE_STEP / r_max.max(1.0);
        let reach = PI * 3f64.sqrt() + dt;
        let lo = -reach;
        let bins = (2.0 * reach / dt).ceil() as usize + 1;
        let w = omega.vec();
        let chunk = tris.len().div_ceil(RAY_CHUNKS).max(1);
        let parts = par::map_range(tris.len().div_ceil(chunk), |c| {
            let mut m = vec![0.0; bins];
            for t in &tris[c * chunk..((c + 1) * chunk).min(tris.len())] {
                bin_triangle(t, &w, lo, dt, &mut m);
            }
            m
        });
        let mut masses = vec![0.0; bins];
        for p in parts {
            for (a, b) in masses.iter_mut().zip(p) {
                *a += b;
            }
        }
        Self {
            direction: *omega,
            r_max,
            t0: lo + 0.5 * dt,
            dt,
            masses,
        }
    }

    /// Profile of the quadrature along `omega`, resolved up to `r_max`.
    pub fn new(quad: &MuHatQuadrature, omega: &Direction, r_max: f64) -> Result<Self> {
        quad.check(&(omega.vec() * r_max))?;
        Ok(Self::from_tris(&quad.fine, omega, r_max))
    }

    /// Profiles of the quadrature and of its half-resolution companion.
    pub fn pair(quad: &MuHatQuadrature, omega: &Direction, r_max: f64) -> Result<(Self, Self)> {
        quad.check(&(omega.vec() * r_max))?;
        Ok((Self::from_tris(&quad.fine, omega, r_max), Self::from_tris(&quad.coarse, omega, r_max)))
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// `mu_hat(r omega)`.
    pub fn eval(&self, r: f64) -> Complex64 {
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, m)| **m != 0.0)
            .map(|(b, &m)| Complex64::from_polar(m, r * (self.t0 + b as f64 * self.dt)))
            .sum()
    }

    /// `mu_hat(m dr omega)` for `m = 0..count` with `dr <= dr_max`, by one
    /// FFT. Returns the step actually used.
    pub fn eval_grid(&self, dr_max: f64, count: usize) -> (f64, Vec<Complex64>) {
        let n = ((2.0 * PI / (dr_max * self.dt)).ceil() as usize).max(count).max(1);
        let dr = 2.0 * PI / (n as f64 * self.dt);
        let mut buf = vec![Complex64::default(); n];
        for (b, &m) in self.masses.iter().enumerate() {
            buf[b % n] += m;
        }
        let fft = rustfft::FftPlanner::new().plan_fft_inverse(n);
        fft.process(&mut buf);
        let vals = (0..count)
            .map(|m| buf[m] * Complex64::from_polar(1.0, m as f64 * dr * self.t0))
            .collect();
        (dr, vals)
    }
}

/// The bracket of the main decay bound, scaled by `c`:
/// `c (2^-L + 1/<r> + L^2 / <r^{3/4} D^{1/2}>)`.
pub fn theorem_bound(r: f64, d: f64, l: f64, c: f64) -> f64 {
    c * (2f64.powf(-l) + 1.0 / bracket(r) + l * l / bracket(r.powf(0.75) * d.sqrt()))
}

/// The `beta` variant, `c (1/<r> + beta^-2 / <r^{3/4-beta} D^{1/2-beta}>)`.
pub fn theorem_bound_beta(r: f64, d: f64, beta: f64, c: f64) -> f64 {
    c * (1.0 / bracket(r) + beta.powi(-2) / bracket(r.powf(0.75 - beta) * d.powf(0.5 - beta)))
}

/// `L = log2 r`, at least 1.
pub fn default_depth(r: f64) -> f64 {
    r.log2().max(1.0)
}

/// `n` log-spaced radii from `r_min` to `r_max` inclusive.
pub fn log_radii(r_min: f64, r_max: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![r_max];
    }
    let (a, b) = (r_min.ln(), r_max.ln());
    let mut r: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    (r[0], r[n - 1]) = (r_min, r_max);
    r
}

/// `|mu_hat(r omega)|` along a ray with the envelope fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayScan {
    pub level: f64,
    pub direction: Direction,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Quadrature error estimates per radius.
    pub errors: Vec<f64>,
    /// Bound bracket with unit constant and `L = log2 r`.
    pub bound: Vec<f64>,
    /// Decay exponent `s` in `|mu_hat| ~ C r^-s` over the top decade.
    pub exponent: f64,
    pub constant: f64,
    /// RMS residual of the log-log envelope fit.
    pub fit_residual: f64,
    /// Number of envelope points used.
    pub fit_points: usize,
    pub d_value: f64,
}

/// Envelope bins per decade of `r`.
pub const ENVELOPE_BINS: usize = 8;

/// Scans `|mu_hat(r omega)|` over `radii` (strictly increasing). The
/// exponent comes from least squares on the per-bin maxima over the top
/// decade; bins whose maximum is below ten times the quadrature error are
/// dropped.
pub fn decay_scan(quad: &MuHatQuadrature, tset: &TangentialSet, omega: &Direction, radii: &[f64]) -> Result<DecayScan> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= 0.0 {
        return Err(Error::InvalidParameter("radii must be positive and strictly increasing".into()));
    }
    let r_top = *radii.last().unwrap();
    let (fine, coarse) = RayProfile::pair(quad, omega, r_top)?;
    let evals = par::map_slice(radii, |&r| {
        let v = fine.eval(r);
        (v.norm(), (v - coarse.eval(r)).norm() / 3.0)
    });
    let (values, errors): (Vec<f64>, Vec<f64>) = evals.into_iter().unzip();
    let d = d_omega(tset, omega);
    let bound = radii.iter().map(|&r| theorem_bound(r, d, default_depth(r), 1.0)).collect();

    let lo = (r_top / 10.0).ln();
    let width = (r_top.ln() - lo) / ENVELOPE_BINS as f64;
    let mut best: Vec<Option<(f64, f64)>> = vec![None; ENVELOPE_BINS];
    for ((&r, &v), &err) in radii.iter().zip(&values).zip(&errors) {
        if r < r_top / 10.0 * (1.0 - 1e-12) || v < 10.0 * err || v <= 0.0 {
            continue;
        }
        let b = (((r.ln() - lo) / width) as usize).min(ENVELOPE_BINS - 1);
        if best[b].is_none_or(|(_, bv)| v > bv) {
            best[b] = Some((r, v));
        }
    }
    let pts: Vec<(f64, f64)> = best.into_iter().flatten().collect();
    let (exponent, constant, fit_residual) = if pts.len() >= 2 {
        let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        let f = ols(&x, &y);
        (-f.slope, f.intercept.exp(), f.rms_residual)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    Ok(DecayScan {
        level: quad.level,
        direction: *omega,
        radii: radii.to_vec(),
        values,
        errors,
        bound,
        exponent,
        constant,
        fit_residual,
        fit_points: pts.len(),
        d_value: d,
    })
}

impl DecayScan {
    /// Largest `|mu_hat| / bound` over the scan.
    pub fn bound_ratio(&self) -> f64 {
        self.values.iter().zip(&self.bound).map(|(v, b)| v / b).fold(0.0, f64::max)
    }
}

pub const DECAY_COLUMNS: [&str; 7] = ["a", "omega_x", "omega_y", "omega_z", "r", "abs_mu_hat", "bound_value"];

/// CSV of several scans; `constant` scales the bound column.
pub fn decay_csv(scans: &[DecayScan], constant: f64) -> CsvTable {
    let mut t = CsvTable::new(&DECAY_COLUMNS);
    for s in scans {
        let w = s.direction.vec();
        for ((&r, &v), &b) in s.radii.iter().zip(&s.values).zip(&s.bound) {
            t.push_numbers(&[s.level, w[0], w[1], w[2], r, v, constant * b]);
        }
    }
    t
}

/// Requires `|||a||| >= lambda`.
pub fn require_regular_level(a: f64, lambda: f64) -> Result<()> {
    if !is_regular(a, lambda) {
        return Err(Error::DegenerateLevel {
            level: a,
            distance: triple_norm(a),
        });
    }
    Ok(())
}

/// Monte-Carlo settings for `J(M) = int_{|xi| <= M} |mu_hat|^4`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L4Config {
    /// Radii at which `J` is reported (each >= 2).
    pub radii: Vec<f64>,
    /// Initial number of sampled directions; doubled until the target is met.
    pub directions: usize,
    pub max_directions: usize,
    /// Target relative standard error of `J` at the largest radius.
    pub target_rel_stderr: Option<f64>,
    /// Angular radius of the importance caps around tangential normals.
    pub cap_radius: f64,
    /// Share of directions drawn from the caps.
    pub cap_fraction: f64,
    /// Radial step bound of the trapezoid rule along each ray.
    pub radial_step: f64,
    pub seed: u64,
}

impl Default for L4Config {
    fn default() -> Self {
        Self {
            radii: vec![8.0, 16.0, 32.0, 64.0],
            directions: 64,
            max_directions: 1024,
            target_rel_stderr: Some(0.05),
            cap_radius: 0.2,
            cap_fraction: 0.5,
            radial_step: 0.02,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct L4Point {
    pub m: f64,
    pub j: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L4Result {
    pub level: f64,
    pub points: Vec<L4Point>,
    pub directions: usize,
}

pub const L4_COLUMNS: [&str; 4] = ["a", "M", "J", "stderr"];

impl L4Result {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&L4_COLUMNS);
        for p in &self.points {
            t.push_numbers(&[self.level, p.m, p.j, p.stderr]);
        }
        t
    }

    /// Least-squares slope of `log J` against `log M`.
    pub fn power_slope(&self) -> f64 {
        let x: Vec<f64> = self.points.iter().map(|p| p.m.ln()).collect();
        let y: Vec<f64> = self.points.iter().map(|p| p.j.ln()).collect();
        ols(&x, &y).slope
    }
}

/// Mixture of the uniform law on the sphere and uniform laws on caps.
struct DirectionSampler {
    axes: Vec<(Vec3, Vec3, Vec3)>,
    cos_radius: f64,
    fraction: f64,
}

impl DirectionSampler {
    fn new(normals: &[Direction], radius: f64, fraction: f64) -> Self {
        let mut axes: Vec<(Vec3, Vec3, Vec3)> = Vec::new();
        for n in normals {
            for s in [1.0, -1.0] {
                let v = n.vec() * s;
                if axes.iter().all(|(a, _, _)| (a - v).norm() > 1e-9) {
                    let (t1, t2) = tangent_basis(&v);
                    axes.push((v, t1, t2));
                }
            }
        }
        let fraction = if axes.is_empty() { 0.0 } else { fraction };
        Self {
            axes,
            cos_radius: radius.cos(),
            fraction,
        }
    }

    fn density(&self, w: &Vec3) -> f64 {
        let uniform = (1.0 - self.fraction) / (4.0 * PI);
        if self.fraction == 0.0 {
            return uniform;
        }
        let cap_area = 2.0 * PI * (1.0 - self.cos_radius);
        let hits = self.axes.iter().filter(|(a, _, _)| a.dot(w) >= self.cos_radius).count();
        uniform + self.fraction * hits as f64 / (self.axes.len() as f64 * cap_area)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Direction {
        let pick: f64 = rng.gen();
        if pick >= self.fraction {
            return random_direction(rng);
        }
        let (a, t1, t2) = self.axes[rng.gen_range(0..self.axes.len())];
        let z = 1.0 - rng.gen::<f64>() * (1.0 - self.cos_radius);
        let phi = 2.0 * PI * rng.gen::<f64>();
        let s = (1.0 - z * z).max(0.0).sqrt();
        Direction::new(a * z + t1 * (s * phi.cos()) + t2 * (s * phi.sin())).expect("unit cap sample")
    }
}

/// Monte-Carlo estimate over directions of `int_{|xi| <= M} g(xi) dxi`
/// for each `M` in `cfg.radii`. `radial(omega)` returns
/// `int_0^M r^2 g(r omega) dr` for every `M`; directions are drawn from a
/// uniform/cap mixture around `normals` (and their antipodes) and weighted by
/// the inverse density. Direction `i` always uses random stream `i`.
pub fn ball_integral<G>(radial: G, normals: &[Direction], cfg: &L4Config) -> Result<(Vec<L4Point>, usize)>
where
    G: Fn(&Direction) -> Result<Vec<f64>> + Sync,
{
    if cfg.radii.is_empty() || cfg.radii.iter().any(|&m| !(m >= 2.0)) {
        return Err(Error::InvalidParameter("L4 radii must be >= 2".into()));
    }
    if cfg.directions < 2 || cfg.max_directions < cfg.directions {
        return Err(Error::InvalidParameter("need 2 <= directions <= max_directions".into()));
    }
    let sampler = DirectionSampler::new(normals, cfg.cap_radius, cfg.cap_fraction);
    let mut samples: Vec<Vec<f64>> = Vec::new();
    let mut n = cfg.directions;
    loop {
        let start = samples.len();
        let new = par::map_range(n - start, |i| {
            let w = sampler.sample(&mut task_rng(cfg.seed, (start + i) as u64));
            let q = sampler.density(&w.vec());
            radial(&w).map(|v| v.into_iter().map(|x| x / q).collect::<Vec<f64>>())
        });
        for v in new {
            samples.push(v?);
        }
        let k = samples.len() as f64;
        let points: Vec<L4Point> = cfg
            .radii
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let mean = samples.iter().map(|s| s[i]).sum::<f64>() / k;
                let var = samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (k - 1.0);
                L4Point {
                    m,
                    j: mean,
                    stderr: (var / k).sqrt(),
                }
            })
            .collect();
        let last = points.iter().max_by(|a, b| a.m.total_cmp(&b.m)).unwrap();
        let rel = last.stderr / last.j.abs();
        match cfg.target_rel_stderr {
            Some(target) if !(rel <= target) => {
                if n >= cfg.max_directions {
                    return Err(Error::BudgetExceeded(format!(
                        "relative standard error {rel:.3e} above {target:.3e} with {n} directions"
                    )));
                }
                n = (2 * n).min(cfg.max_directions);
            }
            _ => return Ok((points, n)),
        }
    }
}

/// `int_0^M r^2 |mu_hat(r omega)|^4 dr` for each `M`, trapezoid rule on an
/// FFT-evaluated radial grid.
pub fn radial_l4(profile: &RayProfile, radii: &[f64], step: f64) -> Vec<f64> {
    let top = radii.iter().cloned().fold(0.0, f64::max);
    let count = (top / step).ceil() as usize + 2;
    let (dr, vals) = profile.eval_grid(step, count);
    let g: Vec<f64> = vals.iter().enumerate().map(|(m, v)| (m as f64 * dr).powi(2) * v.norm_sqr().powi(2)).collect();
    radii
        .iter()
        .map(|&m| {
            let full = ((m / dr).floor() as usize).min(g.len() - 2);
            let mut acc = (0..full).map(|i| 0.5 * (g[i] + g[i + 1])).sum::<f64>() * dr;
            let rest = m - full as f64 * dr;
            if rest > 0.0 {
                let end = g[full] + (g[full + 1] - g[full]) * rest / dr;
                acc += 0.5 * (g[full] + end) * rest;
            }
            acc
        })
        .collect()
}

/// `J(M) = int_{|xi| <= M} |mu_hat(xi)|^4 dxi` by Monte Carlo over
/// directions, importance weighted toward the tangential normals.
pub fn l4_integral(quad: &MuHatQuadrature, tset: &TangentialSet, cfg: &L4Config) -> Result<L4Result> {
    let top = cfg.radii.iter().cloned().fold(0.0, f64::max);
    let normals = tset.normals();
    let (points, directions) = ball_integral(
        |w| Ok(radial_l4(&RayProfile::new(quad, w, top)?, &cfg.radii, cfg.radial_step)),
        &normals,
        cfg,
    )?;
    Ok(L4Result {
        level: quad.level,
        points,
        directions,
    })
}

/// The estimator applied to `g = 1`: returns `(estimate, stderr, exact)` per
/// radius, the exact value being the ball volume.
pub fn l4_self_test(normals: &[Direction], cfg: &L4Config) -> Result<Vec<(f64, f64, f64)>> {
    let (points, _) = ball_integral(|_| Ok(cfg.radii.iter().map(|m| m.powi(3) / 3.0).collect()), normals, cfg)?;
    Ok(points
        .iter()
        .map(|p| (p.j, p.stderr, 4.0 / 3.0 * PI * p.m.powi(3)))
        .collect())
}

/// Dyadic decomposition settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicConfig {
    /// Depth `L`: curvature bands `k = 1..=L`.
    pub depth: u32,
    /// Curvature scale `c0`.
    pub c0: f64,
    /// Order of the smoothstep used for the partitions of unity.
    pub order: u32,
    /// Annuli `j = 0..=annuli`.
    pub annuli: u32,
    /// Each mesh triangle is sampled at the centroids of `m^2` pieces.
    pub subdivisions: usize,
    /// Constant of the volume / alignment dichotomy.
    pub dichotomy_constant: f64,
}

impl Default for DyadicConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            c0: 1.0,
            annuli: 12,
            order: 2,
            subdivisions: 12,
            dichotomy_constant: 10.0,
        }
    }
}

/// One `(k, j)` cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicCell {
    pub k: u32,
    pub j: u32,
    /// `vol(S_k ∩ nu^-1(R_j))`.
    pub volume: f64,
    /// `int psi_k phi_j(nu) dm`.
    pub weighted: f64,
    /// `min(2^-k, 2^-k-j D^-1/2, 2^-3j/2 D^-1/4)`.
    pub bound: f64,
    /// Neither branch of the dichotomy holds.
    pub violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicReport {
    pub level: f64,
    pub direction: Direction,
    pub d_value: f64,
    pub config: DyadicConfig,
    pub cells: Vec<DyadicCell>,
    /// `vol(S_k)`, `k = 1..=L`.
    pub band_volumes: Vec<f64>,
    /// `sum_j weighted(k, j)`, `k = 1..=L`.
    pub row_sums: Vec<f64>,
    /// `max_k 2^k vol(S_k)`.
    pub band_constant: f64,
    /// `max vol / bound` over non-empty cells.
    pub volume_constant: f64,
    pub violations: usize,
    /// Smallest dichotomy constant with no violations.
    pub required_constant: f64,
    /// Sample spacing on the surface.
    pub sample_spacing: f64,
}

impl DyadicReport {
    pub fn cell(&self, k: u32, j: u32) -> Option<&DyadicCell> {
        self.cells.iter().find(|c| c.k == k && c.j == j)
    }
}

/// Telescoping bump: support `[k-2, k]` in `t`, partitions unity over `k`.
fn dyadic_bump(t: f64, k: f64, order: u32) -> f64 {
    let s = |x: f64| dispersion::smoothstep(x, order);
    s(t - k + 2.0) - s(t - k + 1.0)
}

/// Measures `vol(U_{k,j})` for `U_{k,j} = S_k ∩ nu^-1(R_j)` and compares
/// with the volume bound and the cap dichotomy.
pub fn dyadic_diagnostics(mesh: &SurfaceMesh, tset: &TangentialSet, omega: &Direction, cfg: &DyadicConfig) -> Result<DyadicReport> {
    if cfg.depth == 0 || cfg.depth > 30 || cfg.annuli > 60 || !(cfg.c0 > 0.0) || cfg.subdivisions == 0 {
        return Err(Error::InvalidParameter("dyadic config needs 1 <= L <= 30, annuli <= 60, c0 > 0, m >= 1".into()));
    }
    let m = cfg.subdivisions;
    let spacing = mesh.max_edge() / m as f64;
    let grad_k = mesh
        .vertices
        .iter()
        .zip(&mesh.geometry)
        .map(|(v, g)| {
            let gk = gauss_gradient(&v.vec());
            let nu = g.normal.vec();
            (gk - nu * gk.dot(&nu)).norm()
        })
        .fold(0.0, f64::max);
    // The thinnest band S_L must be wider than the sample spacing.
    let band = 2f64.powi(-(cfg.depth as i32)) * cfg.c0 / grad_k.max(1e-300);
    if band < spacing {
        return Err(Error::InvalidParameter(format!(
            "S_L band width {band:.2e} below sample spacing {spacing:.2e}; lower L or raise m"
        )));
    }
    let l = cfg.depth as usize;
    let jn = cfg.annuli as usize;
    let w = omega.vec();
    let a = mesh.level;
    // Per-triangle accumulators: [vol(U) (L x (J+1)), weighted (L x (J+1)), vol(S_k) (L)].
    let cols = jn + 1;
    let size = 2 * l * cols + l;
    let parts = par::map_range(mesh.triangles.len(), |t| {
        let mut acc = vec![0.0; size];
        let [p0, p1, p2] = mesh.triangle_points(t);
        let sub_area = mesh.areas[t] / (m * m) as f64;
        let mut sample = |u: f64, v: f64| {
            let q = p0 + (p1 - p0) * (u / m as f64) + (p2 - p0) * (v / m as f64);
            let x = project_to_level(&q, a, 12, 1e-13);
            let Ok(g) = dispersion::curvature(&x) else { return };
            let tk = -(g.gauss.abs() / cfg.c0).log2();
            let tj = -g.normal.vec().cross(&w).norm().log2();
            for k in 1..=l {
                let kf = k as f64;
                let in_s = tk >= kf - 2.0 && tk <= kf;
                let psi = dyadic_bump(tk, kf, cfg.order);
                if in_s {
                    acc[2 * l * cols + k - 1] += sub_area;
                }
                if !in_s && psi == 0.0 {
                    continue;
                }
                for j in 0..=jn {
                    let jf = j as f64;
                    let idx = (k - 1) * cols + j;
                    if in_s && tj >= jf - 2.0 && tj <= jf {
                        acc[idx] += sub_area;
                    }
                    let phi = if j == 0 { 1.0 - dispersion::smoothstep(tj + 1.0, cfg.order) } else { dyadic_bump(tj, jf, cfg.order) };
                    acc[l * cols + idx] += psi * phi * sub_area;
                }
            }
        };
        for i in 0..m {
            for j in 0..m - i {
                sample(i as f64 + 1.0 / 3.0, j as f64 + 1.0 / 3.0);
                if i + j + 1 < m {
                    sample(i as f64 + 2.0 / 3.0, j as f64 + 2.0 / 3.0);
                }
            }
        }
        acc
    });
    let mut total = vec![0.0; size];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let d = d_omega(tset, omega);
    let mut cells = Vec::with_capacity(l * cols);
    let mut volume_constant: f64 = 0.0;
    let mut violations = 0;
    let mut required_constant: f64 = 0.0;
    for k in 1..=l {
        for j in 0..=jn {
            let idx = (k - 1) * cols + j;
            let volume = total[idx];
            let (kf, jf) = (k as f64, j as f64);
            let mut bound = 2f64.powf(-kf);
            if d > 0.0 {
                bound = bound
                    .min(2f64.powf(-kf - jf) / d.sqrt())
                    .min(2f64.powf(-1.5 * jf) / d.powf(0.25));
            }
            let eps = 2f64.powf(-kf) * cfg.c0;
            let delta = 2f64.powf(-jf + 2.0);
            let small = d > 0.0 && volume * d.sqrt() <= cfg.dichotomy_constant * eps * delta;
            let aligned = d <= cfg.dichotomy_constant * (eps + delta);
            let violation = volume > 0.0 && !small && !aligned;
            if volume > 0.0 {
                let by_volume = if d > 0.0 { volume * d.sqrt() / (eps * delta) } else { f64::INFINITY };
                required_constant = required_constant.max(by_volume.min(d / (eps + delta)));
            }
            if volume > 0.0 {
                volume_constant = volume_constant.max(volume / bound);
            }
            violations += usize::from(violation);
            cells.push(DyadicCell {
                k: k as u32,
                j: j as u32,
                volume,
                weighted: total[l * cols + idx],
                bound,
                violation,
            });
        }
    }
    let band_volumes: Vec<f64> = total[2 * l * cols..].to_vec();
    let row_sums = (1..=l)
        .map(|k| (0..=jn).map(|j| total[l * cols + (k - 1) * cols + j]).sum())
        .collect();
    let band_constant = band_volumes
        .iter()
        .enumerate()
        .map(|(i, v)| v * 2f64.powi(i as i32 + 1))
        .fold(0.0, f64::max);
    Ok(DyadicReport {
        level: mesh.level,
        direction: *omega,
        d_value: d,
        config: *cfg,
        cells,
        band_volumes,
        row_sums,
        band_constant,
        volume_constant,
        violations,
        required_constant,
        sample_spacing: spacing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dd(t: &[f64]) -> Complex64 {
        // Recursive definition; fine for well separated distinct nodes.
        if t.len() == 1 {
            return Complex64::from_polar(1.0, t[0]);
        }
        let n = t.len();
        (naive_dd(&t[1..]) - naive_dd(&t[..n - 1])) / Complex64::new(0.0, t[n - 1] - t[0])
    }

    fn dd(t: &[f64]) -> Complex64 {
        let e: Vec<Complex64> = t.iter().map(|&v| Complex64::from_polar(1.0, v)).collect();
        dd_exp(t, &e)
    }

    #[test]
    fn divided_differences() {
        let t = [0.3, 2.1, -1.7, 4.0];
        for k in 1..=4 {
            assert!((dd(&t[..k]) - naive_dd(&t[..k])).norm() < 1e-13);
        }
        // Coincident nodes: exp[z, z, z] = e^z / 2, exp[z, z, z, z] = e^z / 6.
        let z = Complex64::from_polar(1.0, 0.7);
        assert!((dd(&[0.7; 3]) - z / 2.0).norm() < 1e-15);
        assert!((dd(&[0.7; 4]) - z / 6.0).norm() < 1e-15);
        // Nearly coincident nodes agree with a separated evaluation.
        let near = dd(&[0.2, 0.2 + 1e-9, 5.0, 5.0]);
        let far = dd(&[0.2, 0.2, 5.0, 5.0]);
        assert!((near - far).norm() < 1e-9);
        // Continuity across the series / recursion switch.
        let a = dd(&[0.0, 0.999_999, 0.5]);
        let b = dd(&[0.0, 1.000_001, 0.5]);
        assert!((a - b).norm() < 1e-6);
    }

    #[test]
    fn flat_triangle_integral_matches_fine_quadrature() {
        let tri = FlatTri::new(
            [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.4, 0.1, 0.0), Vec3::new(0.1, 0.5, 0.2)],
            [1.0, 2.0, 0.5],
        );
        let xi = Vec3::new(7.0, -3.0, 11.0);
        let exact = tri.integral(&xi);
        let n = 400;
        let mut acc = Complex64::default();
        for i in 0..n {
            for j in 0..n - i {
                for (u, v) in [(i as f64 + 1.0 / 3.0, j as f64 + 1.0 / 3.0), (i as f64 + 2.0 / 3.0, j as f64 + 2.0 / 3.0)] {
                    if u + v > n as f64 {
                        continue;
                    }
                    let (l1, l2) = (u / n as f64, v / n as f64);
                    let l0 = 1.0 - l1 - l2;
                    let p = tri.p[0] * l0 + tri.p[1] * l1 + tri.p[2] * l2;
                    let f = tri.f[0] * l0 + tri.f[1] * l1 + tri.f[2] * l2;
                    acc += Complex64::from_polar(f, xi.dot(&p));
                }
            }
        }
        acc *= tri.area / (n * n) as f64;
        assert!((exact - acc).norm() < 1e-5 * exact.norm().max(1e-3), "{exact} vs {acc}");
    }

    #[test]
    fn clipping_preserves_area_and_mass() {
        let tri = FlatTri::new(
            [Vec3::new(3.0, -3.0, 0.0), Vec3::new(3.5, -3.0, 0.1), Vec3::new(3.0, -3.6, 0.2)],
            [1.0, 1.5, 2.0],
        );
        let mut out = Vec::new();
        clip_to_cell(&tri, &mut out);
        assert!(out.len() > 1);
        let area: f64 = out.iter().map(|t| t.area).sum();
        let mass: f64 = out.iter().map(FlatTri::mass).sum();
        assert!((area - tri.area).abs() < 1e-12);
        assert!((mass - tri.mass()).abs() < 1e-12);
        for t in &out {
            assert!(t.p.iter().all(|p| p.iter().all(|c| c.abs() <= PI + 1e-12)));
        }
    }

    #[test]
    fn bound_terms() {
        assert_eq!(bracket(0.0), 1.0);
        // D = 0: 2^-L + 1/<r> + L^2.
        let b = theorem_bound(100.0, 0.0, 3.0, 2.0);
        assert!((b - 2.0 * (0.125 + 1.0 / bracket(100.0) + 9.0)).abs() < 1e-12);
        // beta = 0.1, D = 1: the second term decays like r^-0.65.
        let ratio = theorem_bound_beta(1e8, 1.0, 0.1, 1.0) / theorem_bound_beta(1e7, 1.0, 0.1, 1.0);
        assert!((ratio.log10() + 0.65).abs() < 1e-3);
    }

    #[test]
    fn bumps_partition_unity() {
        for &t in &[-0.5, 0.2, 1.0, 2.7, 5.5, 9.99] {
            let s: f64 = (1..=12).map(|k| dyadic_bump(t, k as f64, 2)).sum::<f64>()
                + 1.0 - dispersion::smoothstep(t + 1.0, 2)
                + dispersion::smoothstep(t - 11.0, 2);
            assert!((s - 1.0).abs() < 1e-12);
            for k in 1..=12 {
                let b = dyadic_bump(t, k as f64, 2);
                assert!((0.0..=1.0).contains(&b));
                if t < k as f64 - 2.0 || t > k as f64 {
                    assert_eq!(b, 0.0);
                }
            }
        }
    }

    #[test]
    fn radii() {
        let r = log_radii(10.0, 1000.0, 3);
        assert!((r[1] - 100.0).abs() < 1e-9 && r[2] == 1000.0);
    }
}
