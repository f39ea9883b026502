//! The dispersion relation `e(p) = 3 - cos p1 - cos p2 - cos p3` and the
//! scalar fields derived from it.
//!
//! All functions accept unreduced coordinates; `e` and its derivatives are
//! `2 pi`-periodic in each argument, so reduction onto the canonical cell only
//! matters for reporting and distances.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Gradients below this norm are treated as critical points.
pub const CRITICAL_GRADIENT: f64 = 1e-12;

/// The exceptional values of `e`: the four critical values and the flat-umbilic
/// level 3.
pub const EXCEPTIONAL_LEVELS: [f64; 5] = [0.0, 2.0, 3.0, 4.0, 6.0];

/// Critical values of `e` (images of the eight critical points).
pub const CRITICAL_VALUES: [f64; 4] = [0.0, 2.0, 4.0, 6.0];

/// Reduces an angle to the canonical representative in `[-pi, pi)`.
pub fn reduce_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = x - two_pi * ((x + PI) / two_pi).floor();
    if r >= PI {
        r -= two_pi;
    }
    if r < -PI {
        r += two_pi;
    }
    r
}

/// Componentwise minimal-image difference `b - a` on the flat torus.
pub fn torus_delta(a: &Vec3, b: &Vec3) -> Vec3 {
    Vec3::new(
        reduce_angle(b.x - a.x),
        reduce_angle(b.y - a.y),
        reduce_angle(b.z - a.z),
    )
}

/// A point of `T^3 = [-pi, pi)^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub p: [f64; 3],
}

impl TorusPoint {
    /// Builds a point, reducing every coordinate onto `[-pi, pi)`.
    pub fn new(p1: f64, p2: f64, p3: f64) -> Self {
        Self {
            p: [reduce_angle(p1), reduce_angle(p2), reduce_angle(p3)],
        }
    }

    pub fn from_vec(v: &Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn vec(&self) -> Vec3 {
        Vec3::new(self.p[0], self.p[1], self.p[2])
    }

    /// Flat-torus distance.
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        torus_delta(&self.vec(), &other.vec()).norm()
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.p[0], -self.p[1], -self.p[2])
    }
}

impl From<TorusPoint> for Vec3 {
    fn from(p: TorusPoint) -> Vec3 {
        p.vec()
    }
}

/// A unit vector on `S^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction(Vec3);

impl Direction {
    /// Normalises `v`; `None` for (numerically) zero vectors.
    pub fn new(v: Vec3) -> Option<Self> {
        let n = v.norm();
        (n > 1e-300 && n.is_finite()).then(|| Self(v / n))
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Option<Self> {
        Self::new(Vec3::new(x, y, z))
    }

    /// Polar parametrisation: `theta` from the `z` axis, `phi` azimuth.
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        Self(Vec3::new(
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
            theta.cos(),
        ))
    }

    pub fn vec(&self) -> Vec3 {
        self.0
    }

    /// `|self x other|`, the sine of the angle between the two lines.
    pub fn cross_norm(&self, other: &Direction) -> f64 {
        self.0.cross(&other.0).norm()
    }
}

/// Per-point geometry of the level set through `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSample {
    pub grad_norm: f64,
    pub normal: Direction,
    pub gauss: f64,
    pub mean: f64,
    /// Principal curvature of smaller magnitude.
    pub kappa1: f64,
    pub kappa2: f64,
}

/// Smooth cutoff `chi` switching on away from the exceptional levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub lambda: f64,
    /// The cutoff is `C^order` at both support edges.
    pub order: u32,
}

impl CutoffSpec {
    pub fn new(lambda: f64, order: u32) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "cutoff lambda must lie in (0, 1/2], got {lambda}"
            )));
        }
        if order < 2 {
            return Err(Error::InvalidParameter(format!(
                "cutoff smoothness order must be >= 2, got {order}"
            )));
        }
        Ok(Self { lambda, order })
    }

    pub fn inner_edge(&self) -> f64 {
        self.lambda / 3.0
    }

    pub fn outer_edge(&self) -> f64 {
        2.0 * self.lambda / 3.0
    }
}

impl Default for CutoffSpec {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            order: 3,
        }
    }
}

#[inline]
fn sin_cos3(p: &Vec3) -> ([f64; 3], [f64; 3]) {
    let (s1, c1) = p.x.sin_cos();
    let (s2, c2) = p.y.sin_cos();
    let (s3, c3) = p.z.sin_cos();
    ([s1, s2, s3], [c1, c2, c3])
}

/// `e(p) = 3 - cos p1 - cos p2 - cos p3`.
#[inline]
pub fn eval_e(p: &Vec3) -> f64 {
    3.0 - p.x.cos() - p.y.cos() - p.z.cos()
}

/// Gradient `(sin p1, sin p2, sin p3)`.
#[inline]
pub fn gradient(p: &Vec3) -> Vec3 {
    Vec3::new(p.x.sin(), p.y.sin(), p.z.sin())
}

/// Gradient and (diagonal) Hessian of `e`.
pub fn differentials(p: &Vec3) -> (Vec3, Matrix3<f64>) {
    let (s, c) = sin_cos3(p);
    (
        Vec3::new(s[0], s[1], s[2]),
        Matrix3::from_diagonal(&Vec3::new(c[0], c[1], c[2])),
    )
}

/// Unit normal `grad e / |grad e|`.
pub fn normal(p: &Vec3) -> Result<Direction> {
    let g = gradient(p);
    let n = g.norm();
    if n < CRITICAL_GRADIENT {
        return Err(Error::CriticalPoint([p.x, p.y, p.z], n));
    }
    Ok(Direction(g / n))
}

/// `M = K |grad e|^4 = s1^2 c2 c3 + s2^2 c1 c3 + s3^2 c1 c2` and its gradient.
pub fn m_field(p: &Vec3) -> (f64, Vec3) {
    let (s, c) = sin_cos3(p);
    let m_value = s[0] * s[0] * c[1] * c[2] + s[1] * s[1] * c[0] * c[2] + s[2] * s[2] * c[0] * c[1];
    let ccc2 = 2.0 * c[0] * c[1] * c[2];
    let grad = Vec3::new(
        s[0] * (ccc2 - s[1] * s[1] * c[2] - s[2] * s[2] * c[1]),
        s[1] * (ccc2 - s[0] * s[0] * c[2] - s[2] * s[2] * c[0]),
        s[2] * (ccc2 - s[1] * s[1] * c[0] - s[0] * s[0] * c[1]),
    );
    (m_value, grad)
}

/// `M` alone.
#[inline]
pub fn m_value(p: &Vec3) -> f64 {
    let (s, c) = sin_cos3(p);
    s[0] * s[0] * c[1] * c[2] + s[1] * s[1] * c[0] * c[2] + s[2] * s[2] * c[0] * c[1]
}

/// Gauss and mean curvature of the level set through `p`, with principal
/// curvatures ordered by magnitude (ties: negative first).
pub fn curvature(p: &Vec3) -> Result<CurvatureSample> {
    let (s, c) = sin_cos3(p);
    let g2 = s[0] * s[0] + s[1] * s[1] + s[2] * s[2];
    let g = g2.sqrt();
    if g < CRITICAL_GRADIENT {
        return Err(Error::CriticalPoint([p.x, p.y, p.z], g));
    }
    let m = s[0] * s[0] * c[1] * c[2] + s[1] * s[1] * c[0] * c[2] + s[2] * s[2] * c[0] * c[1];
    let gauss = m / (g2 * g2);
    let sum_c = c[0] + c[1] + c[2];
    let weighted = s[0] * s[0] * c[0] + s[1] * s[1] * c[1] + s[2] * s[2] * c[2];
    let mean = (sum_c - weighted / g2) / g;
    let (kappa1, kappa2) = principal_pair(mean, gauss);
    Ok(CurvatureSample {
        grad_norm: g,
        normal: Direction(Vec3::new(s[0], s[1], s[2]) / g),
        gauss,
        mean,
        kappa1,
        kappa2,
    })
}

/// Roots of `x^2 - h x + k`, smaller magnitude first.
pub(crate) fn principal_pair(h: f64, k: f64) -> (f64, f64) {
    let disc = (h * h - 4.0 * k).max(0.0).sqrt();
    // Avoid cancellation: compute the larger-magnitude root directly.
    let big = if h >= 0.0 { 0.5 * (h + disc) } else { 0.5 * (h - disc) };
    let small = if big != 0.0 { k / big } else { 0.0 };
    let (a, b) = (small, big);
    if a.abs() < b.abs() || (a.abs() == b.abs() && a <= b) {
        (a, b)
    } else {
        (b, a)
    }
}

/// `|||a|||`: distance from `a` to the exceptional set `{0, 2, 3, 4, 6}`.
pub fn triple_norm(a: f64) -> f64 {
    EXCEPTIONAL_LEVELS
        .iter()
        .map(|v| (a - v).abs())
        .fold(f64::INFINITY, f64::min)
}

/// `|||a||| >= lambda`, up to rounding (so that `a = 2 + lambda` qualifies).
pub fn is_regular(a: f64, lambda: f64) -> bool {
    triple_norm(a) >= lambda - 1e-12
}

/// Distance from `a` to the critical values `{0, 2, 4, 6}` only.
pub fn critical_distance(a: f64) -> f64 {
    CRITICAL_VALUES
        .iter()
        .map(|v| (a - v).abs())
        .fold(f64::INFINITY, f64::min)
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Generalised smoothstep on `[0, 1]`, `C^order` at both ends.
pub fn smoothstep(x: f64, order: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let k = order;
    let poly: f64 = (0..=k)
        .map(|n| binomial(k + n, n) * binomial(2 * k + 1, k - n) * (-x).powi(n as i32))
        .sum();
    (x.powi(k as i32 + 1) * poly).clamp(0.0, 1.0)
}

/// The cutoff `chi(t)`: 0 when `|||t||| <= lambda/3`, 1 when
/// `|||t||| >= 2 lambda/3`, a smoothstep in between.
pub fn chi(t: f64, spec: &CutoffSpec) -> f64 {
    let d = triple_norm(t);
    let lo = spec.inner_edge();
    smoothstep((d - lo) / lo, spec.order)
}

/// Orthonormal basis of the plane orthogonal to `n`.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vec3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// `P e'' P` restricted to the tangent plane: its eigenpairs, smaller
/// `|eigenvalue|` first. Eigenvalues divided by `|grad e|` are the principal
/// curvatures.
pub fn projected_hessian_eigen(p: &Vec3) -> Result<[(f64, Vec3); 2]> {
    let (s, c) = sin_cos3(p);
    let g = Vec3::new(s[0], s[1], s[2]);
    let gn = g.norm();
    if gn < CRITICAL_GRADIENT {
        return Err(Error::CriticalPoint([p.x, p.y, p.z], gn));
    }
    let n = g / gn;
    let (t1, t2) = tangent_basis(&n);
    let hess = |u: &Vec3, v: &Vec3| c[0] * u.x * v.x + c[1] * u.y * v.y + c[2] * u.z * v.z;
    let (a11, a12, a22) = (hess(&t1, &t1), hess(&t1, &t2), hess(&t2, &t2));
    let half_tr = 0.5 * (a11 + a22);
    let rad = (0.25 * (a11 - a22).powi(2) + a12 * a12).sqrt();
    let (l1, l2) = (half_tr - rad, half_tr + rad);
    let eigvec = |l: f64| -> Vec3 {
        // (A - l) v = 0; pick the better-conditioned row.
        let (x, y) = if (a11 - l).abs() + a12.abs() >= (a22 - l).abs() + a12.abs() {
            (a12, l - a11)
        } else {
            (l - a22, a12)
        };
        let v = t1 * x + t2 * y;
        let vn = v.norm();
        if vn < 1e-300 {
            t1
        } else {
            v / vn
        }
    };
    let (mut e1, mut e2) = ((l1, eigvec(l1)), (l2, eigvec(l2)));
    if rad < 1e-300 {
        e1.1 = t1;
        e2.1 = t2;
    } else {
        // Make the pair exactly orthogonal.
        e2.1 = n.cross(&e1.1);
    }
    if e1.0.abs() <= e2.0.abs() {
        Ok([e1, e2])
    } else {
        Ok([e2, e1])
    }
}

/// Newton projection of `p` onto `{e = a}` along the gradient.
pub fn project_to_level(p: &Vec3, a: f64, max_iter: usize, tol: f64) -> Vec3 {
    let mut x = *p;
    for _ in 0..max_iter {
        let r = eval_e(&x) - a;
        if r.abs() <= tol {
            break;
        }
        let g = gradient(&x);
        let g2 = g.norm_squared();
        if g2 < CRITICAL_GRADIENT * CRITICAL_GRADIENT {
            break;
        }
        x -= g * (r / g2);
    }
    x
}
