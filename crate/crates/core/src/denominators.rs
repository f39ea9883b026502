//! Resolvent-denominator integrals on periodic grids.
//!
//! All sums use the cell-centred grid `x_i = -pi + (i + 1/2) 2 pi / N`, which
//! never hits a critical point of `e` and is symmetric under `x -> -x`. The
//! discrete Fourier transform is taken with physical phases,
//! `h^(n) = sum_x h(x) e^{-i n.x}` for `n` in `[-N/2, N/2)^3`, so the
//! spectrum of an even real field is real and even.
//!
//! The four-denominator sum
//! `sum_{p,q,r} h(p) h(q) h(r) h(p + q + r - u)` over the grid (with
//! `p + q + r - u` reduced onto the grid, `u` a lattice shift) equals
//! `N^-3 sum_n h^(n) conj(h^(n))^3 e^{-i n.u}` exactly, which is how it is
//! evaluated; the direct `O(N^9)` sum is kept as an oracle.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dispersion::{chi, is_regular, CutoffSpec};
use crate::fit::{log_linear_fit, polylog_fit, power_fit, power_fit_min_exponent, ScalingFit};
use crate::levelset::grid_coord;
use crate::output::{fmt_f64, CsvTable};
use crate::{par, Error, Result};

/// Default relative tolerance of the resolution check.
pub const DOUBLING_TOLERANCE: f64 = 0.05;

/// Parameter block for the denominator integrals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventParams {
    pub alpha: f64,
    pub eta: f64,
    /// Only consulted where a statement needs `|||alpha||| >= lambda`.
    pub lambda: f64,
    /// Shift of the fourth denominator.
    pub u: [f64; 3],
    /// Grid points per axis (power of two).
    pub n: usize,
    pub cutoff: CutoffSpec,
    /// Multiply the resolvent by `chi(e(p))`.
    pub apply_cutoff: bool,
    /// Tolerance of the `N` vs `N/2` check; `None` skips the check.
    pub doubling_tolerance: Option<f64>,
}

impl Default for ResolventParams {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            eta: 1.0 / 32.0,
            lambda: 0.3,
            u: [0.0; 3],
            n: 64,
            cutoff: CutoffSpec::default(),
            apply_cutoff: false,
            doubling_tolerance: Some(DOUBLING_TOLERANCE),
        }
    }
}

impl ResolventParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 0.5) {
            return Err(Error::InvalidParameter(format!("eta must lie in (0, 1/2], got {}", self.eta)));
        }
        if !self.n.is_power_of_two() || self.n < 2 {
            return Err(Error::InvalidParameter(format!("N must be a power of two >= 2, got {}", self.n)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidParameter("alpha must be finite".into()));
        }
        Ok(())
    }

    fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    /// Grid spacing `2 pi / N`.
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    fn resolvent(&self, e: f64) -> f64 {
        let base = 1.0 / ((self.alpha - e).powi(2) + self.eta * self.eta).sqrt();
        if self.apply_cutoff {
            base * chi(e, &self.cutoff)
        } else {
            base
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Resolvent,
    Spectrum,
}

/// `N^3` complex samples, index `(i N + j) N + k`. Spectra are stored at
/// frequency `n_d = i_d` for `i_d < N/2` and `i_d - N` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub n: usize,
    pub kind: FieldKind,
    pub params: Option<ResolventParams>,
    pub data: Vec<Complex64>,
}

impl GridField {
    pub fn constant(n: usize, value: f64) -> Self {
        Self {
            n,
            kind: FieldKind::Resolvent,
            params: None,
            data: vec![Complex64::new(value, 0.0); n * n * n],
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    /// Value at the reflected grid point `x -> -x` (index `i -> N-1-i`).
    pub fn reflected(&self, idx: usize) -> Complex64 {
        let n = self.n;
        let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
        self.data[self.index(n - 1 - i, n - 1 - j, n - 1 - k)]
    }

    pub fn sum(&self) -> Complex64 {
        self.data.iter().sum()
    }
}

/// Samples `h(p) = [chi(e(p)) or 1] / |alpha - e(p) + i eta|` at the grid
/// midpoints.
pub fn resolvent_field(params: &ResolventParams, apply_cutoff: bool) -> Result<GridField> {
    params.validate()?;
    let p = ResolventParams {
        apply_cutoff,
        ..params.clone()
    };
    let n = p.n;
    let cos = symmetric_cos(n);
    let planes = par::map_range(n, |i| {
        let mut plane = Vec::with_capacity(n * n);
        for &cj in &cos {
            for &ck in &cos {
                let e = 3.0 - cos[i] - cj - ck;
                plane.push(Complex64::new(p.resolvent(e), 0.0));
            }
        }
        plane
    });
    Ok(GridField {
        n,
        kind: FieldKind::Resolvent,
        params: Some(p),
        data: planes.concat(),
    })
}

/// `cos x_i` on the midpoint grid, mirrored so that `i` and `N-1-i` agree
/// bit for bit.
fn symmetric_cos(n: usize) -> Vec<f64> {
    let mut c: Vec<f64> = (0..n).map(|i| grid_coord(i, n).cos()).collect();
    for i in n / 2..n {
        c[i] = c[n - 1 - i];
    }
    c
}

/// A value computed at resolution `n` with the `N/2` comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenomValue {
    pub value: f64,
    pub n: usize,
    /// `|V(N) - V(N/2)| / |V(N)|`, when checked.
    pub rel_change: Option<f64>,
    /// Distance between the requested and the lattice-rounded `u`.
    pub u_offset: f64,
    pub warnings: Vec<String>,
}

fn checked(params: &ResolventParams, f: impl Fn(&ResolventParams) -> Result<f64>) -> Result<DenomValue> {
    params.validate()?;
    let value = f(params)?;
    let mut rel_change = None;
    if let Some(tol) = params.doubling_tolerance {
        if params.n >= 4 {
            let coarse = f(&params.with_n(params.n / 2))?;
            let rel = (value - coarse).abs() / value.abs();
            rel_change = Some(rel);
            if !(rel < tol) {
                return Err(Error::UnderResolved {
                    n: params.n,
                    rel_change: rel,
                });
            }
        }
    }
    Ok(DenomValue {
        value,
        n: params.n,
        rel_change,
        u_offset: 0.0,
        warnings: Vec::new(),
    })
}

/// `sum over the grid of 1/|alpha - e + i eta|` times the cell volume.
fn one_sum(p: &ResolventParams) -> Result<f64> {
    let n = p.n;
    let half = n / 2;
    // cos is even on the symmetric grid: N/2 distinct values, each twice.
    let c = symmetric_cos(n);
    let rows = par::map_range(half, |i| {
        let mut acc = 0.0;
        for j in i..half {
            for k in j..half {
                let w = match (i == j, j == k) {
                    (true, true) => 1.0,
                    (true, false) | (false, true) => 3.0,
                    (false, false) => 6.0,
                };
                let e = 3.0 - c[i] - c[j] - c[k];
                acc += w * p.resolvent(e);
            }
        }
        acc
    });
    Ok(8.0 * rows.into_iter().sum::<f64>() * p.spacing().powi(3))
}

/// Riemann sum of `int dp / |alpha - e(p) + i eta|` over the torus.
pub fn one_denominator(params: &ResolventParams) -> Result<DenomValue> {
    checked(params, one_sum)
}

fn two_sum(p: &ResolventParams, q: &[f64; 3]) -> Result<f64> {
    let n = p.n;
    let x: Vec<f64> = (0..n).map(|i| grid_coord(i, n)).collect();
    let c: Vec<f64> = x.iter().map(|v| v.cos()).collect();
    let cq: [Vec<f64>; 3] = [0, 1, 2].map(|d| x.iter().map(|v| (v + q[d]).cos()).collect());
    let rows = par::map_range(n, |i| {
        let mut acc = 0.0;
        for j in 0..n {
            let e0 = 3.0 - c[i] - c[j];
            let eq0 = 3.0 - cq[0][i] - cq[1][j];
            for k in 0..n {
                acc += p.resolvent(e0 - c[k]) * p.resolvent(eq0 - cq[2][k]);
            }
        }
        acc
    });
    Ok(rows.into_iter().sum::<f64>() * p.spacing().powi(3))
}

/// Riemann sum of `int dp / (|alpha - e(p) + i eta| |alpha - e(p+q) + i eta|)`.
pub fn two_denominator(params: &ResolventParams, q: &[f64; 3]) -> Result<DenomValue> {
    checked(params, |p| two_sum(p, q))
}

fn fft_axis(data: &mut [Complex64], n: usize, axis: usize, planner: &mut FftPlanner<f64>) {
    let fft = planner.plan_fft_forward(n);
    let mut line = vec![Complex64::default(); n];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let stride = [n * n, n, 1][axis];
    for a in 0..n {
        for b in 0..n {
            let base = match axis {
                0 => a * n + b,
                1 => a * n * n + b,
                _ => (a * n + b) * n,
            };
            for (t, v) in line.iter_mut().enumerate() {
                *v = data[base + t * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (t, v) in line.iter().enumerate() {
                data[base + t * stride] = *v;
            }
        }
    }
}

/// Physical frequency of DFT index `i`.
#[inline]
pub fn frequency(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// 3D DFT with physical phases `h^(n) = sum_x h(x) e^{-i n.x}`.
pub fn fft_spectrum(field: &GridField) -> GridField {
    let n = field.n;
    let mut data = field.data.clone();
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        fft_axis(&mut data, n, axis, &mut planner);
    }
    // x_j = -pi + (j + 1/2) h  =>  e^{-i m x_j} = e^{i m (pi - h/2)} e^{-2 pi i m j / N}.
    let h = 2.0 * PI / n as f64;
    let phase: Vec<Complex64> = (0..n)
        .map(|i| {
            let m = frequency(i, n) as f64;
            Complex64::from_polar(1.0, m * (PI - 0.5 * h))
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            let pij = phase[i] * phase[j];
            let row = &mut data[(i * n + j) * n..(i * n + j + 1) * n];
            for (k, v) in row.iter_mut().enumerate() {
                *v *= pij * phase[k];
            }
        }
    }
    GridField {
        n,
        kind: FieldKind::Spectrum,
        params: field.params.clone(),
        data,
    }
}

/// Lattice shift nearest to `u`: integer multiples of the grid spacing.
pub fn round_shift(u: &[f64; 3], n: usize) -> ([i64; 3], f64) {
    let h = 2.0 * PI / n as f64;
    let m = u.map(|v| (v / h).round() as i64);
    let off = (0..3).map(|d| (u[d] - m[d] as f64 * h).powi(2)).sum::<f64>().sqrt();
    (m, off)
}

fn four_from_spectrum(spec: &GridField, m: &[i64; 3]) -> f64 {
    let n = spec.n;
    let h = 2.0 * PI / n as f64;
    let shift: [Vec<Complex64>; 3] = [0, 1, 2].map(|d| {
        (0..n)
            .map(|i| Complex64::from_polar(1.0, -(frequency(i, n) * m[d]) as f64 * h))
            .collect()
    });
    let mut total = Complex64::default();
    for i in 0..n {
        for j in 0..n {
            let sij = shift[0][i] * shift[1][j];
            let mut row = Complex64::default();
            for k in 0..n {
                let v = spec.data[(i * n + j) * n + k];
                let c = v.conj();
                row += v * c * c * c * shift[2][k];
            }
            total += sij * row;
        }
    }
    total.re / (n as f64).powi(3) * h.powi(9)
}

fn four_sum(p: &ResolventParams) -> Result<f64> {
    let (m, _) = round_shift(&p.u, p.n);
    let field = resolvent_field(p, p.apply_cutoff)?;
    let spec = fft_spectrum(&field);
    Ok(four_from_spectrum(&spec, &m))
}

/// The discrete four-denominator sum times `(2 pi / N)^9`, via the spectrum.
/// `u` is rounded to the nearest lattice shift; a nonzero offset is reported
/// as a warning.
pub fn four_denominator(params: &ResolventParams) -> Result<DenomValue> {
    let mut v = checked(params, four_sum)?;
    let (_, off) = round_shift(&params.u, params.n);
    v.u_offset = off;
    if off > 0.0 {
        v.warnings.push(format!("u shift rounded to the lattice, offset {off:.3e}"));
    }
    Ok(v)
}

/// Direct `O(N^9)` evaluation of the same discrete sum; oracle for small `N`.
pub fn four_denominator_direct(params: &ResolventParams) -> Result<f64> {
    params.validate()?;
    let n = params.n;
    let field = resolvent_field(params, params.apply_cutoff)?;
    let h: Vec<f64> = field.data.iter().map(|c| c.re).collect();
    let (m, _) = round_shift(&params.u, n);
    let ni = n as i64;
    // On the midpoint grid x_i + x_j + x_k - m h = x_l with l = i + j + k + 1 - m.
    let target = |a: usize, b: usize, c: usize, d: usize| -> usize {
        (a as i64 + b as i64 + c as i64 + 1 - m[d]).rem_euclid(ni) as usize
    };
    let n3 = n * n * n;
    let split = |idx: usize| (idx / (n * n), (idx / n) % n, idx % n);
    let partial = par::map_range(n3, |pi| {
        let (p0, p1, p2) = split(pi);
        let hp = h[pi];
        let mut acc = 0.0;
        for qi in 0..n3 {
            let (q0, q1, q2) = split(qi);
            let hpq = hp * h[qi];
            for ri in 0..n3 {
                let (r0, r1, r2) = split(ri);
                let l = (target(p0, q0, r0, 0) * n + target(p1, q1, r1, 1)) * n + target(p2, q2, r2, 2);
                acc += hpq * h[ri] * h[l];
            }
        }
        acc
    });
    Ok(partial.into_iter().sum::<f64>() * params.spacing().powi(9))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenomKind {
    One,
    Two,
    Four,
}

impl DenomKind {
    pub fn name(&self) -> &'static str {
        match self {
            DenomKind::One => "one",
            DenomKind::Two => "two",
            DenomKind::Four => "four",
        }
    }
}

impl std::str::FromStr for DenomKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(DenomKind::One),
            "two" => Ok(DenomKind::Two),
            "four" => Ok(DenomKind::Four),
            _ => Err(Error::InvalidParameter(format!("unknown denominator kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingModel {
    Power,
    LogLinear,
    Polylog,
}

/// One point of an `eta` sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub n: usize,
    pub value: f64,
    pub rel_change: Option<f64>,
}

/// Sweep configuration. With `resolution_budget = Some((lo, hi))` each `eta`
/// uses the smallest power of two `N >= max(lo, 8/eta)`, capped at `hi`;
/// otherwise `template.n` is used throughout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kind: DenomKind,
    pub template: ResolventParams,
    pub etas: Vec<f64>,
    /// `q` for two-denominator sweeps (the shift `u` lives in the template).
    pub q: [f64; 3],
    pub resolution_budget: Option<(usize, usize)>,
}

/// Values and competing scaling fits of an `eta` sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: DenomKind,
    pub alpha: f64,
    pub shift: [f64; 3],
    pub rows: Vec<SweepRow>,
    /// `C eta^-s`.
    pub power: ScalingFit,
    /// Best `C eta^-s` with `s >= 1/2`.
    pub power_half: ScalingFit,
    /// `c1 + c2 |log eta|`.
    pub log_linear: ScalingFit,
    /// `C |log eta|^k`.
    pub polylog: ScalingFit,
    /// Lowest log-residual among power, log-linear and polylog.
    pub preferred: ScalingModel,
    /// `|||alpha||| >= lambda`; runs outside are exploratory.
    pub within_hypotheses: bool,
    pub warnings: Vec<String>,
}

impl SweepReport {
    /// Rows as `kind,alpha,eta,N,q_or_u,value,doubling_check_rel_change`;
    /// the shift is written as space-separated components.
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&SWEEP_COLUMNS);
        let shift = self.shift.map(fmt_f64).join(" ");
        for r in &self.rows {
            t.push(vec![
                self.kind.name().to_string(),
                fmt_f64(self.alpha),
                fmt_f64(r.eta),
                r.n.to_string(),
                shift.clone(),
                fmt_f64(r.value),
                r.rel_change.map(fmt_f64).unwrap_or_default(),
            ]);
        }
        t
    }
}

pub const SWEEP_COLUMNS: [&str; 7] = ["kind", "alpha", "eta", "N", "q_or_u", "value", "doubling_check_rel_change"];

/// `N` for one `eta` under a resolution budget.
pub fn budget_resolution(eta: f64, lo: usize, hi: usize) -> usize {
    let need = (8.0 / eta).ceil() as usize;
    need.max(lo).next_power_of_two().min(hi)
}

/// Runs the sweep and fits the scaling models.
pub fn eta_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.etas.len() < 2 {
        return Err(Error::InvalidParameter("an eta sweep needs at least two values".into()));
    }
    let mut rows = Vec::with_capacity(cfg.etas.len());
    let mut warnings = Vec::new();
    for &eta in &cfg.etas {
        let n = match cfg.resolution_budget {
            Some((lo, hi)) => budget_resolution(eta, lo, hi),
            None => cfg.template.n,
        };
        let p = ResolventParams {
            eta,
            n,
            ..cfg.template.clone()
        };
        let v = match cfg.kind {
            DenomKind::One => one_denominator(&p)?,
            DenomKind::Two => two_denominator(&p, &cfg.q)?,
            DenomKind::Four => four_denominator(&p)?,
        };
        if (n as f64) * eta < 8.0 {
            warnings.push(format!("eta = {eta}: N = {n} is below the 8/eta budget"));
        }
        warnings.extend(v.warnings.iter().cloned());
        rows.push(SweepRow {
            eta,
            n,
            value: v.value,
            rel_change: v.rel_change,
        });
    }
    let etas: Vec<f64> = rows.iter().map(|r| r.eta).collect();
    let vals: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let power = power_fit(&etas, &vals);
    let power_half = power_fit_min_exponent(&etas, &vals, 0.5);
    let log_linear = log_linear_fit(&etas, &vals);
    let polylog = polylog_fit(&etas, &vals);
    let preferred = [
        (ScalingModel::Power, power.log_residual),
        (ScalingModel::LogLinear, log_linear.log_residual),
        (ScalingModel::Polylog, polylog.log_residual),
    ]
    .into_iter()
    .min_by(|a, b| a.1.total_cmp(&b.1))
    .map(|(m, _)| m)
    .unwrap_or(ScalingModel::Power);
    let shift = match cfg.kind {
        DenomKind::Two => cfg.q,
        _ => cfg.template.u,
    };
    Ok(SweepReport {
        kind: cfg.kind,
        alpha: cfg.template.alpha,
        shift,
        rows,
        power,
        power_half,
        log_linear,
        polylog,
        preferred,
        within_hypotheses: is_regular(cfg.template.alpha, cfg.template.lambda),
        warnings,
    })
}

/// `log2`-spaced `eta` values `2^-k` for `k` in `lo..=hi`.
pub fn dyadic_etas(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(-k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(alpha: f64, eta: f64, n: usize) -> ResolventParams {
        ResolventParams {
            alpha,
            eta,
            n,
            doubling_tolerance: None,
            ..Default::default()
        }
    }

    #[test]
    fn off_range_alpha_bounds() {
        let f = resolvent_field(&params(10.0, 0.1, 16), false).unwrap();
        assert!(f.data.iter().all(|v| v.re <= 0.25));
        let v = one_denominator(&params(10.0, 0.1, 32)).unwrap().value;
        let vol = (2.0 * PI).powi(3);
        assert!(v >= vol / 10.0 && v <= vol / 4.0);
    }

    #[test]
    fn field_is_even_and_sums_to_one_denominator() {
        let p = params(3.0, 1.0 / 32.0, 64);
        let f = resolvent_field(&p, false).unwrap();
        for idx in (0..f.data.len()).step_by(97) {
            assert_eq!(f.data[idx], f.reflected(idx));
        }
        let riemann = f.sum().re * p.spacing().powi(3);
        let one = one_denominator(&p).unwrap().value;
        assert!((riemann - one).abs() <= 1e-10 * one);
    }

    #[test]
    fn constant_spectrum() {
        let s = fft_spectrum(&GridField::constant(8, 1.0));
        assert!((s.data[0].re - 512.0).abs() < 1e-9);
        assert!(s.data[1..].iter().all(|v| v.norm() < 1e-9));
    }

    #[test]
    fn resolvent_spectrum_is_real_and_parseval_holds() {
        let f = resolvent_field(&params(2.5, 0.125, 16), true).unwrap();
        let s = fft_spectrum(&f);
        let max_re = s.data.iter().map(|v| v.re.abs()).fold(0.0, f64::max);
        let max_im = s.data.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        assert!(max_im / max_re <= 1e-10);
        let lhs: f64 = f.data.iter().map(|v| v.norm_sqr()).sum();
        let rhs: f64 = s.data.iter().map(|v| v.norm_sqr()).sum::<f64>() / 4096.0;
        assert!((lhs - rhs).abs() <= 1e-10 * lhs);
    }

    #[test]
    fn spectral_four_matches_direct_sum() {
        let mut p = params(3.0, 0.25, 4);
        p.u = [0.3, -1.0, 2.0];
        let spectral = four_denominator(&p).unwrap();
        let direct = four_denominator_direct(&p).unwrap();
        assert!((spectral.value - direct).abs() <= 1e-10 * direct);
        assert!(spectral.u_offset > 0.0 && !spectral.warnings.is_empty());
    }

    #[test]
    fn under_resolution_is_detected() {
        let p = ResolventParams {
            alpha: 3.0,
            eta: 1.0 / 256.0,
            n: 8,
            ..Default::default()
        };
        assert!(matches!(one_denominator(&p), Err(Error::UnderResolved { .. })));
    }

    #[test]
    fn budget() {
        assert_eq!(budget_resolution(1.0 / 256.0, 64, 2048), 2048);
        assert_eq!(budget_resolution(0.125, 64, 2048), 64);
        assert_eq!(budget_resolution(1.0 / 1024.0, 64, 2048), 2048);
    }
}
