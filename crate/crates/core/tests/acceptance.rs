//! Acceptance run: one PASS/FAIL line per criterion with the measured numbers.
//!
//! Criteria that are out of reach at desk scale are reported as FAIL rather
//! than hidden; the process exits non-zero on any FAIL only when
//! `ISOENERGY_ACCEPTANCE_STRICT=1`, so that a plain `cargo test` still runs
//! every other test target.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::{Duration, Instant};

use isoenergy::curvegeom::{
    check_assumptions, dense_tangential_scan, extract_gamma, find_tangential_points, normal_preimages,
    CertificateConfig, GammaCurve, TangentialSet,
};
use isoenergy::denominators::{
    dyadic_etas, eta_sweep, four_denominator, four_denominator_direct, DenomKind, ResolventParams, SweepConfig,
    SweepReport,
};
use isoenergy::dispersion::{self, curvature, Vec3};
use isoenergy::levelset::{coarea_profile, extract_surface, integrate_surface, MeshCurvature, SurfaceMesh};
use isoenergy::oscillatory::{
    decay_scan, l4_integral, l4_self_test, log_radii, L4Config, MuHatQuadrature, QuadratureConfig,
};
use isoenergy::rng::{random_direction, task_rng};
use isoenergy::{Direction, TorusPoint};
use rand::Rng;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn level(a: f64, n: usize) -> (SurfaceMesh, GammaCurve, TangentialSet) {
    let mesh = extract_surface(a, n).unwrap();
    let mut gamma = extract_gamma(a, &mesh).unwrap();
    let tset = find_tangential_points(a, &gamma).unwrap();
    gamma.attach_tangential(&tset);
    (mesh, gamma, tset)
}

/// Closed forms against the shape operator of a quartic height fit to the
/// N=128 mesh. Errors are relative to the size of the shape operator
/// (`|kappa2|`, and `kappa2^2` for K): K and H both vanish along curves, where
/// a pointwise ratio measures nothing.
fn curvature_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = task_rng(2024, 0);
    let (mut worst_k, mut worst_h) = (0.0f64, 0.0f64);
    let mut pointwise = Vec::new();
    for a in [0.5, 1.5, 2.5, 3.5] {
        let mesh = extract_surface(a, 128).unwrap();
        let est = MeshCurvature::new(&mesh, 2);
        for _ in 0..50 {
            let v = rng.gen_range(0..mesh.vertices.len());
            let g = &mesh.geometry[v];
            let Some((k, h)) = est.at(v) else {
                return verdict(false, format!("fit failed at a = {a}, vertex {v}"));
            };
            let s = g.kappa2.abs();
            worst_k = worst_k.max((k - g.gauss).abs() / (s * s));
            worst_h = worst_h.max((h - g.mean).abs() / s);
            pointwise.push((k - g.gauss).abs() / g.gauss.abs());
        }
    }
    pointwise.sort_by(f64::total_cmp);
    let t = secs(start.elapsed());
    verdict(
        worst_k <= 1e-3 && worst_h <= 1e-3 && t < 60.0,
        format!(
            "200 vertices over a in {{0.5,1.5,2.5,3.5}}, N=128: max |dK|/k2^2 = {worst_k:.2e}, max |dH|/|k2| = {worst_h:.2e} \
             (median pointwise |dK/K| = {:.2e}); {t:.1} s",
            pointwise[pointwise.len() / 2]
        ),
    )
}

fn exact_values() -> Verdict {
    let s = curvature(&Vec3::repeat(PI / 3.0)).unwrap();
    let u = curvature(&Vec3::repeat(FRAC_PI_2)).unwrap();
    let errs = [(s.gauss - 1.0 / 9.0).abs(), (s.mean - 2.0 / 3.0).abs(), u.gauss.abs(), u.mean.abs()];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    verdict(
        worst <= 1e-12,
        format!("K(pi/3) = {:.16}, H(pi/3) = {:.16}, K, H at pi/2 = {:.1e}, {:.1e}", s.gauss, s.mean, u.gauss, u.mean),
    )
}

fn gauss_bonnet() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for a in [1.0, 2.5, 3.5] {
        let mesh = extract_surface(a, 128).unwrap();
        let chi = mesh.euler_characteristic();
        let total = integrate_surface(&mesh, &mesh.gauss());
        let expected = 2.0 * PI * chi as f64;
        let rel = (total - expected).abs() / expected.abs();
        pass &= rel <= 0.03;
        parts.push(format!("a={a}: chi={chi}, int K = {total:.4}, rel {rel:.1e}"));
    }
    verdict(pass, parts.join("; "))
}

fn coarea_identity() -> Verdict {
    let exact = 8.0 * PI.powi(3);
    let p = coarea_profile(128, 60).unwrap();
    let (m, h) = (p.total_mass_mesh(), p.total_mass_histogram());
    let (rm, rh) = ((m - exact).abs() / exact, (h - exact).abs() / exact);
    verdict(
        rm <= 0.005 && rh <= 0.005,
        format!("N=128: mesh {m:.4} (rel {rm:.1e}), histogram {h:.4} (rel {rh:.1e}) vs (2pi)^3 = {exact:.4}"),
    )
}

fn gamma_and_tangential() -> Verdict {
    let start = Instant::now();
    let (_, gamma, tset) = level(2.5, 64);
    let reci: Vec<f64> = gamma.samples().filter_map(|s| s.reci_residual).collect();
    let worst_reci = reci.iter().copied().fold(0.0, f64::max);
    let target = TorusPoint::new(FRAC_PI_2, FRAC_PI_2, PI / 3.0);
    let hit = tset.points.iter().map(|p| p.point.distance(&target)).fold(f64::INFINITY, f64::min);
    let zeros = dense_tangential_scan(&gamma, 8, 1e-6);
    let stray = zeros.iter().map(|z| tset.distance(z)).fold(0.0, f64::max);
    let t = secs(start.elapsed());
    verdict(
        worst_reci <= 1e-6 && hit <= 1e-6 && stray <= 1e-3 && t < 120.0,
        format!(
            "a=2.5, N=64: {} Gamma samples ({} with all |cos p_j| > 1e-3), max reci residual {worst_reci:.1e}; \
             {} tangential points, (pi/2, pi/2, pi/3) at {hit:.1e}; {} scan zeros, farthest {stray:.1e}; {t:.1} s",
            gamma.samples().count(),
            reci.len(),
            tset.len(),
            zeros.len()
        ),
    )
}

fn certificates() -> Verdict {
    let cert = check_assumptions(&CertificateConfig::default()).unwrap();
    let (c3, c6) = (cert.c3.unwrap_or(0.0), cert.c6.unwrap_or(0.0));
    let mut rng = task_rng(3, 0);
    let mut convex = (usize::MAX, 0usize);
    for a in [0.5, 1.0, 1.5] {
        for _ in 0..500 {
            let n = normal_preimages(a, &random_direction(&mut rng)).len();
            convex = (convex.0.min(n), convex.1.max(n));
        }
    }
    verdict(
        cert.c2 > 0.0 && c3 > 0.0 && c6 > 0.0 && cert.c4 <= 64 && convex == (1, 1),
        format!(
            "a in [2.3, 2.7]: C2 = {:.4}, C3 = {c3:.4}, C6 = {c6:.4}, preimages {}..{} over {} directions; \
             a in {{0.5, 1, 1.5}}: preimages {}..{} over 500 directions each",
            cert.c2, cert.c4_min, cert.c4, cert.directions, convex.0, convex.1
        ),
    )
}

fn fft_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = task_rng(8, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = ResolventParams {
            alpha: rng.gen_range(0.0..6.0),
            eta: rng.gen_range(0.05..0.5),
            u: [0; 3].map(|_| rng.gen_range(-PI..PI)),
            n: 8,
            doubling_tolerance: None,
            ..Default::default()
        };
        let spectral = four_denominator(&p).unwrap().value;
        let direct = four_denominator_direct(&p).unwrap();
        worst = worst.max((spectral - direct).abs() / direct);
    }
    let t = secs(start.elapsed());
    verdict(worst <= 1e-8 && t < 60.0, format!("N=8, 20 random (alpha, eta, u): max rel diff {worst:.1e}; {t:.1} s"))
}

fn sweep(kind: DenomKind, alpha: f64, etas: Vec<f64>, n: usize, q: [f64; 3], budget: Option<(usize, usize)>) -> SweepReport {
    eta_sweep(&SweepConfig {
        kind,
        template: ResolventParams { alpha, n, ..Default::default() },
        etas,
        q,
        resolution_budget: budget,
    })
    .unwrap()
}

fn values(r: &SweepReport) -> String {
    r.rows.iter().map(|row| format!("{:.4}", row.value)).collect::<Vec<_>>().join(", ")
}

fn lemma_scaling() -> Verdict {
    let r = sweep(DenomKind::One, 3.0, dyadic_etas(3, 8), 64, [0.0; 3], Some((64, 2048)));
    let s = r.power.params[0];
    let res = r.log_linear.max_rel_residual;
    verdict(
        res < 0.05 && s <= 0.05,
        format!(
            "alpha=3, eta=2^-3..2^-8, N up to {}: values [{}]; c1 + c2|log eta| max residual {res:.1e}, \
             eta^-s fit s = {s:.3}",
            r.rows.last().unwrap().n,
            values(&r)
        ),
    )
}

fn two_denominators() -> Verdict {
    let start = Instant::now();
    let line = sweep(DenomKind::Two, 3.0, dyadic_etas(2, 5), 256, [0.5, -0.5, 0.0], None);
    let generic = sweep(DenomKind::Two, 3.0, dyadic_etas(2, 5), 256, [1.1, 0.3, 2.0], None);
    let (sl, sg) = (line.power.params[0], generic.power.params[0]);
    let t = secs(start.elapsed());
    verdict(
        (sl - 0.5).abs() <= 0.15 && sg <= 0.2 && t < 600.0,
        format!(
            "alpha=3, eta=2^-2..2^-5, N=256: line shift (0.5,-0.5,0) s = {sl:.3}, generic shift (1.1,0.3,2) s = {sg:.3}; {t:.1} s"
        ),
    )
}

fn four_denominators() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [2.5, 3.5] {
        let r = sweep(DenomKind::Four, alpha, dyadic_etas(2, 5), 256, [0.0; 3], None);
        let s = r.power.params[0];
        let (poly, half) = (r.polylog.log_residual, r.power_half.log_residual);
        pass &= s <= 0.3 && poly < half;
        parts.push(format!(
            "alpha={alpha}: s = {s:.3}, |log eta|^k fit k = {:.2} residual {poly:.4} vs best s>=0.5 power residual {half:.4}",
            r.polylog.params[0]
        ));
    }
    verdict(pass, format!("eta=2^-2..2^-5, N=256: {}", parts.join("; ")))
}

fn theorem_bound_shape() -> Verdict {
    let radii = log_radii(10.0, 300.0, 300);
    let (mesh, gamma, tset) = level(2.5, 64);
    let q = MuHatQuadrature::new(&mesh, QuadratureConfig { r_max: 300.0, ..Default::default() }).unwrap();
    // 20 uniform directions, 8 Gamma normals, 2 tangential normals.
    let mut rng = task_rng(21, 0);
    let mut dirs: Vec<Direction> = (0..20).map(|_| random_direction(&mut rng)).collect();
    let samples: Vec<_> = gamma.samples().collect();
    dirs.extend(samples.iter().step_by(samples.len() / 8).take(8).map(|s| dispersion::normal(&s.point.vec()).unwrap()));
    dirs.extend(tset.normals().into_iter().take(2));
    let mut fitted = 0.0f64;
    let mut needed = 0.0f64;
    for w in &dirs {
        let s = decay_scan(&q, &tset, w, &radii).unwrap();
        for ((r, v), b) in s.radii.iter().zip(&s.values).zip(&s.bound) {
            if *r <= 30.0 {
                fitted = fitted.max(v / b);
            }
            needed = needed.max(v / b);
        }
    }

    let mut convex_min = f64::INFINITY;
    for a in [0.5, 1.0, 1.5] {
        let mesh = extract_surface(a, 32).unwrap();
        let q = MuHatQuadrature::new(&mesh, QuadratureConfig { r_max: 300.0, ..Default::default() }).unwrap();
        let empty = TangentialSet::empty(a);
        for _ in 0..2 {
            let s = decay_scan(&q, &empty, &random_direction(&mut rng), &log_radii(10.0, 300.0, 600)).unwrap();
            convex_min = convex_min.min(s.exponent);
        }
    }
    verdict(
        needed <= fitted && convex_min >= 0.9,
        format!(
            "a=2.5, {} directions x 300 radii in [10, 300]: C fitted on r <= 30 = {fitted:.4}, largest ratio needed = {needed:.4}; \
             convex levels min exponent {convex_min:.3}",
            dirs.len()
        ),
    )
}

fn l4_growth() -> Verdict {
    let (mesh, _, tset) = level(2.5, 32);
    let cfg = L4Config::default();
    let q = MuHatQuadrature::new(&mesh, QuadratureConfig::for_radius(64.0)).unwrap();
    let r = l4_integral(&q, &tset, &cfg).unwrap();
    let slope = r.power_slope();
    let self_test = l4_self_test(&tset.normals(), &cfg).unwrap();
    let worst_sigma = self_test
        .iter()
        .map(|(est, se, exact)| (est - exact).abs() / se.max(1e-12 * exact))
        .fold(0.0, f64::max);
    let js = r.points.iter().map(|p| format!("{:.4e}", p.j)).collect::<Vec<_>>().join(", ");
    verdict(
        slope <= 0.25 && worst_sigma <= 3.0,
        format!(
            "a=2.5, M=8..64, {} directions: J = [{js}], power slope {slope:.3}; ball-volume self-test within {worst_sigma:.2} sigma",
            r.directions
        ),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("curvature oracle", curvature_oracle),
        ("exact curvature values", exact_values),
        ("Gauss-Bonnet", gauss_bonnet),
        ("coarea identity", coarea_identity),
        ("Gamma and tangential points", gamma_and_tangential),
        ("assumption certificates", certificates),
        ("FFT oracle", fft_oracle),
        ("one-denominator log scaling", lemma_scaling),
        ("two-denominator degeneracy", two_denominators),
        ("four-denominator growth", four_denominators),
        ("decay bound shape", theorem_bound_shape),
        ("L4 growth", l4_growth),
    ];
    // Any argument that is not a flag filters criteria by substring, like the
    // standard harness.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name} [{:.1} s]: {}", secs(start.elapsed()), v.detail);
        if !v.pass {
            failed.push(name);
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        if std::env::var("ISOENERGY_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
