use std::sync::OnceLock;

use isoenergy::curvegeom::{extract_gamma, find_tangential_points, gamma_normal_distance, GammaCurve, TangentialSet};
use isoenergy::dispersion::{self, Vec3};
use isoenergy::levelset::{coarea_phi, extract_surface, Mesher, SurfaceMesh};
use isoenergy::oscillatory::*;
use isoenergy::rng::{random_direction, task_rng};
use isoenergy::Direction;
use proptest::prelude::*;

struct Level {
    mesh: SurfaceMesh,
    gamma: GammaCurve,
    tset: TangentialSet,
}

fn level(a: f64, n: usize) -> Level {
    let mesh = extract_surface(a, n).unwrap();
    let mut gamma = extract_gamma(a, &mesh).unwrap();
    let tset = find_tangential_points(a, &gamma).unwrap();
    gamma.attach_tangential(&tset);
    Level { mesh, gamma, tset }
}

fn quad(mesh: &SurfaceMesh, r_max: f64) -> MuHatQuadrature {
    MuHatQuadrature::new(mesh, QuadratureConfig { r_max, ..Default::default() }).unwrap()
}

fn small_quad() -> &'static MuHatQuadrature {
    static Q: OnceLock<MuHatQuadrature> = OnceLock::new();
    Q.get_or_init(|| quad(&extract_surface(2.5, 32).unwrap(), 40.0))
}

/// Directions at least `min_dist` away from every Gamma normal.
fn generic_directions(gamma: &GammaCurve, count: usize, min_dist: f64, seed: u64) -> Vec<Direction> {
    let mut rng = task_rng(seed, 0);
    let mut out = Vec::new();
    while out.len() < count {
        let w = random_direction(&mut rng);
        if gamma_normal_distance(gamma, &w) >= min_dist {
            out.push(w);
        }
    }
    out
}

#[test]
fn zero_frequency_is_phi() {
    let mesh = extract_surface(2.5, 32).unwrap();
    let phi = coarea_phi(&Mesher::new(256).unwrap(), 2.5);
    let v = mu_hat(&mesh, &Vec3::zeros()).unwrap();
    assert!(v.im.abs() < 1e-12 * v.re);
    assert!((v.re - phi).abs() <= 0.02 * phi, "{} vs {phi}", v.re);
    assert!((small_quad().mass() - phi).abs() <= 1e-3 * phi);
}

#[test]
fn convex_levels_decay_like_one_over_r() {
    let radii = log_radii(10.0, 300.0, 600);
    let mut rng = task_rng(5, 0);
    for a in [0.5, 1.0, 1.5] {
        let mesh = extract_surface(a, 32).unwrap();
        let q = quad(&mesh, 300.0);
        let tset = TangentialSet::empty(a);
        for _ in 0..2 {
            let w = random_direction(&mut rng);
            let s = decay_scan(&q, &tset, &w, &radii).unwrap();
            assert!(s.fit_points >= 6);
            assert!(s.exponent >= 0.9, "a = {a}, omega = {:?}: exponent {}", w, s.exponent);
        }
    }
}

#[test]
fn decay_depends_on_direction_class() {
    let lv = level(2.5, 64);
    let q = quad(&lv.mesh, 300.0);
    let radii = log_radii(10.0, 300.0, 600);

    let generic = generic_directions(&lv.gamma, 1, 0.3, 9)[0];
    let s = decay_scan(&q, &lv.tset, &generic, &radii).unwrap();
    assert!(s.exponent >= 0.9, "generic exponent {}", s.exponent);
    assert!(s.d_value > 0.0);

    // The most non-tangential point of Gamma.
    let p = lv.gamma.samples().max_by(|x, y| x.d_a.total_cmp(&y.d_a)).unwrap();
    let nu = dispersion::normal(&p.point.vec()).unwrap();
    let s = decay_scan(&q, &lv.tset, &nu, &radii).unwrap();
    assert!((0.65..=1.1).contains(&s.exponent), "Gamma-normal exponent {}", s.exponent);

    let tangential = lv.tset.normals()[0];
    let s = decay_scan(&q, &lv.tset, &tangential, &radii).unwrap();
    assert_eq!(s.d_value, 0.0);
    assert!(s.exponent >= 0.45, "tangential exponent {}", s.exponent);
    assert!(s.exponent < 0.9);
}

#[test]
fn single_constant_bounds_every_direction() {
    let radii = log_radii(10.0, 300.0, 300);
    for a in [2.3, 2.5, 3.5] {
        let lv = level(a, 64);
        let q = quad(&lv.mesh, 300.0);
        let mut dirs = generic_directions(&lv.gamma, 3, 0.2, 2);
        let samples: Vec<_> = lv.gamma.samples().collect();
        dirs.extend(samples.iter().step_by(samples.len() / 3).map(|s| dispersion::normal(&s.point.vec()).unwrap()));
        dirs.push(lv.tset.normals()[0]);
        let scans: Vec<DecayScan> = dirs.iter().map(|w| decay_scan(&q, &lv.tset, w, &radii).unwrap()).collect();
        // Fit on the first half decade, check on the whole range.
        let fit = scans
            .iter()
            .flat_map(|s| s.radii.iter().zip(s.values.iter().zip(&s.bound)).filter(|(r, _)| **r <= 30.0).map(|(_, (v, b))| v / b))
            .fold(0.0, f64::max);
        let all = scans.iter().map(DecayScan::bound_ratio).fold(0.0, f64::max);
        assert!(all <= fit, "a = {a}: fitted C {fit}, needed {all}");
        let csv = decay_csv(&scans, fit).render(None);
        assert_eq!(csv.lines().next().unwrap(), DECAY_COLUMNS.join(","));
        assert_eq!(csv.lines().count(), 1 + scans.len() * radii.len());
    }
}

#[test]
fn mesh_doubling_changes_little() {
    let q32 = quad(&extract_surface(2.5, 32).unwrap(), 300.0);
    let q64 = quad(&extract_surface(2.5, 64).unwrap(), 300.0);
    let phi = q64.mass();
    let mut rng = task_rng(13, 0);
    for i in 0..40 {
        let r = 1.0 + 7.5 * i as f64;
        let xi = random_direction(&mut rng).vec() * r;
        let (a, b) = (q32.eval(&xi).unwrap(), q64.eval(&xi).unwrap());
        // Relative to the envelope Phi / <r>: pointwise ratios are meaningless at lobe zeros.
        let change = (a.norm() - b.norm()).abs() / (phi / bracket(r));
        assert!(change < 0.02, "r = {r}: change {change}");
    }
}

#[test]
fn ray_profile_matches_direct_quadrature() {
    let q = small_quad();
    let w = Direction::from_xyz(0.2, -0.7, 0.4).unwrap();
    let prof = RayProfile::new(q, &w, 40.0).unwrap();
    assert!((prof.total_mass() - q.mass()).abs() <= 1e-9 * q.mass());
    for r in [0.0, 3.3, 17.0, 39.5] {
        let direct = q.eval(&(w.vec() * r)).unwrap();
        let ray = prof.eval(r);
        assert!((ray - direct).norm() <= 1e-3 * q.mass() / bracket(r), "r = {r}");
    }
    let (dr, grid) = prof.eval_grid(0.05, 200);
    assert!(dr <= 0.05);
    for i in [0, 37, 199] {
        assert!((grid[i] - prof.eval(dr * i as f64)).norm() <= 1e-9 * q.mass());
    }
}

#[test]
fn phase_budget_is_enforced() {
    let mesh = extract_surface(2.5, 32).unwrap();
    let cfg = QuadratureConfig { r_max: 1e4, max_triangles: 10_000, ..Default::default() };
    assert!(MuHatQuadrature::new(&mesh, cfg).is_err());
    assert!(small_quad().eval(&Vec3::new(100.0, 0.0, 0.0)).is_err());
}

#[test]
fn l4_tail_is_integrable_at_convex_level() {
    let mesh = extract_surface(1.0, 32).unwrap();
    let q = quad(&mesh, 4.0);
    let cfg = L4Config { radii: vec![2.0, 4.0], ..Default::default() };
    let r = l4_integral(&q, &TangentialSet::empty(1.0), &cfg).unwrap();
    let (j2, j4) = (r.points[0].j, r.points[1].j);
    assert!(j4 > j2 && j4 - j2 <= j2, "J(2) = {j2}, J(4) = {j4}");
    assert_eq!(r.to_csv().render(None).lines().next().unwrap(), "a,M,J,stderr");
}

#[test]
fn l4_estimator_reproduces_ball_volume() {
    let lv = level(2.5, 32);
    for (est, stderr, exact) in l4_self_test(&lv.tset.normals(), &L4Config::default()).unwrap() {
        assert!((est - exact).abs() <= 3.0 * stderr.max(1e-12 * exact), "{est} +- {stderr} vs {exact}");
    }
    // Without caps the estimator is exact.
    for (est, _, exact) in l4_self_test(&[], &L4Config::default()).unwrap() {
        assert!((est - exact).abs() <= 1e-9 * exact);
    }
}

#[test]
fn dyadic_cells_at_generic_direction() {
    let lv = level(2.5, 64);
    let w = generic_directions(&lv.gamma, 1, 0.3, 4)[0];
    let cfg = DyadicConfig { depth: 4, subdivisions: 8, ..Default::default() };
    let r = dyadic_diagnostics(&lv.mesh, &lv.tset, &w, &cfg).unwrap();
    assert_eq!(r.violations, 0, "required constant {}", r.required_constant);
    for (row, band) in r.row_sums.iter().zip(&r.band_volumes) {
        assert!(*row <= band * (1.0 + 1e-12));
    }
    for (k, band) in r.band_volumes.iter().enumerate() {
        assert!(*band <= r.band_constant * 2f64.powi(-(k as i32 + 1)) * (1.0 + 1e-12));
    }
    // Annuli thinner than the normal spread of one sample cell stay empty.
    let j_res = (-(r.sample_spacing * r.sample_spacing).log2()).ceil() as u32 + 1;
    for c in r.cells.iter().filter(|c| c.j >= j_res) {
        assert_eq!(c.volume, 0.0, "cell ({}, {})", c.k, c.j);
    }
    assert!(r.cells.iter().any(|c| c.volume > 0.0 && c.volume <= r.volume_constant * c.bound));

    let too_deep = DyadicConfig { depth: 12, subdivisions: 2, ..Default::default() };
    assert!(dyadic_diagnostics(&lv.mesh, &lv.tset, &w, &too_deep).is_err());
    let empty = DyadicConfig { depth: 0, ..Default::default() };
    assert!(dyadic_diagnostics(&lv.mesh, &lv.tset, &w, &empty).is_err());
}

#[test]
fn bound_terms_follow_their_exponents() {
    // D = 0: the last term no longer decays.
    let r: f64 = 1e6;
    let l = default_depth(r);
    assert!((theorem_bound(r, 0.0, l, 1.0) - (2f64.powf(-l) + 1.0 / bracket(r) + l * l)).abs() < 1e-12);
    // beta variant with D = 1 decays like r^-(3/4 - beta).
    let slope = (theorem_bound_beta(1e12, 1.0, 0.1, 1.0) / theorem_bound_beta(1e10, 1.0, 0.1, 1.0)).log10() / 2.0;
    assert!((slope + 0.65).abs() < 1e-3, "{slope}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conjugate_symmetry_and_mass_bound(x in -20.0f64..20.0, y in -20.0f64..20.0, z in -20.0f64..20.0) {
        let q = small_quad();
        let xi = Vec3::new(x, y, z);
        let plus = q.eval(&xi).unwrap();
        let minus = q.eval(&-xi).unwrap();
        prop_assert!((plus - minus.conj()).norm() <= 1e-12 * q.mass());
        prop_assert!(plus.norm() <= q.mass() * (1.0 + 1e-12));
    }

    #[test]
    fn bound_decreases_with_d(r in 1.0f64..1e4, d in 0.0f64..1.0, l in 1.0f64..20.0) {
        let b = theorem_bound(r, d, l, 1.0);
        prop_assert!(b > 0.0);
        prop_assert!(theorem_bound(r, (d + 0.1).min(1.0), l, 1.0) <= b);
        prop_assert!((theorem_bound(r, d, l, 3.0) - 3.0 * b).abs() <= 1e-12 * b);
    }
}
