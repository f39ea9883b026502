use std::f64::consts::PI;

use isoenergy::denominators::{
    dyadic_etas, eta_sweep, fft_spectrum, four_denominator, four_denominator_direct, one_denominator,
    resolvent_field, round_shift, two_denominator, DenomKind, ResolventParams, ScalingModel, SweepConfig,
};
use isoenergy::dispersion::chi;
use proptest::prelude::*;

fn unchecked(alpha: f64, eta: f64, n: usize) -> ResolventParams {
    ResolventParams {
        alpha,
        eta,
        n,
        doubling_tolerance: None,
        ..Default::default()
    }
}

#[test]
fn zero_shift_maximises_four_denominator() {
    let mut p = unchecked(3.0, 0.25, 8);
    let h = 2.0 * PI / 8.0;
    let at_zero = four_denominator(&p).unwrap().value;
    for m in 0..512usize {
        p.u = [m / 64, (m / 8) % 8, m % 8].map(|c| c as f64 * h);
        let v = four_denominator(&p).unwrap().value;
        assert!(v <= at_zero * (1.0 + 1e-12), "u = {:?}", p.u);
    }
}

#[test]
fn cutoff_split_is_bounded() {
    let p = unchecked(2.5, 0.125, 32);
    let full = four_denominator(&ResolventParams { apply_cutoff: false, ..p.clone() }).unwrap().value;
    let cut = four_denominator(&ResolventParams { apply_cutoff: true, ..p.clone() }).unwrap().value;
    let field = resolvent_field(&p, false).unwrap();
    let cut_field = resolvent_field(&p, true).unwrap();
    let max_complement = field
        .data
        .iter()
        .zip(&cut_field.data)
        .filter(|(f, c)| c.re < f.re)
        .map(|(f, _)| f.re)
        .fold(0.0, f64::max);
    let one = one_denominator(&p).unwrap().value;
    assert!(full >= cut);
    assert!(full - cut <= 3.0 * max_complement * one.powi(3));
    // The complement of the cutoff stays away from the level set.
    assert!(max_complement <= 1.0 / 0.15);
    assert!(chi(p.alpha, &p.cutoff) == 1.0);
}

#[test]
fn square_resolvent_scales_like_inverse_eta() {
    let cfg = SweepConfig {
        kind: DenomKind::Two,
        template: ResolventParams { alpha: 3.0, n: 256, ..Default::default() },
        etas: dyadic_etas(2, 5),
        q: [0.0; 3],
        resolution_budget: None,
    };
    let r = eta_sweep(&cfg).unwrap();
    assert!((r.power.params[0] - 1.0).abs() <= 0.15, "{:?}", r.power);
    assert!(r.warnings.is_empty());
    assert!(!r.within_hypotheses);
    let csv = r.to_csv().render(None);
    assert_eq!(csv.lines().next().unwrap(), "kind,alpha,eta,N,q_or_u,value,doubling_check_rel_change");
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn one_denominator_grows_logarithmically() {
    let cfg = SweepConfig {
        kind: DenomKind::One,
        template: ResolventParams { alpha: 3.0, ..Default::default() },
        etas: dyadic_etas(3, 7),
        q: [0.0; 3],
        resolution_budget: Some((64, 1024)),
    };
    let r = eta_sweep(&cfg).unwrap();
    assert_eq!(r.preferred, ScalingModel::LogLinear);
    assert!(r.log_linear.max_rel_residual < 0.05);
    assert_eq!(r.rows.last().unwrap().n, 1024);

    // Uniform in alpha: the supremum over the band is of the same size.
    let eta: f64 = 1.0 / 32.0;
    let c = r.rows[2].value / eta.ln().abs();
    let sup = (0..=24)
        .map(|i| one_denominator(&ResolventParams { alpha: 0.25 * i as f64, eta, n: 256, ..Default::default() }).unwrap().value)
        .fold(0.0, f64::max);
    assert!(sup.is_finite() && sup <= 1.5 * c * eta.ln().abs(), "sup {sup}, C {c}");
}

#[test]
fn generic_shift_is_smaller_than_line_shift() {
    let p = ResolventParams { alpha: 3.0, eta: 1.0 / 32.0, n: 256, ..Default::default() };
    let line = two_denominator(&p, &[0.5, -0.5, 0.0]).unwrap().value;
    let generic = two_denominator(&p, &[1.1, 0.3, 2.0]).unwrap().value;
    let zero = two_denominator(&p, &[0.0; 3]).unwrap().value;
    assert!(generic < line && line < zero);
}

#[test]
fn sweep_rejects_degenerate_input() {
    let cfg = SweepConfig {
        kind: DenomKind::One,
        template: ResolventParams::default(),
        etas: vec![0.1],
        q: [0.0; 3],
        resolution_budget: None,
    };
    assert!(eta_sweep(&cfg).is_err());
    assert!(one_denominator(&ResolventParams { eta: 0.75, ..Default::default() }).is_err());
    assert!(one_denominator(&ResolventParams { n: 48, ..Default::default() }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spectral_sum_matches_direct_sum(alpha in 0.0f64..6.0, eta in 0.05f64..0.5, u in prop::array::uniform3(-PI..PI)) {
        let mut p = unchecked(alpha, eta, 4);
        p.u = u;
        let spectral = four_denominator(&p).unwrap().value;
        let direct = four_denominator_direct(&p).unwrap();
        prop_assert!((spectral - direct).abs() <= 1e-10 * direct);
        let (_, off) = round_shift(&u, 4);
        prop_assert!(off <= 3f64.sqrt() * PI / 4.0 + 1e-12);
    }

    #[test]
    fn spectrum_is_real_and_even(alpha in 0.0f64..6.0, eta in 0.02f64..0.5, cutoff: bool) {
        let f = resolvent_field(&unchecked(alpha, eta, 16), cutoff).unwrap();
        let s = fft_spectrum(&f);
        let max_re = s.data.iter().map(|v| v.re.abs()).fold(0.0, f64::max);
        let max_im = s.data.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        prop_assert!(max_im <= 1e-10 * max_re);
        // n -> -n maps index i to (N - i) mod N.
        let n = 16;
        for idx in (0..s.data.len()).step_by(37) {
            let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
            let neg = (((n - i) % n) * n + (n - j) % n) * n + (n - k) % n;
            prop_assert!((s.data[idx] - s.data[neg]).norm() <= 1e-10 * max_re);
        }
    }

    #[test]
    fn four_denominator_is_monotone_in_eta(alpha in 1.0f64..5.0, eta in 0.05f64..0.4, factor in 1.01f64..2.0) {
        let lo = four_denominator(&unchecked(alpha, eta, 16)).unwrap().value;
        let hi = four_denominator(&unchecked(alpha, (eta * factor).min(0.5), 16)).unwrap().value;
        prop_assert!(hi <= lo * (1.0 + 1e-12));
    }
}
