use shf_core::certificate::*;
use shf_core::special::GreenEvaluator;
use shf_core::tubes::*;

fn certified(n: usize) -> TubeFamily {
    let c = min_drift_constant(n, 3.0, 1.0, 1.0, [0.0, 0.0], 0.0, 1000, 1e4).unwrap();
    TubeFamily::new(n, 3.0, 1.0, 1.0, [0.0, 0.0], c).unwrap()
}

#[test]
fn reflection_symmetry_and_continuity() {
    let f = certified(16);
    for id in f.tubes() {
        for k in 0..=200 {
            let s = k as f64 / 200.0;
            // `1 − s` carries its own rounding, so compare to a few ulps.
            assert!((f.radius(s).unwrap() - f.radius(1.0 - s).unwrap()).abs() < 1e-14);
            let (a, b) = (f.center(id, s).unwrap(), f.center(id, 1.0 - s).unwrap());
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }
}

#[test]
fn tilt_moves_the_terminal_disc() {
    let f = TubeFamily::new(16, 3.0, 1.0, 1.0, [2.0, -1.0], 5.0).unwrap();
    let g = f.with_drift(5.0);
    let end = f.center((10, 1), 1.0).unwrap();
    let start = g.center((10, 1), 0.0).unwrap();
    assert!((end[0] - start[0] - 2.0).abs() < 1e-12 && (end[1] - start[1] + 1.0).abs() < 1e-12);
    // A common translation leaves every separation unchanged.
    let h = TubeFamily::new(16, 3.0, 1.0, 1.0, [0.0, 0.0], 5.0).unwrap();
    for &s in &[0.0, 0.2, 0.5, 0.9] {
        assert!((f.separation((8, 0), (9, 1), s).unwrap() - h.separation((8, 0), (9, 1), s).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn feasibility_persists_when_n_doubles() {
    let c16 = certified(16).c_drift;
    let c32 = certified(32).c_drift;
    assert!(c16.is_finite() && c32.is_finite());
    assert!(disjointness_check(&certified(32), 1000).unwrap().ok);
}

#[test]
fn confinement_limits() {
    let f = certified(8);
    let area = std::f64::consts::PI * f.base_radius().powi(2);
    // Terminal disc of radius 1000·r/(20N) ≈ 6.25 and lateral radius ≥ 6.25: sure confinement.
    let wide = ConeSpec {
        radius_scale: 1000.0,
        ..ConeSpec::new(f, 8)
    };
    let est = confinement_probability(&wide, 20_000, 1.0 / 32.0, 1).unwrap();
    assert!((est.integral - area).abs() <= 3.0 * est.std_error + 1e-12 * area, "{} ± {}", est.integral / area, est.std_error / area);
    let thin = ConeSpec {
        radius_scale: 1e-3,
        ..ConeSpec::new(f, 8)
    };
    let est = confinement_probability(&thin, 20_000, 1.0 / 32.0, 2).unwrap();
    assert!(est.integral < 1e-12 * area);
}

#[test]
fn confinement_regression_anchor() {
    let f = certified(8);
    let est = confinement_probability(&ConeSpec::new(f, 8), 50_000, 1.0 / 64.0, 3).unwrap();
    assert!(est.integral > 0.0 && est.refinement_shift <= est.refinement_tolerance);
    // Anchor from a 50 000-path run at dt = 2⁻⁵…2⁻¹⁰ (all within 2 SE of each other).
    let anchor = 1.365e-10;
    assert!(((est.integral - anchor) / est.std_error).abs() < 4.0, "{} ± {}", est.integral, est.std_error);
    // Endpoint-conditioned confinement is O(1); the disc-to-disc heat mass caps it.
    let ball_mean = shf_core::moments::mean_mass(
        &shf_core::moments::ProfileSpec::ball(f.base_radius(), [0.0, 0.0]).unwrap(),
        &shf_core::moments::ProfileSpec::ball(f.base_radius(), [0.0, 0.0]).unwrap(),
        1.0,
    )
    .unwrap()
    .value;
    assert!(est.integral < ball_mean);
    assert!(est.dt == 1.0 / 128.0);
}

#[test]
fn pz_ratio_properties() {
    let f = certified(8);
    let e0 = GreenEvaluator::new(0.0);
    let e1 = GreenEvaluator::new(1.0);
    let a = pz_ratio(&f, 8, 20_000, 1.0 / 64.0, 4, &e0).unwrap();
    let b = pz_ratio(&f, 8, 20_000, 1.0 / 64.0, 4, &e1).unwrap();
    assert!(a.ratio > 0.0 && a.ratio <= 0.25 && a.ratio_lower <= a.ratio);
    assert!(b.second_moment_bound > a.second_moment_bound);
    assert!(b.ratio < a.ratio);
    assert!(a.implied_constant > 0.0);
}

#[test]
fn certificate_pipeline() {
    let f8 = certified(8);
    let ev = GreenEvaluator::new(0.0);
    let c = tail_certificate(&f8, 0.0, 20_000, 1.0 / 64.0, 5, &ev).unwrap();
    assert!(c.bound > 0.0 && c.bound < 1.0, "{}", c.bound);
    assert!(c.threshold_covers_mean);
    assert_eq!(c.p_n.len(), 5);
    let again = tail_certificate(&f8, 0.0, 20_000, 1.0 / 64.0, 5, &ev).unwrap();
    assert_eq!(c.bound.to_bits(), again.bound.to_bits());
    assert_eq!(c, again);
    assert_eq!(product_bound(8, &[0.0; 5]), 1.0);
    assert!(product_bound(8, &[0.1; 5]) < product_bound(8, &[0.05; 5]));
    // The exponent grows from N = 8 to N = 16.
    let c16 = tail_certificate(&certified(16), 0.0, 20_000, 1.0 / 64.0, 5, &ev).unwrap();
    assert!(c16.bound < c.bound);
    // Overlapping tubes are refused.
    let bad = f8.with_drift(0.5 * f8.c_drift);
    assert!(matches!(tail_certificate(&bad, 0.0, 1000, 1.0 / 64.0, 5, &ev), Err(shf_core::Error::Infeasible(_))));
}
