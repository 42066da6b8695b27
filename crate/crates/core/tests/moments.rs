use std::collections::HashMap;
use std::f64::consts::{E, PI};
use std::sync::Mutex;

use shf_core::moments::{
    ball_second_moment_reduced, log_divergence_scan, mean_mass, region_integral, semigroup_apply, variance_mass,
    ProfileSpec, Reduction, TimeRegion, VarianceIntegrand,
};
use shf_core::special::{ln_gamma, GreenEvaluator, EULER_GAMMA};

/// Brute-force G_θ(w), w ≤ 1: trapezoid in s of the closed-form Dickman density.
/// Memoized, since the refinement oracles revisit the same nodes.
fn oracle_green(theta: f64, w: f64, ds: f64) -> f64 {
    static MEMO: Mutex<Option<HashMap<[u64; 3], f64>>> = Mutex::new(None);
    let key = [theta.to_bits(), w.to_bits(), ds.to_bits()];
    if let Some(v) = MEMO.lock().unwrap().get_or_insert_with(HashMap::new).get(&key) {
        return *v;
    }
    let v = oracle_green_uncached(theta, w, ds);
    MEMO.lock().unwrap().as_mut().unwrap().insert(key, v);
    v
}

fn oracle_green_uncached(theta: f64, w: f64, ds: f64) -> f64 {
    let lw = w.ln();
    let f = |s: f64| {
        if s == 0.0 {
            0.0
        } else {
            (s.ln() + (s - 1.0) * lw + (theta - EULER_GAMMA) * s - ln_gamma(s + 1.0)).exp()
        }
    };
    // 1/Γ(41) < 1e-47 makes s > 40 irrelevant for w ≤ 1 and |θ| ≤ 1.
    let s_max = 40.0;
    let n = (s_max / ds) as usize;
    (1..n).map(|i| f(i as f64 * ds)).sum::<f64>() * ds
}

/// ∫₀^w G_θ = ∫ e^{(θ−γ)s} w^s / Γ(s+1) ds by the same rule.
fn oracle_cumulative(theta: f64, w: f64, ds: f64) -> f64 {
    let n = (40.0 / ds) as usize;
    let f = |s: f64| ((theta - EULER_GAMMA + w.ln()) * s - ln_gamma(s + 1.0)).exp();
    (0.5 * f(0.0) + (1..n).map(|i| f(i as f64 * ds)).sum::<f64>()) * ds
}

/// Midpoints and widths of a mesh on [a, b] refined geometrically toward both ends
/// down to `scale`, with `per` uniform cells per dyadic band.
fn graded_cells(a: f64, b: f64, scale: f64, per: usize) -> Vec<(f64, f64)> {
    let len = b - a;
    let mut edges = vec![0.0];
    let mut x = scale.min(len / 4.0);
    let mut left = vec![];
    while x < len / 2.0 {
        left.push(x);
        x *= 2.0;
    }
    left.push(len / 2.0);
    for w in std::iter::once(0.0).chain(left.iter().copied()).collect::<Vec<_>>().windows(2) {
        for k in 1..=per {
            edges.push(w[0] + (w[1] - w[0]) * k as f64 / per as f64);
        }
    }
    let half = edges.clone();
    for &e in half.iter().rev().skip(1) {
        edges.push(len - e);
    }
    edges
        .windows(2)
        .map(|w| (a + 0.5 * (w[0] + w[1]), w[1] - w[0]))
        .collect()
}

/// Brute-force `∬ G(v−u)·k(u,v) du dv` over 0<u<v<t, midpoint in (w, u) with
/// the `[0, w0]` head handled via the oracle cumulative integral.
fn oracle_double(t: f64, scale: f64, per: usize, kernel: impl Fn(f64, f64) -> f64) -> f64 {
    let w0 = 1e-14;
    let ds = 2e-3;
    let w_cells = graded_cells(w0, t, w0, per);
    let mut total = 0.0;
    let inner = |w: f64| -> f64 {
        graded_cells(0.0, t - w, scale, per)
            .iter()
            .map(|&(u, du)| kernel(u, u + w) * du)
            .sum()
    };
    for &(w, dw) in &w_cells {
        if w > t {
            continue;
        }
        total += oracle_green(0.0, w, ds) * inner(w) * dw;
    }
    total + oracle_cumulative(0.0, w0, ds) * inner(0.0)
}

#[test]
fn ball_semigroup_matches_riemann_sum() {
    let b = ProfileSpec::ball(1.0, [0.0, 0.0]).unwrap();
    let t = 0.5;
    let riemann = |n: usize| {
        let h = 2.0 / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let y = [-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h];
                let r2 = y[0] * y[0] + y[1] * y[1];
                if r2 < 1.0 {
                    s += (-r2 / (2.0 * t)).exp() / (2.0 * PI * t);
                }
            }
        }
        s * h * h
    };
    let (coarse, fine) = (riemann(2000), riemann(4000));
    let v = semigroup_apply(&b, t, [0.0, 0.0]).unwrap();
    assert!((coarse - fine).abs() < 1e-5);
    assert!((v - fine).abs() < 2.0 * (coarse - fine).abs() + 1e-6, "{v} {fine} {coarse}");
}

#[test]
fn ball_mean_matches_riemann_sum() {
    let b = ProfileSpec::ball(0.5, [0.0, 0.0]).unwrap();
    let m = mean_mass(&b, &b, 1.0).unwrap();
    // ∬_{B×B} p_1(x−y) = ∫ p_1(z)·|B ∩ (B+z)| dz, with the lens area of two discs
    // of radius R at distance d; midpoint rule in d at two resolutions.
    let r = 0.5f64;
    let lens = |d: f64| 2.0 * r * r * (d / (2.0 * r)).acos() - 0.5 * d * (4.0 * r * r - d * d).sqrt();
    let riemann = |n: usize| {
        let h = 2.0 * r / n as f64;
        (0..n)
            .map(|i| {
                let d = (i as f64 + 0.5) * h;
                2.0 * PI * d * (-d * d / 2.0).exp() / (2.0 * PI) * lens(d) * h
            })
            .sum::<f64>()
    };
    let (coarse, fine) = (riemann(20_000), riemann(40_000));
    assert!((coarse - fine).abs() < 1e-8, "{coarse} {fine}");
    assert!((m.value - fine).abs() < 1e-5, "{} vs {fine}", m.value);
}

#[test]
fn variance_routes_agree_on_gaussians() {
    let ev = GreenEvaluator::new(0.0);
    let g = ProfileSpec::gaussian(0.5, [0.0, 0.0], 1.0).unwrap();
    let mut spec = VarianceIntegrand {
        theta: 0.0,
        t: 1.0,
        u0: g,
        phi: g,
        reduction: Reduction::AnalyticGaussian,
    };
    let a = variance_mass(&spec, &ev).unwrap();
    spec.reduction = Reduction::GenericQuadrature;
    let b = variance_mass(&spec, &ev).unwrap();
    let tol = a.abs_error_estimate + b.abs_error_estimate;
    assert!((a.value - b.value).abs() <= tol, "{a:?} vs {b:?}");
}

#[test]
fn variance_homogeneity_and_monotonicity() {
    let ev0 = GreenEvaluator::new(0.0);
    let g = ProfileSpec::gaussian(0.5, [0.1, 0.0], 1.0).unwrap();
    let h = ProfileSpec::gaussian(0.3, [-0.2, 0.4], 0.7).unwrap();
    let spec = |theta, u0, phi| VarianceIntegrand {
        theta,
        t: 1.0,
        u0,
        phi,
        reduction: Reduction::AnalyticGaussian,
    };
    let base = variance_mass(&spec(0.0, g, h), &ev0).unwrap().value;
    let doubled = variance_mass(&spec(0.0, g.scaled(2.0), h), &ev0).unwrap().value;
    assert!((doubled / base - 4.0).abs() < 1e-10);
    let tripled_phi = variance_mass(&spec(0.0, g, h.scaled(3.0)), &ev0).unwrap().value;
    assert!((tripled_phi / base - 9.0).abs() < 1e-10);
    let lo = variance_mass(&spec(-1.0, g, h), &GreenEvaluator::new(-1.0)).unwrap().value;
    let hi = variance_mass(&spec(1.0, g, h), &GreenEvaluator::new(1.0)).unwrap().value;
    assert!(0.0 < lo && lo < base && base < hi);
    // θ mismatch between integrand and evaluator is rejected.
    assert!(variance_mass(&spec(1.0, g, h), &ev0).is_err());
}

#[test]
fn flat_initial_datum_variance_is_finite() {
    let ev = GreenEvaluator::new(0.0);
    let spec = VarianceIntegrand {
        theta: 0.0,
        t: 0.5,
        u0: ProfileSpec::flat(1.0),
        phi: ProfileSpec::gaussian(0.2, [0.0, 0.0], 1.0).unwrap(),
        reduction: Reduction::GenericQuadrature,
    };
    let v = variance_mass(&spec, &ev).unwrap();
    assert!(v.value.is_finite() && v.value > 0.0);
    // Flat u₀ is the σ → ∞ limit of a gaussian of mass 2πσ: compare against a wide gaussian.
    let sigma = 1e6;
    let wide = VarianceIntegrand {
        u0: ProfileSpec::gaussian(sigma, [0.0, 0.0], 2.0 * PI * sigma).unwrap(),
        reduction: Reduction::AnalyticGaussian,
        ..spec
    };
    let w = variance_mass(&wide, &ev).unwrap();
    assert!((w.value - v.value).abs() < 1e-4 * v.value, "{} vs {}", w.value, v.value);
}

#[test]
fn ball_second_moment_ordering_and_refinement_oracle() {
    let ev = GreenEvaluator::new(0.0);
    let m = ball_second_moment_reduced(0.1, 1.0, &ev).unwrap();
    assert!(m.sharp.value > 0.0 && m.sharp.value <= m.bound.value);

    let eps = 0.01;
    let m = ball_second_moment_reduced(eps, 1.0, &ev).unwrap();
    let e2 = eps * eps;
    let sharp_kernel = |u: f64, v: f64| {
        E * E / (4.0 * PI * (u + e2) * (1.0 - v + e2)) / (2.0 * PI * (0.5 * (2.0 * e2 + 1.0 - v + u) + 2.0 * (v - u)))
    };
    let coarse = oracle_double(1.0, e2, 8, sharp_kernel);
    let fine = oracle_double(1.0, e2, 16, sharp_kernel);
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    assert!(rel(coarse, fine) < 1e-3, "{coarse} {fine}");
    assert!(
        rel(m.sharp.value, fine) < 2.0 * rel(coarse, fine) + 1e-5,
        "{} vs {fine} (coarse {coarse})",
        m.sharp.value
    );
}

#[test]
fn region_decomposition() {
    let ev = GreenEvaluator::new(0.0);
    let (eps, t) = (0.05, 1.0);
    let get = |r| region_integral(r, eps, t, &ev).unwrap();
    let full = get(TimeRegion::Full);
    let parts = [get(TimeRegion::Early), get(TimeRegion::Late), get(TimeRegion::Straddle)];
    let overlap = get(TimeRegion::Overlap);
    let sum: f64 = parts.iter().map(|p| p.value).sum();
    let err: f64 = parts.iter().map(|p| p.abs_error_estimate).sum::<f64>()
        + overlap.abs_error_estimate
        + full.abs_error_estimate;
    assert!(sum >= full.value - err);
    assert!((sum - overlap.value - full.value).abs() <= err.max(1e-9 * full.value));

    // Each region against a brute-force midpoint sum on its own (u, v) domain.
    let e2 = eps * eps;
    let kernel = |u: f64, v: f64| 1.0 / ((u + e2) * (t - v + e2));
    let third = t / 3.0;
    let indic: [(TimeRegion, Box<dyn Fn(f64, f64) -> bool>); 3] = [
        (TimeRegion::Early, Box::new(move |_u, v| v < 2.0 * third)),
        (TimeRegion::Late, Box::new(move |u, _v| u > third)),
        (TimeRegion::Straddle, Box::new(move |u, v| u < third && v > 2.0 * third)),
    ];
    for (region, inside) in indic.iter() {
        let k = |u: f64, v: f64| if inside(u, v) { kernel(u, v) } else { 0.0 };
        let coarse = oracle_double(t, e2, 24, k);
        let fine = oracle_double(t, e2, 48, k);
        let lib = get(*region).value;
        let spread = (coarse - fine).abs();
        assert!((lib - fine).abs() < 3.0 * spread + 1e-6 * fine, "{region:?}: {lib} vs {fine} ({coarse})");
    }
}

#[test]
fn scan_is_bounded_and_monotone_in_theta() {
    let ev = GreenEvaluator::new(0.0);
    let scan = log_divergence_scan(&[0.1, 0.03, 0.01], 1.0, &ev, 5.0).unwrap();
    assert!(scan.ordered());
    assert!(scan.bounded(), "{scan:?}");
    let single = ball_second_moment_reduced(0.5, 1.0, &ev).unwrap();
    assert!(single.sharp.value.is_finite() && single.sharp.value > 0.0);
    let higher = ball_second_moment_reduced(0.5, 1.0, &GreenEvaluator::new(1.0)).unwrap();
    assert!(higher.sharp.value > single.sharp.value);
}
