use rayon::prelude::*;
use shf_core::noise::{coupling_beta, convolved_mollifier, sample_slabs, GridSpec, MollifierSpec, NoiseSlabStack};
use shf_core::stats::{covariance, ks_two_sample, Running};

fn stack(eps: f64, t: f64, dt: f64, seed: u64) -> NoiseSlabStack {
    let spec = MollifierSpec::bump(eps).unwrap();
    sample_slabs(GridSpec { h: eps / 4.0, side: 8.0 * eps }, t, dt, spec, seed).unwrap()
}

#[test]
fn pointwise_variance_over_slabs() {
    let eps = 0.2;
    let dt = 0.01;
    let s = stack(eps, 100.0, dt, 1);
    let xs: Vec<f64> = (0..10_000).map(|k| s.node_value(k, 1, -2).unwrap()).collect();
    let r: Running = xs.iter().copied().collect();
    let target = dt * MollifierSpec::bump(eps).unwrap().j_at_zero();
    assert!((r.variance() / target - 1.0).abs() < 0.05, "{} vs {target}", r.variance());
    // Consecutive slabs are independent.
    let cov = covariance(&xs[..9_999], &xs[1..]);
    let se = r.variance() / (9_999f64).sqrt();
    assert!(cov.abs() < 3.0 * se, "{cov} {se}");
}

#[test]
fn distant_points_are_uncorrelated() {
    let eps = 0.2;
    let s = stack(eps, 100.0, 0.01, 2);
    // 3ε = 12 lattice steps apart.
    let a: Vec<f64> = (0..10_000).map(|k| s.node_value(k, -6, 0).unwrap()).collect();
    let b: Vec<f64> = (0..10_000).map(|k| s.node_value(k, 6, 0).unwrap()).collect();
    let ra: Running = a.iter().copied().collect();
    let rb: Running = b.iter().copied().collect();
    let cov = covariance(&a, &b);
    let se = (ra.variance() * rb.variance() / 10_000.0).sqrt();
    assert!(cov.abs() < 3.0 * se, "{cov} {se}");
    // Nearby points are strongly correlated, as J_ε predicts.
    let c: Vec<f64> = (0..10_000).map(|k| s.node_value(k, -5, 0).unwrap()).collect();
    let spec = MollifierSpec::bump(eps).unwrap();
    let expected = 0.01 * convolved_mollifier(&spec, [eps / 4.0, 0.0]);
    assert!((covariance(&a, &c) / expected - 1.0).abs() < 0.05);
}

#[test]
fn stationarity_across_nodes() {
    let s = stack(0.2, 50.0, 0.01, 3);
    let a: Vec<f64> = (0..5_000).map(|k| s.node_value(k, 0, 0).unwrap()).collect();
    let b: Vec<f64> = (0..5_000).map(|k| s.node_value(k, 3, -3).unwrap()).collect();
    let ks = ks_two_sample(&a, &b);
    assert!(ks.p_value > 0.01, "{ks:?}");
}

#[test]
fn seeds_determine_stacks() {
    let mut a = stack(0.2, 0.2, 0.1, 99);
    let mut b = stack(0.2, 0.2, 0.1, 99);
    a.materialize();
    b.materialize();
    let mut da = Vec::new();
    let mut db = Vec::new();
    a.write_dump(&mut da).unwrap();
    b.write_dump(&mut db).unwrap();
    assert_eq!(da, db);
    let c = stack(0.2, 0.2, 0.1, 100);
    assert_ne!(a.node_value(0, 0, 0).unwrap(), c.node_value(0, 0, 0).unwrap());
}

#[test]
fn exponential_weight_is_mean_one_at_fixed_point() {
    // Off-lattice point so the interpolated variance rate is exercised.
    let eps = 0.5;
    let (t, dt) = (0.05, 0.01);
    let beta = coupling_beta(0.0, eps, 0.0).unwrap();
    let base = stack(eps, t, dt, 0);
    let x = [0.037, -0.081];
    let rate = base.variance_rate(x).unwrap();
    let realizations = 100_000u64;
    let r = (0..realizations)
        .into_par_iter()
        .fold(Running::new, |mut acc, k| {
            let s = base.reseeded(shf_core::rng::derive_seed(5, shf_core::rng::Purpose::Realizations, k));
            let w: f64 = (0..s.slab_count()).map(|j| s.field_at(j, x).unwrap()).sum();
            acc.push((beta * w - 0.5 * beta * beta * rate * t).exp());
            acc
        })
        .collect::<Vec<_>>();
    let mut total = Running::new();
    for part in &r {
        total.merge(part);
    }
    let z = (total.mean() - 1.0) / total.std_error();
    assert!(z.abs() < 3.0, "mean {} se {}", total.mean(), total.std_error());
}
