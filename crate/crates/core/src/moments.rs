//! First and second moments of the flow's mass: the mean pairing, the limiting
//! variance against a Green's-function kernel, and the reduced ball second
//! moment whose growth in `ε` is quadratic in `log 1/ε`.

use std::f64::consts::{E, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::plane::{dist, Point};
use crate::quadrature::{
    graded_breaks_left, graded_breaks_right, integrate_with_breaks, merge_breaks, try_integrate_with_breaks,
    AdaptiveOptions, Integral,
};
use crate::special::bessel::bessel_i0e;
use crate::special::green::GreenEvaluator;
use crate::special::heat::heat_kernel_unchecked;

/// `exp(-GAUSS_CUT)` is below double-precision resolution relative to the peak.
const GAUSS_CUT: f64 = 40.0;

/// Initial datum or test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSpec {
    /// `mass · p_sigma(x − center)`.
    Gaussian { sigma: f64, center: Point, mass: f64 },
    /// `height · 1{|x − center| < radius}`.
    IndicatorBall {
        radius: f64,
        center: Point,
        #[serde(default = "one")]
        height: f64,
    },
    Flat { level: f64 },
}

fn one() -> f64 {
    1.0
}

impl ProfileSpec {
    pub fn gaussian(sigma: f64, center: Point, mass: f64) -> Result<Self> {
        let p = ProfileSpec::Gaussian { sigma, center, mass };
        p.validate()?;
        Ok(p)
    }

    pub fn ball(radius: f64, center: Point) -> Result<Self> {
        let p = ProfileSpec::IndicatorBall {
            radius,
            center,
            height: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn flat(level: f64) -> Self {
        ProfileSpec::Flat { level }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ProfileSpec::Gaussian { sigma, mass, .. } => {
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(domain(format!("gaussian profile needs variance > 0, got {sigma}")));
                }
                if !mass.is_finite() {
                    return Err(domain("gaussian mass must be finite"));
                }
            }
            ProfileSpec::IndicatorBall { radius, height, .. } => {
                if !(radius > 0.0) || !radius.is_finite() {
                    return Err(domain(format!("ball profile needs radius > 0, got {radius}")));
                }
                if !height.is_finite() {
                    return Err(domain("ball height must be finite"));
                }
            }
            ProfileSpec::Flat { level } => {
                if !level.is_finite() {
                    return Err(domain("flat level must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Same shape with amplitude multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        match *self {
            ProfileSpec::Gaussian { sigma, center, mass } => ProfileSpec::Gaussian {
                sigma,
                center,
                mass: mass * k,
            },
            ProfileSpec::IndicatorBall { radius, center, height } => ProfileSpec::IndicatorBall {
                radius,
                center,
                height: height * k,
            },
            ProfileSpec::Flat { level } => ProfileSpec::Flat { level: level * k },
        }
    }

    /// `∫ profile`, or `None` for the flat profile.
    pub fn total_mass(&self) -> Option<f64> {
        match *self {
            ProfileSpec::Gaussian { mass, .. } => Some(mass),
            ProfileSpec::IndicatorBall { radius, height, .. } => Some(height * PI * radius * radius),
            ProfileSpec::Flat { .. } => None,
        }
    }

    pub fn center(&self) -> Option<Point> {
        match *self {
            ProfileSpec::Gaussian { center, .. } | ProfileSpec::IndicatorBall { center, .. } => Some(center),
            ProfileSpec::Flat { .. } => None,
        }
    }

    /// Radial profile of `P_t(profile)` about its own center.
    fn evolved_radial(&self, t: f64, r: f64) -> Result<f64> {
        match *self {
            ProfileSpec::Gaussian { sigma, mass, .. } => Ok(mass * heat_kernel_unchecked(sigma + t, r * r)),
            ProfileSpec::IndicatorBall { radius, height, .. } => Ok(height * ball_semigroup(radius, t, r)?),
            ProfileSpec::Flat { level } => Ok(level),
        }
    }

    /// Radius beyond which `(P_t profile)²` is negligible relative to its peak.
    fn evolved_square_extent(&self, t: f64) -> f64 {
        match *self {
            ProfileSpec::Gaussian { sigma, .. } => (GAUSS_CUT * (sigma + t)).sqrt(),
            ProfileSpec::IndicatorBall { radius, .. } => radius + (GAUSS_CUT * t).sqrt(),
            ProfileSpec::Flat { .. } => f64::INFINITY,
        }
    }
}

/// `P_t 1_{B_R(0)}` at distance `d` from the center:
/// `∫₀^R (ρ/t) e^{−(d−ρ)²/2t} e^{−dρ/t} I₀(dρ/t) dρ`.
fn ball_semigroup(radius: f64, t: f64, d: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(if d < radius { 1.0 } else { 0.0 });
    }
    let spread = (2.0 * GAUSS_CUT * t).sqrt();
    let lo = (d - spread).max(0.0);
    let hi = (d + spread).min(radius);
    if lo >= hi {
        return Ok(0.0);
    }
    let f = |rho: f64| (rho / t) * (-(d - rho) * (d - rho) / (2.0 * t)).exp() * bessel_i0e(d * rho / t);
    let breaks = merge_breaks(lo, hi, &[&[d, d - spread / 4.0, d + spread / 4.0]]);
    let r = integrate_with_breaks(f, &breaks, AdaptiveOptions::new(1e-14, 1e-12))?;
    Ok(r.value)
}

/// `P_t profile (x) = ∫ profile(y) p_t(x, y) dy`.
pub fn semigroup_apply(profile: &ProfileSpec, t: f64, x: Point) -> Result<f64> {
    profile.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(domain(format!("semigroup needs t >= 0, got {t}")));
    }
    match *profile {
        ProfileSpec::Gaussian { sigma, center, mass } => Ok(mass * heat_kernel_unchecked(sigma + t, dist(x, center).powi(2))),
        ProfileSpec::IndicatorBall { radius, center, height } => Ok(height * ball_semigroup(radius, t, dist(x, center))?),
        ProfileSpec::Flat { level } => Ok(level),
    }
}

/// A computed moment with its quadrature error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub evaluations: usize,
}

impl MomentResult {
    fn exact(value: f64) -> Self {
        Self {
            value,
            abs_error_estimate: 0.0,
            evaluations: 1,
        }
    }
}

impl From<Integral> for MomentResult {
    fn from(i: Integral) -> Self {
        Self {
            value: i.value,
            abs_error_estimate: i.abs_error,
            evaluations: i.evaluations,
        }
    }
}

/// `E[Z_t(u₀, φ)] = ∫ u₀(x) (P_t φ)(x) dx`.
pub fn mean_mass(u0: &ProfileSpec, phi: &ProfileSpec, t: f64) -> Result<MomentResult> {
    u0.validate()?;
    phi.validate()?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(domain(format!("mean needs t > 0, got {t}")));
    }
    match (*u0, *phi) {
        (ProfileSpec::Flat { .. }, ProfileSpec::Flat { .. }) => {
            Err(domain("mean of flat against flat is infinite"))
        }
        (ProfileSpec::Flat { level }, other) | (other, ProfileSpec::Flat { level }) => {
            Ok(MomentResult::exact(level * other.total_mass().expect("non-flat")))
        }
        (
            ProfileSpec::Gaussian { sigma: s1, center: c1, mass: m1 },
            ProfileSpec::Gaussian { sigma: s2, center: c2, mass: m2 },
        ) => Ok(MomentResult::exact(m1 * m2 * heat_kernel_unchecked(s1 + s2 + t, dist(c1, c2).powi(2)))),
        _ => polar_mean(u0, phi, t),
    }
}

/// `∫₀^∞ r u₀(r) ∫₀^{2π} (P_tφ)(c + r e^{iα}) dα dr` about the center of `u₀`.
fn polar_mean(u0: &ProfileSpec, phi: &ProfileSpec, t: f64) -> Result<MomentResult> {
    let c = u0.center().expect("non-flat");
    let (r_max, r_breaks): (f64, Vec<f64>) = match *u0 {
        ProfileSpec::Gaussian { sigma, .. } => {
            let r = (2.0 * GAUSS_CUT * sigma).sqrt();
            (r, vec![0.0, sigma.sqrt(), 3.0 * sigma.sqrt(), r])
        }
        ProfileSpec::IndicatorBall { radius, .. } => (radius, vec![0.0, radius]),
        ProfileSpec::Flat { .. } => unreachable!(),
    };
    let inner_opts = AdaptiveOptions::new(1e-15, 1e-11);
    let mut evals = 0usize;
    let outer = try_integrate_with_breaks(
        |r| {
            let angular = try_integrate_with_breaks(
                |a| semigroup_apply(phi, t, [c[0] + r * a.cos(), c[1] + r * a.sin()]),
                &[0.0, 0.5 * PI, PI, 1.5 * PI, 2.0 * PI],
                inner_opts,
            )?;
            evals += angular.evaluations;
            Ok(r * u0.evolved_radial(0.0, r)? * angular.value)
        },
        &merge_breaks(0.0, r_max, &[&r_breaks]),
        AdaptiveOptions::new(1e-15, 1e-10),
    )?;
    let mut m = MomentResult::from(outer);
    m.abs_error_estimate += 1e-11 * m.value.abs();
    m.evaluations += evals;
    Ok(m)
}

/// How the spatial integrals of the variance formula are carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Both profiles gaussian: spatial and one time integral done in closed form.
    AnalyticGaussian,
    /// Nested adaptive quadrature; profiles must be radial about a common center.
    GenericQuadrature,
}

/// Inputs of the limiting variance
/// `4π ∬dx dy ∬_{0<u<v<t} (P_u u₀(x))² G_θ(v−u, y−x) (P_{t−v} φ(y))²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceIntegrand {
    pub theta: f64,
    pub t: f64,
    pub u0: ProfileSpec,
    pub phi: ProfileSpec,
    pub reduction: Reduction,
}

/// Smallest `w` resolved by adaptive quadrature; `[0, w_min]` is handled via
/// the exact cumulative Green integral.
const W_MIN_FRACTION: f64 = 1e-12;

/// `∫₀^t G_θ(w) h(w) dw` for `h` bounded near 0.
///
/// `[w_min, t]` is integrated adaptively on `breaks`; the head uses
/// `∫₀^{w_min} G h ≈ h(0) K_θ(w_min)`, with error bounded by the sampled
/// oscillation of `h` on `[0, w_min]` times `K_θ(w_min)`. The relative error of
/// the `G` evaluations is added on top (valid since `G > 0`, `h ≥ 0`).
fn green_weighted_integral<H: FnMut(f64) -> Result<f64>>(
    ev: &GreenEvaluator,
    mut h: H,
    w_min: f64,
    breaks: &[f64],
    opts: AdaptiveOptions,
) -> Result<MomentResult> {
    let mut worst_rel = 0.0f64;
    let body = try_integrate_with_breaks(
        |w| {
            let g = ev.evaluate(w)?;
            worst_rel = worst_rel.max(g.abs_error / g.value);
            Ok(g.value * h(w)?)
        },
        breaks,
        opts,
    )?;
    let k = ev.cumulative(w_min)?;
    let h0 = h(0.0)?;
    let mut osc = 0.0f64;
    for i in 1..=8 {
        osc = osc.max((h(w_min * i as f64 / 8.0)? - h0).abs());
    }
    let head = h0 * k.value;
    let value = body.value + head;
    Ok(MomentResult {
        value,
        abs_error_estimate: body.abs_error + osc * k.value + h0.abs() * k.abs_error + worst_rel * value.abs(),
        evaluations: body.evaluations + 9,
    })
}

fn graded_w_breaks(t: f64, w_min: f64, right_scale: f64) -> Vec<f64> {
    let left_levels = ((t / w_min).log2().ceil() as u32).min(60);
    let left = graded_breaks_left(0.0, t, left_levels);
    let right_levels = ((t / right_scale).log2().ceil().max(1.0) as u32).min(60);
    let right = graded_breaks_right(0.0, t, right_levels);
    merge_breaks(w_min, t, &[&left[1..], &right])
}

fn check_evaluator(ev: &GreenEvaluator, theta: f64, t: f64) -> Result<()> {
    if ev.theta() != theta {
        return Err(domain(format!("evaluator has θ = {}, requested θ = {theta}", ev.theta())));
    }
    if t > ev.t_max() {
        return Err(Error::OutOfRange(format!(
            "horizon {t} exceeds the Green's function range {}",
            ev.t_max()
        )));
    }
    Ok(())
}

/// Limiting variance of `Z_t(u₀, φ)`.
pub fn variance_mass(spec: &VarianceIntegrand, ev: &GreenEvaluator) -> Result<MomentResult> {
    spec.u0.validate()?;
    spec.phi.validate()?;
    if !(spec.t > 0.0) || !spec.t.is_finite() {
        return Err(domain(format!("variance needs t > 0, got {}", spec.t)));
    }
    check_evaluator(ev, spec.theta, spec.t)?;
    match spec.reduction {
        Reduction::AnalyticGaussian => gaussian_variance(spec, ev),
        Reduction::GenericQuadrature => generic_variance(spec, ev),
    }
}

/// For `u₀ = m₁p_{σ₁}(·−c₁)`, `φ = m₂p_{σ₂}(·−c₂)` the spatial integrals and the
/// `u`-integral at fixed `w = v−u` close, leaving
/// `(m₁²m₂²/4π) ∫₀^t G_θ(w) p_{(σ₁+σ₂+t+3w)/2}(c₂−c₁)
///   · log((σ₁+t−w)(σ₂+t−w)/(σ₁σ₂)) / (σ₁+σ₂+t−w) dw`.
fn gaussian_variance(spec: &VarianceIntegrand, ev: &GreenEvaluator) -> Result<MomentResult> {
    let (
        ProfileSpec::Gaussian { sigma: s1, center: c1, mass: m1 },
        ProfileSpec::Gaussian { sigma: s2, center: c2, mass: m2 },
    ) = (spec.u0, spec.phi)
    else {
        return Err(domain("analytic reduction requires two gaussian profiles"));
    };
    let t = spec.t;
    let d2 = dist(c1, c2).powi(2);
    let h = |w: f64| -> Result<f64> {
        let rest = t - w;
        let log = ((s1 + rest) * (s2 + rest) / (s1 * s2)).ln();
        Ok(heat_kernel_unchecked(0.5 * (s1 + s2 + t + 3.0 * w), d2) * log / (s1 + s2 + rest))
    };
    let w_min = W_MIN_FRACTION * t;
    let breaks = graded_w_breaks(t, w_min, s1.min(s2).min(t));
    let r = green_weighted_integral(ev, h, w_min, &breaks, AdaptiveOptions::new(1e-300, 1e-10))?;
    let k = m1 * m1 * m2 * m2 / (4.0 * PI);
    Ok(MomentResult {
        value: k * r.value,
        abs_error_estimate: k.abs() * r.abs_error_estimate,
        evaluations: r.evaluations,
    })
}

/// Nested quadrature of the variance for radial profiles sharing a center:
/// `4π ∫₀^t dw G_θ(w) ∫₀^{t−w} du ∫₀^∞ 2πr F_u(r) (P_{2w} H_{t−u−w})(r) dr`
/// with `F_u = (P_u u₀)²`, `H_s = (P_s φ)²`, and the radial heat semigroup
/// `(P_τ H)(r) = ∫ (ρ/τ) e^{−(r−ρ)²/2τ} e^{−rρ/τ}I₀(rρ/τ) H(ρ) dρ`.
///
/// Per-axis relative tolerances tighten by a factor 10 per nesting level, and
/// the reported error adds the innermost budgets to the outer estimate.
fn generic_variance(spec: &VarianceIntegrand, ev: &GreenEvaluator) -> Result<MomentResult> {
    let (u0, phi, t) = (spec.u0, spec.phi, spec.t);
    if matches!(phi, ProfileSpec::Flat { .. }) {
        return Err(domain("variance needs a compactly supported or gaussian test function"));
    }
    if let Some(c) = u0.center() {
        if dist(c, phi.center().expect("non-flat")) > 0.0 {
            return Err(domain("generic variance route needs profiles with a common center"));
        }
    }
    const TOL_W: f64 = 1e-7;
    const TOL_U: f64 = 1e-8;
    const TOL_R: f64 = 1e-9;
    const TOL_RHO: f64 = 1e-10;
    let ball_edge = |p: &ProfileSpec| match *p {
        ProfileSpec::IndicatorBall { radius, .. } => vec![radius],
        _ => vec![],
    };
    let phi_edges = ball_edge(&phi);
    let u0_edges = ball_edge(&u0);

    // ∫ F_u(x) (P_{2w} H_s)(x) dx in polar coordinates.
    let spatial = |u: f64, w: f64, s: f64| -> Result<f64> {
        let h_of = |rho: f64| -> Result<f64> { Ok(phi.evolved_radial(s, rho)?.powi(2)) };
        let h_extent = phi.evolved_square_extent(s);
        if let ProfileSpec::Flat { level } = u0 {
            let r = try_integrate_with_breaks(
                |rho| Ok(2.0 * PI * rho * h_of(rho)?),
                &merge_breaks(0.0, h_extent, &[&phi_edges]),
                AdaptiveOptions::new(1e-300, TOL_R),
            )?;
            return Ok(level * level * r.value);
        }
        let tau = 2.0 * w;
        let smoothed = |r: f64| -> Result<f64> {
            if tau == 0.0 {
                return h_of(r);
            }
            let spread = (2.0 * GAUSS_CUT * tau).sqrt();
            let lo = (r - spread).max(0.0);
            let hi = (r + spread).min(h_extent);
            if lo >= hi {
                return Ok(0.0);
            }
            let kernel = |rho: f64| (rho / tau) * (-(r - rho) * (r - rho) / (2.0 * tau)).exp() * bessel_i0e(r * rho / tau);
            let v = try_integrate_with_breaks(
                |rho| Ok(kernel(rho) * h_of(rho)?),
                &merge_breaks(lo, hi, &[&[r], &phi_edges]),
                AdaptiveOptions::new(1e-300, TOL_RHO),
            )?;
            Ok(v.value)
        };
        let r_extent = u0.evolved_square_extent(u).min(h_extent + (2.0 * GAUSS_CUT * tau).sqrt());
        let v = try_integrate_with_breaks(
            |r| Ok(2.0 * PI * r * u0.evolved_radial(u, r)?.powi(2) * smoothed(r)?),
            &merge_breaks(0.0, r_extent, &[&u0_edges, &phi_edges]),
            AdaptiveOptions::new(1e-300, TOL_R),
        )?;
        Ok(v.value)
    };
    let h = |w: f64| -> Result<f64> {
        let len = t - w;
        if len <= 0.0 {
            return Ok(0.0);
        }
        let r = try_integrate_with_breaks(
            |u| spatial(u, w, t - w - u),
            &merge_breaks(0.0, len, &[&[0.5 * len]]),
            AdaptiveOptions::new(1e-300, TOL_U),
        )?;
        Ok(r.value)
    };
    let w_min = 1e-9 * t;
    let breaks = graded_w_breaks(t, w_min, t / 64.0);
    let r = green_weighted_integral(ev, h, w_min, &breaks, AdaptiveOptions::new(1e-300, TOL_W))?;
    let value = 4.0 * PI * r.value;
    Ok(MomentResult {
        value,
        abs_error_estimate: 4.0 * PI * r.abs_error_estimate + (TOL_U + TOL_R + TOL_RHO) * value.abs(),
        evaluations: r.evaluations,
    })
}

/// `1_{B_ε(0)}(x)/(2πε²) ≤ √e p_{ε²}(x)`, checked at `samples` radii in `[0, 2ε]`.
/// Returns the smallest relative slack `(√e p − 1_B/(2πε²)) · 2πε²` observed;
/// equality holds on the sphere `|x| = ε`, so the slack is zero up to rounding there.
pub fn indicator_domination_margin(epsilon: f64, samples: usize) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(domain(format!("ε must be positive, got {epsilon}")));
    }
    let scale = 2.0 * PI * epsilon * epsilon;
    let mut worst = f64::INFINITY;
    for i in 0..=samples {
        let r = 2.0 * epsilon * i as f64 / samples as f64;
        let ind = if r <= epsilon { 1.0 } else { 0.0 };
        let slack = (E.sqrt() * heat_kernel_unchecked(epsilon * epsilon, r * r) - ind / scale) * scale;
        worst = worst.min(slack);
    }
    if worst < -1e-12 {
        return Err(Error::Precondition(format!(
            "ball-to-gaussian domination fails at ε = {epsilon} (slack {worst:e})"
        )));
    }
    Ok(worst)
}

/// Sharp and upper-bound forms of the reduced ball second moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallSecondMoment {
    pub epsilon: f64,
    pub t: f64,
    pub theta: f64,
    /// `∬ e²/(4π(u+ε²)(t−v+ε²)) G_θ(v−u) p_{(2ε²+t−v+u)/2+2(v−u)}(0) du dv`.
    pub sharp: MomentResult,
    /// `(e²/(4π²t)) ∬ G_θ(v−u)/((u+ε²)(t−v+ε²)) du dv`.
    pub bound: MomentResult,
}

/// `∫_a^b du / ((A+u)(B−u)) = [log((A+u)/(B−u))]_a^b / (A+B)`.
fn reciprocal_pair_integral(big_a: f64, big_b: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    (((big_a + b) * (big_b - a)) / ((big_a + a) * (big_b - b))).ln() / (big_a + big_b)
}

fn check_ball_args(epsilon: f64, t: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(domain(format!("ε must lie in (0,1), got {epsilon}")));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(domain(format!("t must be positive, got {t}")));
    }
    Ok(())
}

/// Reduced second moment of the mass on `B_ε(0) × B_ε(0)` after the
/// ball-to-gaussian domination, divided by `(2πε²)⁴`.
///
/// With `w = v−u` the `u`-integral is closed-form, leaving one graded
/// `w`-integral per form.
pub fn ball_second_moment_reduced(epsilon: f64, t: f64, ev: &GreenEvaluator) -> Result<BallSecondMoment> {
    check_ball_args(epsilon, t)?;
    check_evaluator(ev, ev.theta(), t)?;
    indicator_domination_margin(epsilon, 2000)?;
    let e2 = epsilon * epsilon;
    let inner = |w: f64| reciprocal_pair_integral(e2, e2 + t - w, 0.0, t - w);
    let w_min = (e2 * e2).min(W_MIN_FRACTION * t);
    let breaks = graded_w_breaks(t, w_min, e2 * e2);
    let opts = AdaptiveOptions::new(1e-300, 1e-10);
    let sharp = green_weighted_integral(
        ev,
        |w| Ok(heat_kernel_unchecked(0.5 * (2.0 * e2 + t + 3.0 * w), 0.0) * inner(w)),
        w_min,
        &breaks,
        opts,
    )?;
    let bound = green_weighted_integral(ev, |w| Ok(inner(w)), w_min, &breaks, opts)?;
    let ks = E * E / (4.0 * PI);
    let kb = E * E / (4.0 * PI * PI * t);
    let scale = |m: MomentResult, k: f64| MomentResult {
        value: k * m.value,
        abs_error_estimate: k * m.abs_error_estimate,
        evaluations: m.evaluations,
    };
    let out = BallSecondMoment {
        epsilon,
        t,
        theta: ev.theta(),
        sharp: scale(sharp, ks),
        bound: scale(bound, kb),
    };
    if out.sharp.value > out.bound.value + out.sharp.abs_error_estimate + out.bound.abs_error_estimate {
        return Err(Error::Accuracy {
            achieved: out.sharp.value - out.bound.value,
            requested: 0.0,
            context: "sharp reduced second moment exceeds its bound".into(),
        });
    }
    Ok(out)
}

/// Sub-regions of `{0 < u < v < t}` used in the logarithmic-divergence argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeRegion {
    /// `{0 < u < v < t}`.
    Full,
    /// `{0 < u < v < 2t/3}`.
    Early,
    /// `{t/3 < u < v < t}`.
    Late,
    /// `{0 < u < t/3, 2t/3 < v < t}`.
    Straddle,
    /// `{t/3 < u < v < 2t/3}`, the overlap of `Early` and `Late`.
    Overlap,
}

impl TimeRegion {
    /// `(w_lo, w_hi)` and the `u`-range at fixed `w`.
    fn limits(self, t: f64) -> ((f64, f64), impl Fn(f64) -> (f64, f64)) {
        let third = t / 3.0;
        let w_range = match self {
            TimeRegion::Full => (0.0, t),
            TimeRegion::Early | TimeRegion::Late => (0.0, 2.0 * third),
            TimeRegion::Straddle => (third, t),
            TimeRegion::Overlap => (0.0, third),
        };
        let u_range = move |w: f64| match self {
            TimeRegion::Full => (0.0, t - w),
            TimeRegion::Early => (0.0, 2.0 * third - w),
            TimeRegion::Late => (third, t - w),
            TimeRegion::Straddle => ((2.0 * third - w).max(0.0), third.min(t - w)),
            TimeRegion::Overlap => (third, 2.0 * third - w),
        };
        (w_range, u_range)
    }
}

/// `∬_region G_θ(v−u) / ((u+ε²)(t−v+ε²)) du dv`, the un-prefactored integrand of the bound.
pub fn region_integral(region: TimeRegion, epsilon: f64, t: f64, ev: &GreenEvaluator) -> Result<MomentResult> {
    check_ball_args(epsilon, t)?;
    check_evaluator(ev, ev.theta(), t)?;
    let e2 = epsilon * epsilon;
    let ((w_lo, w_hi), u_range) = region.limits(t);
    let h = |w: f64| {
        let (a, b) = u_range(w);
        Ok(reciprocal_pair_integral(e2, e2 + t - w, a, b))
    };
    let opts = AdaptiveOptions::new(1e-300, 1e-10);
    if w_lo > 0.0 {
        let mut worst_rel = 0.0f64;
        let breaks = merge_breaks(w_lo, w_hi, &[&graded_breaks_right(w_lo, w_hi, 50), &[2.0 * t / 3.0]]);
        let r = try_integrate_with_breaks(
            |w| {
                let g = ev.evaluate(w)?;
                worst_rel = worst_rel.max(g.abs_error / g.value);
                Ok(g.value * h(w)?)
            },
            &breaks,
            opts,
        )?;
        let mut m = MomentResult::from(r);
        m.abs_error_estimate += worst_rel * m.value;
        return Ok(m);
    }
    let w_min = (e2 * e2).min(W_MIN_FRACTION * t);
    let mut breaks = graded_w_breaks(w_hi, w_min, e2 * e2);
    breaks = merge_breaks(w_min, w_hi, &[&breaks, &[t / 3.0]]);
    green_weighted_integral(ev, h, w_min, &breaks, opts)
}

/// One row of the divergence scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub epsilon: f64,
    pub sharp: f64,
    pub bound: f64,
    pub normalized_sharp: f64,
    pub normalized_bound: f64,
    pub abs_err: f64,
}

/// `value / (log 1/ε)²` across a range of `ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceScan {
    pub t: f64,
    pub theta: f64,
    pub rows: Vec<ScanRow>,
    /// max/min of the normalized sharp column.
    pub sharp_ratio: f64,
    /// max/min of the normalized bound column.
    pub bound_ratio: f64,
    pub factor: f64,
}

impl DivergenceScan {
    /// Normalized sharp values stay within the configured factor band.
    pub fn bounded(&self) -> bool {
        self.sharp_ratio < self.factor
    }

    pub fn ordered(&self) -> bool {
        self.rows.iter().all(|r| r.sharp <= r.bound)
    }
}

pub const DEFAULT_SCAN_FACTOR: f64 = 5.0;

/// Evaluates the reduced ball second moment at each `ε` (in parallel).
pub fn log_divergence_scan(epsilons: &[f64], t: f64, ev: &GreenEvaluator, factor: f64) -> Result<DivergenceScan> {
    if epsilons.is_empty() {
        return Err(domain("empty ε list"));
    }
    let rows = epsilons
        .par_iter()
        .map(|&eps| {
            let m = ball_second_moment_reduced(eps, t, ev)?;
            let l2 = (1.0 / eps).ln().powi(2);
            Ok(ScanRow {
                epsilon: eps,
                sharp: m.sharp.value,
                bound: m.bound.value,
                normalized_sharp: m.sharp.value / l2,
                normalized_bound: m.bound.value / l2,
                abs_err: m.sharp.abs_error_estimate.max(m.bound.abs_error_estimate),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ratio = |f: fn(&ScanRow) -> f64| {
        let hi = rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let lo = rows.iter().map(f).fold(f64::INFINITY, f64::min);
        hi / lo
    };
    Ok(DivergenceScan {
        t,
        theta: ev.theta(),
        sharp_ratio: ratio(|r| r.normalized_sharp),
        bound_ratio: ratio(|r| r.normalized_bound),
        rows,
        factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_semigroup_and_flat() {
        let g = ProfileSpec::gaussian(1.0, [0.0, 0.0], 1.0).unwrap();
        let v = semigroup_apply(&g, 2.0, [0.0, 0.0]).unwrap();
        assert!((v - 1.0 / (6.0 * PI)).abs() < 1e-15);
        assert_eq!(semigroup_apply(&ProfileSpec::flat(1.0), 5.0, [3.0, -2.0]).unwrap(), 1.0);
        assert!(ProfileSpec::gaussian(0.0, [0.0, 0.0], 1.0).is_err());
        assert!(ProfileSpec::ball(0.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn ball_semigroup_limits() {
        let b = ProfileSpec::ball(1.0, [0.5, 0.0]).unwrap();
        assert_eq!(semigroup_apply(&b, 0.0, [0.5, 0.5]).unwrap(), 1.0);
        assert_eq!(semigroup_apply(&b, 0.0, [2.0, 0.0]).unwrap(), 0.0);
        // At the center: 1 − e^{−R²/2t}.
        let v = semigroup_apply(&b, 0.3, [0.5, 0.0]).unwrap();
        assert!((v - (1.0 - (-1.0f64 / 0.6).exp())).abs() < 1e-12, "{v}");
    }

    #[test]
    fn mean_closed_forms() {
        let g = ProfileSpec::gaussian(1.0, [0.0, 0.0], 1.0).unwrap();
        let m = mean_mass(&g, &g, 2.0).unwrap();
        assert!((m.value - 1.0 / (8.0 * PI)).abs() < 1e-15);
        let b = ProfileSpec::ball(0.7, [1.0, 2.0]).unwrap();
        let m = mean_mass(&b, &ProfileSpec::flat(1.0), 3.0).unwrap();
        assert!((m.value - PI * 0.49).abs() < 1e-15);
        assert!(mean_mass(&ProfileSpec::flat(1.0), &ProfileSpec::flat(1.0), 1.0).is_err());
    }

    #[test]
    fn polar_mean_matches_gaussian_closed_form() {
        let u0 = ProfileSpec::gaussian(0.4, [0.3, -0.2], 1.5).unwrap();
        let phi = ProfileSpec::gaussian(0.7, [1.0, 0.5], 0.8).unwrap();
        let exact = mean_mass(&u0, &phi, 0.9).unwrap().value;
        let quad = polar_mean(&u0, &phi, 0.9).unwrap();
        assert!((quad.value - exact).abs() < 1e-10 * exact, "{} vs {exact}", quad.value);
    }

    #[test]
    fn reciprocal_pair_matches_quadrature() {
        let (a, b) = (0.01, 0.8);
        let gl = crate::quadrature::GaussLegendre::new(60);
        let direct = gl.integrate(0.1, 0.5, |u| 1.0 / ((a + u) * (b - u)));
        assert!((reciprocal_pair_integral(a, b, 0.1, 0.5) - direct).abs() < 1e-12);
    }

    #[test]
    fn domination_is_tight_but_valid() {
        let m = indicator_domination_margin(0.1, 1000).unwrap();
        assert!(m.abs() < 1e-12);
    }
}
