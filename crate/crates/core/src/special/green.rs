//! Exponentially weighted Green's function of the Dickman subordinator,
//! `G_θ(t) = ∫₀^∞ e^{θs} f_s(t) ds`, and its spatial version `G_θ(t) p_{2t}(x)`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::Serialize;

use super::dickman::DickmanGrid;
use super::gamma::{digamma_lower_bound, ln_gamma, EULER_GAMMA};
use super::heat::heat_kernel;
use crate::error::{domain, Error, Result};
use crate::plane::Point;
use crate::quadrature::{graded_breaks_left, integrate_with_breaks, AdaptiveOptions};

/// A Green's function value with its error budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GreenValue {
    pub value: f64,
    /// Quadrature error estimate plus the certified truncation tail.
    pub abs_error: f64,
    pub s_max: f64,
}

/// Near-smallest `S` such that the `s`-integral of the majorant
/// `s^k_pow · e^{L s} / Γ(s+1)` (times `e^{log_prefactor}`) beyond `S`
/// is below `tol`, together with that tail bound.
///
/// On `[S, ∞)` the majorant is decreasing (checked via `ψ(x) > ln(x − ½)`)
/// and successive unit shifts shrink it by at most
/// `ρ = ((S+1)/S)^{k_pow} e^{L}/(S+1) < 1`, so the tail is at most `m(S)/(1 − ρ)`.
pub(crate) fn truncation_point(rate: f64, k_pow: i32, log_prefactor: f64, tol: f64) -> (f64, f64) {
    let bound = |s: f64| -> Option<f64> {
        let decreasing = (k_pow as f64) / s + rate <= digamma_lower_bound(s + 1.0);
        let ratio = ((s + 1.0) / s).powi(k_pow) * rate.exp() / (s + 1.0);
        if decreasing && ratio < 1.0 {
            let log_m = log_prefactor + k_pow as f64 * s.ln() + rate * s - ln_gamma(s + 1.0);
            Some(log_m.exp() / (1.0 - ratio))
        } else {
            None
        }
    };
    let ok = |s: f64| bound(s).is_some_and(|b| b < tol);
    let mut hi = 1.0f64;
    while !ok(hi) {
        if hi > 1e6 {
            return (hi, bound(hi).unwrap_or(f64::INFINITY));
        }
        hi *= 2.0;
    }
    let mut lo = 0.5 * hi;
    if hi > 1.0 {
        while hi - lo > 0.25 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    (hi, bound(hi).expect("accepted point has a bound"))
}

/// θ-indexed evaluator for `G_θ(t)` with a thread-safe memo.
#[derive(Debug)]
pub struct GreenEvaluator {
    theta: f64,
    dickman: Option<Arc<DickmanGrid>>,
    abs_tol: f64,
    rel_tol: f64,
    cache: RwLock<HashMap<u64, GreenValue>>,
}

impl Clone for GreenEvaluator {
    fn clone(&self) -> Self {
        Self {
            theta: self.theta,
            dickman: self.dickman.clone(),
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            cache: RwLock::new(self.cache.read().expect("cache lock").clone()),
        }
    }
}

impl GreenEvaluator {
    /// Evaluator restricted to `t ∈ (0, 1]`, where `f_s` is in closed form.
    pub fn new(theta: f64) -> Self {
        Self::with_tolerances(theta, None, 1e-13, 1e-11)
    }

    /// Evaluator backed by a Dickman table for `t > 1`.
    pub fn with_dickman(theta: f64, dickman: Arc<DickmanGrid>) -> Self {
        Self::with_tolerances(theta, Some(dickman), 1e-12, 1e-9)
    }

    pub fn with_tolerances(theta: f64, dickman: Option<Arc<DickmanGrid>>, abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            theta,
            dickman,
            abs_tol,
            rel_tol,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn t_max(&self) -> f64 {
        self.dickman.as_ref().map_or(1.0, |d| d.t_max().max(1.0))
    }

    /// `G_θ(t)`.
    pub fn value(&self, t: f64) -> Result<f64> {
        Ok(self.evaluate(t)?.value)
    }

    /// `G_θ(t)` with error budget and truncation point.
    pub fn evaluate(&self, t: f64) -> Result<GreenValue> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(domain(format!("Green's function needs t > 0, got {t}")));
        }
        let key = t.to_bits();
        if let Some(v) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let v = if t <= 1.0 {
            self.closed_form_integral(t)?
        } else {
            self.tabulated_integral(t)?
        };
        self.cache.write().expect("cache lock").insert(key, v);
        Ok(v)
    }

    fn closed_form_integral(&self, t: f64) -> Result<GreenValue> {
        let rate = self.theta - EULER_GAMMA + t.ln();
        let (s_max, tail) = truncation_point(rate, 1, -t.ln(), self.abs_tol);
        let integrand = |s: f64| {
            if s == 0.0 {
                0.0
            } else {
                (s.ln() + rate * s - ln_gamma(s + 1.0) - t.ln()).exp()
            }
        };
        let breaks = graded_breaks_left(0.0, s_max, 12);
        let r = integrate_with_breaks(integrand, &breaks, AdaptiveOptions::new(self.abs_tol, self.rel_tol))?;
        Ok(GreenValue {
            value: r.value,
            abs_error: r.abs_error + tail,
            s_max,
        })
    }

    fn tabulated_integral(&self, t: f64) -> Result<GreenValue> {
        let grid = self.dickman.as_ref().ok_or_else(|| {
            Error::OutOfRange(format!("G_θ({t}) with t > 1 needs a Dickman table"))
        })?;
        if t > grid.t_max() {
            return Err(Error::OutOfRange(format!("t = {t} exceeds Dickman t_max = {}", grid.t_max())));
        }
        // f_s(t) ≤ s t^{s−1} e^{−γs}/Γ(s+1) bounds the discarded tail.
        let rate = self.theta - EULER_GAMMA + t.ln();
        let (s_max, tail) = truncation_point(rate, 1, -t.ln(), self.abs_tol);
        let (lo, hi) = grid.s_range();
        if lo > 0.0 || hi < s_max {
            return Err(Error::OutOfRange(format!(
                "Dickman table covers s in [{lo}, {hi}], need [0, {s_max}]"
            )));
        }
        let theta = self.theta;
        let mut failure = None;
        let integrand = |s: f64| match grid.density(s, t) {
            Ok(f) => (theta * s).exp() * f,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        };
        let mut breaks: Vec<f64> = grid.s_values().iter().copied().filter(|&s| s <= s_max).collect();
        if *breaks.last().expect("s grid starts at 0") < s_max {
            breaks.push(s_max);
        }
        let opts = AdaptiveOptions {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_intervals: 20 * breaks.len() + 2000,
        };
        let r = integrate_with_breaks(integrand, &breaks, opts)?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(GreenValue {
            value: r.value,
            abs_error: r.abs_error + tail,
            s_max,
        })
    }

    /// `K_θ(w) = ∫₀^w G_θ(u) du = ∫₀^∞ e^{(θ−γ)s} w^s / Γ(s+1) ds`, for `0 < w ≤ 1`.
    pub fn cumulative(&self, w: f64) -> Result<GreenValue> {
        if !(w > 0.0) || w > 1.0 {
            return Err(domain(format!("cumulative Green integral needs 0 < w <= 1, got {w}")));
        }
        let rate = self.theta - EULER_GAMMA + w.ln();
        let (s_max, tail) = truncation_point(rate, 0, 0.0, self.abs_tol);
        let integrand = |s: f64| (rate * s - ln_gamma(s + 1.0)).exp();
        let breaks = graded_breaks_left(0.0, s_max, 12);
        let r = integrate_with_breaks(integrand, &breaks, AdaptiveOptions::new(self.abs_tol, self.rel_tol))?;
        Ok(GreenValue {
            value: r.value,
            abs_error: r.abs_error + tail,
            s_max,
        })
    }

    /// `G_θ(t, x) = G_θ(t) p_{2t}(x)`.
    pub fn kernel(&self, t: f64, x: Point) -> Result<f64> {
        Ok(self.value(t)? * heat_kernel(2.0 * t, x)?)
    }
}

/// `G_θ(t)` with a one-off evaluator.
pub fn green_function(theta: f64, t: f64, ev: &GreenEvaluator) -> Result<f64> {
    if ev.theta() != theta {
        return GreenEvaluator::with_tolerances(theta, ev.dickman.clone(), ev.abs_tol, ev.rel_tol).value(t);
    }
    ev.value(t)
}

/// `G_θ(t, x)`.
pub fn green_kernel(theta: f64, t: f64, x: Point, ev: &GreenEvaluator) -> Result<f64> {
    Ok(green_function(theta, t, ev)? * heat_kernel(2.0 * t, x)?)
}

/// Row of the exported `(theta, t, G)` table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GreenSample {
    pub theta: f64,
    pub t: f64,
    #[serde(rename = "G")]
    pub g: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::dickman::DickmanOptions;

    #[test]
    fn ordering_in_theta() {
        let a = GreenEvaluator::new(-1.0).value(1.0).unwrap();
        let b = GreenEvaluator::new(0.0).value(1.0).unwrap();
        let c = GreenEvaluator::new(1.0).value(1.0).unwrap();
        assert!(0.0 < a && a < b && b < c, "{a} {b} {c}");
    }

    #[test]
    fn small_time_blowup_matches_leading_asymptotics() {
        // G_0(t) ~ 1/(t (log 1/t)²) as t → 0.
        let ev = GreenEvaluator::new(0.0);
        let t = 1e-12f64;
        let l = (1.0 / t).ln();
        let ratio = ev.value(t).unwrap() * t * l * l;
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn cumulative_is_integral_of_green() {
        let ev = GreenEvaluator::new(0.3);
        let k1 = ev.cumulative(0.5).unwrap().value;
        let k0 = ev.cumulative(0.1).unwrap().value;
        let gl = crate::quadrature::GaussLegendre::new(40);
        let direct = gl.integrate(0.1, 0.5, |u| ev.value(u).unwrap());
        assert!((k1 - k0 - direct).abs() < 1e-10, "{} vs {}", k1 - k0, direct);
    }

    #[test]
    fn kernel_factorizes() {
        let ev = GreenEvaluator::new(0.0);
        let g = ev.value(1.0).unwrap();
        let k0 = ev.kernel(1.0, [0.0, 0.0]).unwrap();
        assert!((k0 - g / (4.0 * std::f64::consts::PI)).abs() < 1e-15);
        let x = [0.7, -1.1];
        let ratio = ev.kernel(1.0, x).unwrap() / g;
        assert!((ratio - heat_kernel(2.0, x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn beyond_unit_time_converges_under_s_refinement() {
        let build = |step: f64| {
            let n = (20.0 / step).round() as usize;
            let s: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
            Arc::new(DickmanGrid::build(&s, 3.0, DickmanOptions::default()).unwrap())
        };
        let coarse = GreenEvaluator::with_dickman(0.0, build(0.05));
        let fine = GreenEvaluator::with_dickman(0.0, build(0.025));
        for &t in &[1.2, 1.5, 2.5] {
            let a = coarse.value(t).unwrap();
            let b = fine.value(t).unwrap();
            assert!(a > 0.0 && (a - b).abs() < 1e-6 * b, "t={t}: {a} vs {b}");
        }
        // Continuity at t = 1 has modulus δ^s; the jump over δ = 1e-9 is small but real.
        let left = fine.value(1.0).unwrap();
        let right = fine.value(1.0 + 1e-9).unwrap();
        assert!((left - right).abs() < 1e-2 * left);
        assert!(GreenEvaluator::new(0.0).value(1.5).is_err());
    }

    #[test]
    fn concurrent_reads_are_consistent() {
        let ev = GreenEvaluator::new(0.5);
        let ts: Vec<f64> = (1..50).map(|i| i as f64 / 50.0).collect();
        let serial: Vec<f64> = ts.iter().map(|&t| GreenEvaluator::new(0.5).value(t).unwrap()).collect();
        std::thread::scope(|scope| {
            for _ in 0..4 {
                scope.spawn(|| {
                    for (i, &t) in ts.iter().enumerate() {
                        assert_eq!(ev.value(t).unwrap(), serial[i]);
                    }
                });
            }
        });
    }
}
