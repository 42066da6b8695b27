/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_606_512_090_082_402_43;

/// `ln Γ(x)` for `x > 0`.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Lower bound of `ψ(x)` valid for `x > 1/2`: `ψ(x) > ln(x - 1/2)`.
#[inline]
pub fn digamma_lower_bound(x: f64) -> f64 {
    (x - 0.5).ln()
}

/// `1/Γ(s+1)` never exceeds this on `s ≥ 0` (the minimum of Γ on (1,2) is 0.8856...).
pub const INV_GAMMA_SUP: f64 = 1.129_173_885_450_477;

/// `Ein(λ) = ∫₀¹ (e^{λx} − 1)/x dx = Σ_{k≥1} λ^k/(k·k!)`, for λ ≥ 0.
pub fn ein(lambda: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 1..400 {
        let kf = k as f64;
        term *= lambda / kf;
        let add = term / kf;
        sum += add;
        if add < 1e-17 * sum {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-15);
        assert!((ln_gamma(3.0) - 2f64.ln()).abs() < 1e-15);
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-14);
        assert!((ln_gamma(101.0) - 363.739_375_555_563_47).abs() < 1e-11);
    }

    #[test]
    fn inverse_gamma_bound_holds_on_grid() {
        for i in 0..20_000 {
            let s = i as f64 * 1e-3;
            assert!((-ln_gamma(s + 1.0)).exp() <= INV_GAMMA_SUP * (1.0 + 1e-14));
        }
    }

    #[test]
    fn ein_matches_quadrature() {
        let gl = crate::quadrature::GaussLegendre::new(40);
        for &l in &[0.0, 0.5, 3.0, 10.0] {
            let q = gl.integrate(0.0, 1.0, |x| if x == 0.0 { l } else { (l * x).exp_m1() / x });
            assert!((ein(l) - q).abs() < 1e-12 * q.max(1.0), "{l}");
        }
    }
}
