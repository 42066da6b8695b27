use std::f64::consts::PI;

use crate::error::{domain, Result};
use crate::plane::{midpoint, norm_sq, sub, Point};

/// Planar Gaussian density with covariance `t·I`, evaluated at `x`.
pub fn heat_kernel(t: f64, x: Point) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(domain(format!("heat kernel needs t > 0, got {t}")));
    }
    Ok(heat_kernel_unchecked(t, norm_sq(x)))
}

/// `p_t(x, y) = p_t(y - x)`.
pub fn heat_kernel_between(t: f64, x: Point, y: Point) -> Result<f64> {
    heat_kernel(t, sub(y, x))
}

/// Kernel as a function of the squared distance; caller guarantees `t > 0`.
#[inline]
pub fn heat_kernel_unchecked(t: f64, dist_sq: f64) -> f64 {
    (-dist_sq / (2.0 * t)).exp() / (2.0 * PI * t)
}

/// Splits `p_t(x,y)·p_t(x',y)` into `(p_{2t}(x,x'), p_{t/2}((x+x')/2, y))`.
pub fn gaussian_product_split(t: f64, x: Point, xp: Point, y: Point) -> Result<(f64, f64)> {
    let left = heat_kernel_between(2.0 * t, x, xp)?;
    let right = heat_kernel_between(0.5 * t, midpoint(x, xp), y)?;
    Ok((left, right))
}

/// `p_σ(x)² = p_{σ/2}(x) / (4πσ)`.
pub fn heat_kernel_squared(sigma: f64, x: Point) -> Result<f64> {
    Ok(heat_kernel(0.5 * sigma, x)? / (4.0 * PI * sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;

    #[test]
    fn closed_form_values() {
        assert!((heat_kernel(1.0, [0.0, 0.0]).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let v = heat_kernel(1.0, [2f64.sqrt(), 0.0]).unwrap();
        assert!((v - (-1f64).exp() / (2.0 * PI)).abs() < 1e-15);
        assert!((v - 0.0585498).abs() < 1e-7);
        assert!(heat_kernel(0.0, [0.0, 0.0]).is_err());
        assert!(heat_kernel(-1.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn product_split_origin() {
        let (l, r) = gaussian_product_split(1.0, [0.0; 2], [0.0; 2], [0.0; 2]).unwrap();
        assert!((l - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!((r - 1.0 / PI).abs() < 1e-15);
        let p = heat_kernel(1.0, [0.0; 2]).unwrap();
        assert!((l * r - p * p).abs() < 1e-15);
    }

    #[test]
    fn product_split_symmetric_pair() {
        let (l, r) = gaussian_product_split(2.0, [1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]).unwrap();
        let direct = heat_kernel_between(2.0, [1.0, 0.0], [0.0, 0.0]).unwrap()
            * heat_kernel_between(2.0, [-1.0, 0.0], [0.0, 0.0]).unwrap();
        assert!((l * r - direct).abs() < 1e-12);
    }

    #[test]
    fn squared_kernel_identity() {
        for &(s, x) in &[(0.3, [0.1, -0.4]), (2.0, [1.5, 2.0]), (1e-3, [0.01, 0.0])] {
            let p = heat_kernel(s, x).unwrap();
            let q = heat_kernel_squared(s, x).unwrap();
            assert!((p * p - q).abs() <= 1e-12 * p * p);
        }
    }

    #[test]
    fn chapman_kolmogorov_by_quadrature() {
        // (p_{0.5} * p_{0.5})(x) on a box wide enough that the tails are < 1e-16.
        let x = [0.3, 0.4];
        let gl = GaussLegendre::new(120);
        let (lo, hi) = (-7.0, 7.0);
        let panels = 6;
        let width = (hi - lo) / panels as f64;
        let mut acc = crate::quadrature::NeumaierSum::new();
        for pa in 0..panels {
            let a0 = lo + pa as f64 * width;
            for (y0, w0) in gl.mapped(a0, a0 + width) {
                for pb in 0..panels {
                    let b0 = lo + pb as f64 * width;
                    for (y1, w1) in gl.mapped(b0, b0 + width) {
                        let y = [y0, y1];
                        let v = heat_kernel(0.5, y).unwrap() * heat_kernel_between(0.5, y, x).unwrap();
                        acc.add(w0 * w1 * v);
                    }
                }
            }
        }
        let exact = heat_kernel(1.0, x).unwrap();
        assert!((acc.value() - exact).abs() < 1e-10, "{} vs {}", acc.value(), exact);
    }
}
