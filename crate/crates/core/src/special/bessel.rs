/// Exponentially scaled modified Bessel function `e^{-z} I₀(z)` for `z ≥ 0`.
pub fn bessel_i0e(z: f64) -> f64 {
    let z = z.abs();
    if z < 20.0 {
        let q = 0.25 * z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        sum * (-z).exp()
    } else {
        // Asymptotic series, truncated at its smallest term.
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            let next = term * (2.0 * k - 1.0) * (2.0 * k - 1.0) / (8.0 * k * z);
            if next.abs() >= term.abs() || next.abs() < 1e-17 {
                break;
            }
            sum += next;
            term = next;
            k += 1.0;
        }
        sum / (2.0 * std::f64::consts::PI * z).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn by_quadrature(z: f64) -> f64 {
        // (1/π)∫₀^π e^{z(cos φ − 1)} dφ with a periodic trapezoid rule.
        let n = 4000;
        let h = std::f64::consts::PI / n as f64;
        let mut s = 0.5 * (1.0 + (-2.0 * z).exp());
        for i in 1..n {
            s += (z * ((i as f64 * h).cos() - 1.0)).exp();
        }
        s * h / std::f64::consts::PI
    }

    #[test]
    fn matches_integral_representation() {
        for &z in &[0.0, 0.1, 1.0, 5.0, 19.9, 20.1, 50.0, 300.0] {
            let a = bessel_i0e(z);
            let b = by_quadrature(z);
            assert!((a - b).abs() < 1e-13 * b.max(1e-300) + 1e-15, "z={z}: {a} vs {b}");
        }
    }
}
