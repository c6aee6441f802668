//! Standard normal distribution helpers.
//!
//! `cdf` is the function N(z) = P(Z <= z). Tail values are computed through
//! `erfc` so that the lower tail keeps full relative precision down to the
//! underflow limit, which matters because costs are `-eps * ln N(z)`.

use libm::erfc;
use std::f64::consts::{PI, SQRT_2};

/// Density of the standard normal law.
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// N(z) = 1/2 erfc(-z / sqrt 2).
pub fn cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-z / SQRT_2)
}

/// ln N(z), accurate in both tails.
pub fn ln_cdf(z: f64) -> f64 {
    if z > 0.0 {
        return (-cdf(-z)).ln_1p();
    }
    if z > -30.0 {
        return cdf(z).ln();
    }
    // Asymptotic series of the Mills ratio.
    let z2 = z * z;
    let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

/// Inverse Mills ratio pdf(z) / N(-z), stable for large z.
pub fn inverse_mills(z: f64) -> f64 {
    if z < 30.0 {
        return pdf(z) / cdf(-z);
    }
    (pdf(z).ln() - ln_cdf(-z)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-15);
        // Tabulated N(-1.96) = 0.024997895148220435
        assert!((cdf(-1.96) / 0.024_997_895_148_220_435 - 1.0).abs() < 1e-15);
        assert!((cdf(40.0) - 1.0).abs() < 1e-15);
        // N(-1/sqrt(0.1)) ~ 7.827e-4
        let v = cdf(-1.0 / 0.1f64.sqrt());
        assert!((v - 7.827_011_290_012_74e-4).abs() < 1e-12, "{v}");
    }

    #[test]
    fn ln_cdf_matches_in_overlap() {
        for &z in &[-10.0, -20.0, -29.0] {
            let direct = cdf(z).ln();
            let z2: f64 = z * z;
            let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
            let asym = -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * PI).ln() + series.ln();
            assert!((direct - asym).abs() / direct.abs() < 1e-6, "z={z}");
        }
        assert!(ln_cdf(-40.0).is_finite());
    }

    #[test]
    fn mills_ratio_bounds() {
        // z <= pdf(z)/N(-z) <= z + 1/z for z > 0
        for i in 1..100 {
            let z = i as f64 * 0.1;
            let m = inverse_mills(z);
            assert!(m >= z && m <= z + 1.0 / z, "z={z} m={m}");
        }
    }
}
