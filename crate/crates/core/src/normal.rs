//! Standard normal distribution function.
//!
//! `Φ(x) = ½·erfc(−x/√2)`, with `erfc` taken from the pure-Rust `libm` port of
//! the FreeBSD/musl rational approximations. Those are accurate to under one
//! ulp of `erfc`, so for every finite `x` the absolute error of `Φ` stays well
//! below `1e-15`. Nothing here calls the platform math library, so results are
//! bit-identical across targets.

use crate::error::{Error, Result};

/// Φ(x) for finite `x`; non-finite input is a domain error.
pub fn standard_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("normal CDF of non-finite value {x}")));
    }
    Ok(phi(x))
}

/// Unchecked Φ. Infinite arguments map to 0 and 1, NaN propagates.
#[inline]
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_is_one_half() {
        assert_eq!(standard_normal_cdf(0.0).unwrap(), 0.5);
    }

    #[test]
    fn upper_quantile() {
        // mpmath at 40 digits: 0.9750000000268815569578503
        let p = standard_normal_cdf(1.959963985).unwrap();
        assert!((p - 0.975_000_000_026_881_6).abs() < 1e-15);
        assert!((p - 0.975).abs() < 1e-9);
    }

    #[test]
    fn lower_tail() {
        // mpmath: 6.220960574271784123515995e-16
        let p = standard_normal_cdf(-8.0).unwrap();
        assert!(p > 0.0 && p < 1e-14);
        assert!((p - 6.220_960_574_271_784e-16).abs() / 6.22e-16 < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(standard_normal_cdf(f64::NAN).is_err());
        assert!(standard_normal_cdf(f64::INFINITY).is_err());
        assert!(standard_normal_cdf(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn symmetric_and_monotone() {
        let mut prev = 0.0;
        for i in 0..=4000 {
            let x = -20.0 + i as f64 * 0.01;
            let p = phi(x);
            assert!(p >= prev, "not monotone at {x}");
            assert!((p + phi(-x) - 1.0).abs() < 1e-15);
            prev = p;
        }
    }
}
