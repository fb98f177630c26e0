//! Standard normal helpers.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::sync::OnceLock;

fn standard() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(Normal::standard)
}

/// Φ(x).
pub fn cdf(x: f64) -> f64 {
    standard().cdf(x)
}

/// 1 − Φ(x), accurate in the upper tail.
pub fn sf(x: f64) -> f64 {
    standard().sf(x)
}

/// φ(x).
pub fn pdf(x: f64) -> f64 {
    standard().pdf(x)
}

/// Φ⁻¹(p) for p in (0, 1).
pub fn quantile(p: f64) -> f64 {
    standard().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for &p in &[1e-10, 0.01, 0.25, 0.5, 0.9, 1.0 - 1e-9] {
            assert!((cdf(quantile(p)) - p).abs() < 1e-9 * p);
        }
        assert!((cdf(1.0 / 2f64.sqrt()) - 0.760_249_938_906_523_3).abs() < 1e-12);
    }
}
