//! Matérn correlation with smoothness ν = 1.

use crate::gmrf::precision::MaternHyper;
use crate::special::bessel_k1;

/// Correlation at distance `d` under the ν = 1 Matérn model:
/// `κd · K₁(κd)` with κ = √8 / range, continuous limit 1 at d = 0.
pub fn matern_correlation(d: f64, hyper: &MaternHyper) -> f64 {
    assert!(d >= 0.0, "distance must be non-negative");
    let s = hyper.kappa() * d;
    if s < 1e-12 {
        1.0
    } else {
        s * bessel_k1(s)
    }
}
