//! Per-observation negative log-likelihoods with first and second
//! derivatives in the linear predictor.

use crate::error::{EmberError, Result};
use crate::extremes::XI_ZERO_EPS;
use crate::inference::spec::Family;
use crate::special::{digamma, inv_logit, ln_gamma, log1p_exp, trigamma};

/// Likelihood hyperparameters resolved for derivative evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FamilyTheta {
    /// Beta precision φ = a + b.
    pub beta_precision: f64,
    /// GPD shape ξ (stationary).
    pub gpd_shape: f64,
    /// Gamma precision (shape) φ.
    pub gamma_precision: f64,
    /// Precision of the log-scale normal size model.
    pub lognormal_precision: f64,
    /// Precision of the identity-link Gaussian family.
    pub gaussian_precision: f64,
}

impl Default for FamilyTheta {
    fn default() -> Self {
        FamilyTheta {
            beta_precision: 2.0,
            gpd_shape: 0.5,
            gamma_precision: 1.0,
            lognormal_precision: 1.0,
            gaussian_precision: 1.0,
        }
    }
}

/// GPD scale from the log-median predictor: σ(η) = c_ξ · exp(η) with
/// c_ξ = ξ/(2^ξ − 1).
pub(crate) fn gpd_scale_coefficient(shape: f64) -> f64 {
    if shape.abs() < XI_ZERO_EPS {
        1.0 / std::f64::consts::LN_2
    } else {
        shape / (2f64.powf(shape) - 1.0)
    }
}

/// Weighted negative log-likelihood of one observation together with its
/// first and second derivative in η.
///
/// Poisson observations expect η to include the log-volume offset. The Beta
/// family uses the mean/precision parametrization a = μφ, b = (1−μ)φ with a
/// logit link; the GPD family links the median through exp(η).
pub fn component_negloglik(
    family: Family,
    eta: f64,
    y: f64,
    weight: f64,
    theta: &FamilyTheta,
) -> Result<(f64, f64, f64)> {
    let (v, d1, d2) = match family {
        Family::Poisson => {
            if y < 0.0 || y.fract() != 0.0 {
                return Err(EmberError::Support(format!(
                    "Poisson counts must be non-negative integers, got {y}"
                )));
            }
            let lambda = eta.exp();
            (
                lambda - y * eta + ln_gamma(y + 1.0),
                lambda - y,
                lambda,
            )
        }
        Family::Bernoulli => {
            if y != 0.0 && y != 1.0 {
                return Err(EmberError::Support(format!(
                    "Bernoulli outcomes must be 0 or 1, got {y}"
                )));
            }
            let p = inv_logit(eta);
            (log1p_exp(eta) - y * eta, p - y, p * (1.0 - p))
        }
        Family::Beta => {
            if !(y > 0.0 && y < 1.0) {
                return Err(EmberError::Support(format!(
                    "Beta observations must lie in (0, 1), got {y}"
                )));
            }
            let phi = theta.beta_precision;
            let mu = inv_logit(eta).clamp(1e-12, 1.0 - 1e-12);
            let (a, b) = (mu * phi, (1.0 - mu) * phi);
            let v = ln_gamma(a) + ln_gamma(b) - ln_gamma(phi)
                - (a - 1.0) * y.ln()
                - (b - 1.0) * (1.0 - y).ln();
            let dv_dmu = phi * (digamma(a) - digamma(b) - y.ln() + (1.0 - y).ln());
            let d2v_dmu2 = phi * phi * (trigamma(a) + trigamma(b));
            let dmu = mu * (1.0 - mu);
            let d2mu = dmu * (1.0 - 2.0 * mu);
            (
                v,
                dv_dmu * dmu,
                d2v_dmu2 * dmu * dmu + dv_dmu * d2mu,
            )
        }
        Family::Gpd => {
            if y < 0.0 {
                return Err(EmberError::Support(format!(
                    "GPD excesses must be non-negative, got {y}"
                )));
            }
            let xi = theta.gpd_shape;
            let sigma = gpd_scale_coefficient(xi) * eta.exp();
            if xi.abs() < XI_ZERO_EPS {
                let r = y / sigma;
                (sigma.ln() + r, 1.0 - r, r)
            } else {
                let t = xi * y / sigma;
                if 1.0 + t <= 0.0 {
                    return Err(EmberError::Support(format!(
                        "excess {y} outside the GPD support at scale {sigma}, shape {xi}"
                    )));
                }
                let v = sigma.ln() + (1.0 + 1.0 / xi) * (1.0 + t).ln();
                let d1 = 1.0 - (1.0 + xi) * y / (sigma + xi * y);
                let d2 = (1.0 + 1.0 / xi) * t / ((1.0 + t) * (1.0 + t));
                (v, d1, d2)
            }
        }
        Family::Gamma => {
            if !(y > 0.0) {
                return Err(EmberError::Support(format!(
                    "Gamma observations must be positive, got {y}"
                )));
            }
            let phi = theta.gamma_precision;
            let r = y * (-eta).exp();
            let v = -phi * (phi.ln() - eta) - (phi - 1.0) * y.ln() + phi * r + ln_gamma(phi);
            (v, phi * (1.0 - r), phi * r)
        }
        Family::LogNormal => {
            if !(y > 0.0) {
                return Err(EmberError::Support(format!(
                    "log-normal observations must be positive, got {y}"
                )));
            }
            let phi = theta.lognormal_precision;
            let z = y.ln();
            let m = eta.exp();
            let v = 0.5 * ((2.0 * std::f64::consts::PI / phi).ln()) + 0.5 * phi * (z - m) * (z - m);
            let d1 = phi * m * (m - z);
            let d2 = phi * m * (2.0 * m - z);
            (v, d1, d2)
        }
        Family::Gaussian => {
            let phi = theta.gaussian_precision;
            let v = 0.5 * ((2.0 * std::f64::consts::PI / phi).ln()) + 0.5 * phi * (y - eta) * (y - eta);
            (v, phi * (eta - y), phi)
        }
    };
    Ok((weight * v, weight * d1, weight * d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bernoulli_reference_point() {
        let t = FamilyTheta::default();
        let (v, d1, d2) = component_negloglik(Family::Bernoulli, 0.0, 1.0, 1.0, &t).unwrap();
        assert_relative_eq!(v, 2f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(d1, -0.5, max_relative = 1e-15);
        assert_relative_eq!(d2, 0.25, max_relative = 1e-15);
    }

    #[test]
    fn poisson_score_vanishes_at_mle() {
        let t = FamilyTheta::default();
        for y in [1.0f64, 3.0, 20.0] {
            let (_, d1, _) = component_negloglik(Family::Poisson, y.ln(), y, 1.0, &t).unwrap();
            assert!(d1.abs() < 1e-12);
        }
        assert!(component_negloglik(Family::Poisson, 0.0, -1.0, 1.0, &t).is_err());
    }

    #[test]
    fn beta_uniform_density_has_zero_negloglik() {
        // μ = 1/2, φ = 2 → a = b = 1 → Uniform(0,1)
        let t = FamilyTheta {
            beta_precision: 2.0,
            ..FamilyTheta::default()
        };
        let (v, _, _) = component_negloglik(Family::Beta, 0.0, 0.3, 1.0, &t).unwrap();
        assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        assert!(component_negloglik(Family::Beta, 0.0, 1.0, 1.0, &t).is_err());
    }

    #[test]
    fn gpd_out_of_support_detected() {
        let t = FamilyTheta {
            gpd_shape: -0.4,
            ..FamilyTheta::default()
        };
        // upper bound σ/0.4; pick η so that the bound is small
        let err = component_negloglik(Family::Gpd, -3.0, 10.0, 1.0, &t);
        assert!(err.is_err());
    }

    #[test]
    fn weights_scale_all_outputs() {
        let t = FamilyTheta::default();
        let (v1, g1, h1) = component_negloglik(Family::Poisson, 0.3, 2.0, 1.0, &t).unwrap();
        let (v3, g3, h3) = component_negloglik(Family::Poisson, 0.3, 2.0, 3.0, &t).unwrap();
        assert_relative_eq!(v3, 3.0 * v1);
        assert_relative_eq!(g3, 3.0 * g1);
        assert_relative_eq!(h3, 3.0 * h1);
    }

    /// Analytic derivatives must match central finite differences across
    /// families, predictors, observations and hyperparameters.
    #[test]
    fn derivatives_match_finite_differences() {
        let cases: Vec<(Family, f64, f64, FamilyTheta)> = {
            let mut cases = Vec::new();
            let mut rng = crate::rng::rng_from_seed(2024);
            use rand::Rng;
            for i in 0..100 {
                let eta: f64 = rng.random::<f64>() * 4.0 - 2.0;
                let theta = FamilyTheta {
                    beta_precision: 0.5 + 5.0 * rng.random::<f64>(),
                    gpd_shape: [-0.3, 0.0, 0.4, 0.9][i % 4],
                    gamma_precision: 0.5 + 3.0 * rng.random::<f64>(),
                    lognormal_precision: 0.5 + 3.0 * rng.random::<f64>(),
                    gaussian_precision: 0.5 + 3.0 * rng.random::<f64>(),
                };
                let family = [
                    Family::Poisson,
                    Family::Bernoulli,
                    Family::Beta,
                    Family::Gpd,
                    Family::Gamma,
                    Family::LogNormal,
                    Family::Gaussian,
                ][i % 7];
                let y = match family {
                    Family::Poisson => (rng.random::<f64>() * 6.0).floor(),
                    Family::Bernoulli => (i % 2) as f64,
                    Family::Beta => 0.05 + 0.9 * rng.random::<f64>(),
                    // keep excesses inside the support for negative shapes
                    Family::Gpd => 0.2 * eta.exp(),
                    Family::Gamma | Family::LogNormal => 0.3 + 3.0 * rng.random::<f64>(),
                    Family::Gaussian => rng.random::<f64>() * 6.0 - 3.0,
                };
                cases.push((family, eta, y, theta));
            }
            cases
        };
        for (family, eta, y, theta) in cases {
            let h = 1e-5;
            let f = |e: f64| component_negloglik(family, e, y, 1.0, &theta).unwrap().0;
            let (_, d1, d2) = component_negloglik(family, eta, y, 1.0, &theta).unwrap();
            let fd1 = (f(eta + h) - f(eta - h)) / (2.0 * h);
            let fd2 = (f(eta + h) - 2.0 * f(eta) + f(eta - h)) / (h * h);
            let tol1 = 1e-6 * (1.0 + d1.abs());
            let tol2 = 2e-4 * (1.0 + d2.abs());
            assert!(
                (d1 - fd1).abs() < tol1,
                "{family:?} η={eta} y={y}: d1 {d1} vs fd {fd1}"
            );
            assert!(
                (d2 - fd2).abs() < tol2,
                "{family:?} η={eta} y={y}: d2 {d2} vs fd {fd2}"
            );
        }
    }
}
