//! Prior configuration for fixed effects, sharing coefficients and
//! hyperparameters.

/// Defaults follow the reference prior choices: diffuse Gaussians on fixed
/// effects (precision 0.001), N(0, 20) sharing coefficients, very flat Gamma
/// hyperpriors on random-walk precisions (mean 1, precision 0.0005), a unit
///-rate exponential prior on the GPD shape, and penalized-complexity priors
/// on Matérn range/sd.
#[derive(Debug, Clone, Copy)]
pub struct PriorConfig {
    pub fixed_effect_precision: f64,
    pub sharing_precision: f64,
    pub rw1_loggamma_mean: f64,
    pub rw1_loggamma_precision: f64,
    pub gpd_shape_rate: f64,
    /// P(range < r₀) for the PC range prior.
    pub pc_range_prob: f64,
    /// r₀ as a fraction of the study-domain diameter.
    pub pc_range_fraction: f64,
    /// P(sd > σ₀) for the PC sd prior.
    pub pc_sd_prob: f64,
    pub pc_sd_value: f64,
    /// Flat Gamma hyperprior on likelihood precision parameters (Beta φ,
    /// Gamma and log-normal precisions).
    pub precision_loggamma_mean: f64,
    pub precision_loggamma_precision: f64,
    /// Fixed 1D spline hyperparameters (range defaults to half the knot
    /// span when unset).
    pub spline_range: Option<f64>,
    pub spline_sd: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            fixed_effect_precision: 0.001,
            sharing_precision: 1.0 / 20.0,
            rw1_loggamma_mean: 1.0,
            rw1_loggamma_precision: 0.0005,
            gpd_shape_rate: 1.0,
            pc_range_prob: 0.05,
            pc_range_fraction: 0.10,
            pc_sd_prob: 0.05,
            pc_sd_value: 1.0,
            precision_loggamma_mean: 1.0,
            precision_loggamma_precision: 0.0005,
            spline_range: None,
            spline_sd: 1.0,
        }
    }
}

impl PriorConfig {
    /// Gamma(shape, rate) matching the configured mean and precision
    /// (precision = 1/variance) for random-walk τ hyperpriors.
    pub(crate) fn rw1_gamma(&self) -> (f64, f64) {
        gamma_from_mean_precision(self.rw1_loggamma_mean, self.rw1_loggamma_precision)
    }

    pub(crate) fn precision_gamma(&self) -> (f64, f64) {
        gamma_from_mean_precision(
            self.precision_loggamma_mean,
            self.precision_loggamma_precision,
        )
    }

    /// PC-prior rate for the Matérn range given the domain diameter.
    pub(crate) fn pc_range_lambda(&self, domain_diameter: f64, dim: usize) -> f64 {
        let r0 = (self.pc_range_fraction * domain_diameter).max(1e-12);
        -(self.pc_range_prob.ln()) * r0.powf(dim as f64 / 2.0)
    }

    pub(crate) fn pc_sd_lambda(&self) -> f64 {
        -(self.pc_sd_prob.ln()) / self.pc_sd_value
    }
}

/// Gamma(shape a, rate b) with mean a/b and precision (a/b²)⁻¹.
fn gamma_from_mean_precision(mean: f64, precision: f64) -> (f64, f64) {
    let variance = 1.0 / precision;
    let rate = mean / variance;
    let shape = mean * rate;
    (shape, rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_matches_mean_and_precision() {
        let (a, b) = gamma_from_mean_precision(1.0, 0.0005);
        assert_relative_eq!(a / b, 1.0);
        assert_relative_eq!(a / (b * b), 2000.0);
    }

    #[test]
    fn pc_lambdas_are_positive() {
        let cfg = PriorConfig::default();
        assert!(cfg.pc_range_lambda(100.0, 2) > 0.0);
        assert!(cfg.pc_sd_lambda() > 0.0);
    }
}
