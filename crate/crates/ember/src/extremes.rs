//! Generalized Pareto tail machinery and threshold-selection diagnostics.
//!
//! Excesses above a high threshold follow GPD(σ, ξ) with survival
//! `(1 + ξx/σ)₊^{-1/ξ}` (exponential at ξ = 0). Fitting is by maximum
//! likelihood on a profile over the shape, diagnostics are shape-stability
//! curves, mean-excess curves, and the multiple-threshold likelihood-ratio
//! test of a common shape across interval-truncated pieces.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{EmberError, Result};
use crate::exec;
use crate::optim::golden_max;

/// Shape values below 1e-8 in magnitude switch to the exponential branch;
/// the power form loses all significance there in double precision.
pub const XI_ZERO_EPS: f64 = 1e-8;

/// Box constraints for ML shape estimation. Regularity of ML needs ξ > -0.5;
/// the upper bound comfortably covers heavy burnt-area tails.
pub const XI_MIN: f64 = -0.49;
pub const XI_MAX: f64 = 2.0;

/// Generalized Pareto scale/shape pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdParams {
    pub scale: f64,
    pub shape: f64,
}

impl GpdParams {
    pub fn new(scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !shape.is_finite() {
            return Err(EmberError::InvalidInput(format!(
                "GPD requires finite shape and positive scale, got scale={scale}, shape={shape}"
            )));
        }
        Ok(GpdParams { scale, shape })
    }

    /// Upper support bound of the excess distribution (-σ/ξ for ξ < 0).
    pub fn upper_bound(&self) -> f64 {
        if self.shape < -XI_ZERO_EPS {
            -self.scale / self.shape
        } else {
            f64::INFINITY
        }
    }
}

/// Survival function of the excess distribution at x ≥ 0.
pub fn gpd_sf(x: f64, p: &GpdParams) -> f64 {
    debug_assert!(x >= 0.0);
    if p.shape.abs() < XI_ZERO_EPS {
        (-x / p.scale).exp()
    } else {
        let t = 1.0 + p.shape * x / p.scale;
        if t <= 0.0 {
            0.0
        } else {
            t.powf(-1.0 / p.shape)
        }
    }
}

/// Log-density of the excess distribution; -inf outside the support.
pub fn gpd_logpdf(x: f64, p: &GpdParams) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    if p.shape.abs() < XI_ZERO_EPS {
        -p.scale.ln() - x / p.scale
    } else {
        let t = 1.0 + p.shape * x / p.scale;
        if t <= 0.0 {
            f64::NEG_INFINITY
        } else {
            -p.scale.ln() - (1.0 + 1.0 / p.shape) * t.ln()
        }
    }
}

/// Quantile of the excess distribution given a survival level s ∈ (0, 1].
pub fn gpd_quantile_from_survival(s: f64, p: &GpdParams) -> f64 {
    debug_assert!(s > 0.0 && s <= 1.0);
    if p.shape.abs() < XI_ZERO_EPS {
        -p.scale * s.ln()
    } else {
        p.scale / p.shape * (s.powf(-p.shape) - 1.0)
    }
}

/// Scale implied by a GPD median under shape ξ: gpd_sf(median) = 1/2.
pub fn scale_from_median(median: f64, shape: f64) -> f64 {
    debug_assert!(median > 0.0);
    if shape.abs() < XI_ZERO_EPS {
        median / std::f64::consts::LN_2
    } else {
        shape * median / (2f64.powf(shape) - 1.0)
    }
}

/// Tail of the full-size distribution above the threshold:
/// `F(x) ≈ 1 - p_exc · SF(x - u)` for x > u.
pub fn tail_cdf(x: f64, threshold: f64, p_exc: f64, p: &GpdParams) -> Result<f64> {
    if !(x > threshold) {
        return Err(EmberError::InvalidInput(format!(
            "tail_cdf needs x > threshold, got x={x}, threshold={threshold}"
        )));
    }
    if !(p_exc > 0.0 && p_exc < 1.0) {
        return Err(EmberError::InvalidInput(format!(
            "exceedance probability must lie in (0,1), got {p_exc}"
        )));
    }
    Ok(1.0 - p_exc * gpd_sf(x - threshold, p))
}

/// Maximum-likelihood fit of a GPD to positive excesses.
#[derive(Debug, Clone)]
pub struct GpdFit {
    pub params: GpdParams,
    pub scale_se: f64,
    pub shape_se: f64,
    pub log_likelihood: f64,
    pub n: usize,
}

/// Default minimum number of excesses for a fit.
pub const DEFAULT_MIN_EXCESSES: usize = 10;

pub fn gpd_fit_ml(excesses: &[f64]) -> Result<GpdFit> {
    gpd_fit_ml_with_min(excesses, DEFAULT_MIN_EXCESSES)
}

/// GPD log-likelihood of a sample.
pub fn gpd_loglik(excesses: &[f64], p: &GpdParams) -> f64 {
    excesses.iter().map(|&x| gpd_logpdf(x, p)).sum()
}

/// Profile log-likelihood: optimal scale for a fixed shape, found by
/// bisection on the monotone scale score. Returns (scale, loglik).
fn profile_scale(excesses: &[f64], shape: f64) -> (f64, f64) {
    let n = excesses.len() as f64;
    let mean: f64 = excesses.iter().sum::<f64>() / n;
    let max = excesses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if shape.abs() < XI_ZERO_EPS {
        let p = GpdParams {
            scale: mean,
            shape: 0.0,
        };
        return (mean, gpd_loglik(excesses, &p));
    }
    // score in log-scale: s(σ) = -n + (1 + 1/ξ) Σ tᵢ/(1+tᵢ), tᵢ = ξxᵢ/σ;
    // strictly decreasing in σ on the feasible region for both signs of ξ
    let score = |sigma: f64| -> f64 {
        let mut s = 0.0;
        for &x in excesses {
            let t = shape * x / sigma;
            s += t / (1.0 + t);
        }
        -n + (1.0 + 1.0 / shape) * s
    };
    // feasibility boundary: σ must exceed -ξ·max(x) for ξ < 0
    let boundary = if shape < 0.0 { -shape * max } else { 0.0 };
    let mut lo = boundary + mean * 1e-6;
    let mut hi = boundary + (mean + max) * 4.0;
    // expand until the score brackets a sign change (score is decreasing)
    let mut f_lo = score(lo);
    for _ in 0..100 {
        if f_lo > 0.0 {
            break;
        }
        lo = boundary + (lo - boundary) * 0.25;
        f_lo = score(lo);
    }
    let mut f_hi = score(hi);
    for _ in 0..100 {
        if f_hi < 0.0 {
            break;
        }
        hi = boundary + (hi - boundary) * 4.0;
        f_hi = score(hi);
    }
    if !(f_lo > 0.0 && f_hi < 0.0) {
        // no interior stationary point (numerically degenerate shape); fall
        // back to a feasible moment-style scale
        let sigma = boundary + mean;
        let p = GpdParams {
            scale: sigma,
            shape,
        };
        return (sigma, gpd_loglik(excesses, &p));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = 0.5 * (lo + hi);
    let p = GpdParams {
        scale: sigma,
        shape,
    };
    (sigma, gpd_loglik(excesses, &p))
}

pub fn gpd_fit_ml_with_min(excesses: &[f64], min_n: usize) -> Result<GpdFit> {
    if excesses.len() < min_n {
        return Err(EmberError::InvalidInput(format!(
            "need at least {min_n} excesses, got {}",
            excesses.len()
        )));
    }
    if excesses.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(EmberError::InvalidInput(
            "excesses must be positive finite reals".into(),
        ));
    }
    let first = excesses[0];
    if excesses.iter().all(|&x| x == first) {
        return Err(EmberError::Degenerate(
            "all excesses are equal; the GPD likelihood has no interior maximum".into(),
        ));
    }

    // coarse shape grid, then golden-section refinement of the profile
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    let n_grid = 64;
    for k in 0..=n_grid {
        let xi = XI_MIN + (XI_MAX - XI_MIN) * (k as f64) / (n_grid as f64);
        let xi = if xi.abs() < XI_ZERO_EPS { 0.0 } else { xi };
        let (_, ll) = profile_scale(excesses, xi);
        if ll > best.1 {
            best = (xi, ll);
        }
    }
    let width = (XI_MAX - XI_MIN) / (n_grid as f64);
    let lo = (best.0 - width).max(XI_MIN);
    let hi = (best.0 + width).min(XI_MAX);
    let (xi_hat, _) = golden_max(|xi| profile_scale(excesses, xi).1, lo, hi, 60);
    let xi_hat = if xi_hat.abs() < XI_ZERO_EPS { 0.0 } else { xi_hat };
    let (sigma_hat, loglik) = profile_scale(excesses, xi_hat);
    if !loglik.is_finite() {
        return Err(EmberError::NonConvergence(
            "GPD profile likelihood is not finite at the optimum".into(),
        ));
    }

    // observed information via central differences of the log-likelihood
    // in (σ, ξ)
    let (se_sigma, se_xi) = observed_information_se(excesses, sigma_hat, xi_hat);

    Ok(GpdFit {
        params: GpdParams {
            scale: sigma_hat,
            shape: xi_hat,
        },
        scale_se: se_sigma,
        shape_se: se_xi,
        log_likelihood: loglik,
        n: excesses.len(),
    })
}

fn observed_information_se(excesses: &[f64], sigma: f64, xi: f64) -> (f64, f64) {
    let f = |s: f64, x: f64| -> f64 {
        if s <= 0.0 {
            return f64::NEG_INFINITY;
        }
        gpd_loglik(
            excesses,
            &GpdParams {
                scale: s,
                shape: x,
            },
        )
    };
    let hs = sigma * 1e-4;
    let hx = 1e-4;
    let f00 = f(sigma, xi);
    let dss = (f(sigma + hs, xi) - 2.0 * f00 + f(sigma - hs, xi)) / (hs * hs);
    let dxx = (f(sigma, xi + hx) - 2.0 * f00 + f(sigma, xi - hx)) / (hx * hx);
    let dsx = (f(sigma + hs, xi + hx) - f(sigma + hs, xi - hx) - f(sigma - hs, xi + hx)
        + f(sigma - hs, xi - hx))
        / (4.0 * hs * hx);
    // invert the 2x2 observed information
    let (a, b, d) = (-dss, -dsx, -dxx);
    let det = a * d - b * b;
    if det > 0.0 && a > 0.0 {
        ((d / det).sqrt(), (a / det).sqrt())
    } else {
        (f64::NAN, f64::NAN)
    }
}

// --- Threshold diagnostics ---------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ShapeEstimate {
    pub xi: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct MeanExcessEstimate {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Per-threshold diagnostic columns. Each diagnostic operation fills the
/// columns it owns; `merge` combines runs over the same threshold grid.
#[derive(Debug, Clone)]
pub struct ThresholdDiagnostics {
    pub thresholds: Vec<f64>,
    pub n_exceed: Vec<usize>,
    pub shape: Vec<Option<ShapeEstimate>>,
    pub mean_excess: Vec<Option<MeanExcessEstimate>>,
    pub p_values: Vec<Option<f64>>,
}

impl ThresholdDiagnostics {
    fn empty(thresholds: &[f64], n_exceed: Vec<usize>) -> Result<Self> {
        if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(EmberError::InvalidInput(
                "thresholds must be strictly increasing".into(),
            ));
        }
        let m = thresholds.len();
        Ok(ThresholdDiagnostics {
            thresholds: thresholds.to_vec(),
            n_exceed,
            shape: vec![None; m],
            mean_excess: vec![None; m],
            p_values: vec![None; m],
        })
    }

    /// Merge two diagnostic runs over the same grid, preferring filled
    /// columns from `other`.
    pub fn merge(mut self, other: ThresholdDiagnostics) -> Result<Self> {
        if self.thresholds != other.thresholds {
            return Err(EmberError::InvalidInput(
                "cannot merge diagnostics over different threshold grids".into(),
            ));
        }
        for k in 0..self.thresholds.len() {
            if other.shape[k].is_some() {
                self.shape[k] = other.shape[k];
            }
            if other.mean_excess[k].is_some() {
                self.mean_excess[k] = other.mean_excess[k];
            }
            if other.p_values[k].is_some() {
                self.p_values[k] = other.p_values[k];
            }
        }
        Ok(self)
    }
}

/// Equidistant threshold grid `start, start+step, …` with `m` values.
pub fn equidistant_thresholds(start: f64, m: usize, step: f64) -> Vec<f64> {
    (0..m).map(|k| start + step * k as f64).collect()
}

fn count_exceed(data: &[f64], v: f64) -> usize {
    data.iter().filter(|&&y| y > v).count()
}

/// Empirical mean-excess curve with symmetric 95% confidence intervals.
pub fn mean_excess_curve(data: &[f64], thresholds: &[f64]) -> Result<ThresholdDiagnostics> {
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n_exceed: Vec<usize> = thresholds.iter().map(|&v| count_exceed(data, v)).collect();
    let mut diag = ThresholdDiagnostics::empty(thresholds, n_exceed)?;
    for (k, &v) in thresholds.iter().enumerate() {
        if v >= max {
            return Err(EmberError::InvalidInput(format!(
                "threshold {v} is at or above the data maximum {max}"
            )));
        }
        let excesses: Vec<f64> = data.iter().filter(|&&y| y > v).map(|&y| y - v).collect();
        if excesses.len() < 5 {
            return Err(EmberError::InvalidInput(format!(
                "threshold {v} leaves only {} exceedances (need at least 5)",
                excesses.len()
            )));
        }
        let n = excesses.len() as f64;
        let mean = excesses.iter().sum::<f64>() / n;
        let var = excesses.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let half = 1.96 * (var / n).sqrt();
        diag.mean_excess[k] = Some(MeanExcessEstimate {
            mean,
            lo: mean - half,
            hi: mean + half,
        });
    }
    Ok(diag)
}

/// Shape-stability curve: ML shape with 95% CI per threshold. Fit failures
/// at single thresholds leave gaps rather than failing the curve.
pub fn threshold_stability(data: &[f64], thresholds: &[f64]) -> Result<ThresholdDiagnostics> {
    let n_exceed: Vec<usize> = thresholds.iter().map(|&v| count_exceed(data, v)).collect();
    let mut diag = ThresholdDiagnostics::empty(thresholds, n_exceed)?;
    let fits = exec::map_slice(thresholds, |&v| {
        let excesses: Vec<f64> = data.iter().filter(|&&y| y > v).map(|&y| y - v).collect();
        gpd_fit_ml(&excesses).ok()
    });
    for (k, fit) in fits.into_iter().enumerate() {
        if let Some(fit) = fit {
            let half = 1.96 * fit.shape_se;
            diag.shape[k] = Some(ShapeEstimate {
                xi: fit.params.shape,
                se: fit.shape_se,
                lo: fit.params.shape - half,
                hi: fit.params.shape + half,
            });
        }
    }
    Ok(diag)
}

// --- Multiple-threshold (piecewise truncated GPD) test -----------------------

/// Interval data for the piecewise model above v_k: per interval, the
/// excesses over the interval's left endpoint and the count of points lying
/// beyond its right endpoint.
struct IntervalData {
    /// excess of each observation in (v_j, v_{j+1}] over v_j
    excesses: Vec<Vec<f64>>,
    /// width of each interval except the last (which is unbounded)
    widths: Vec<f64>,
    /// number of observations beyond v_{j+1} per bounded interval
    beyond: Vec<usize>,
}

fn interval_data(data: &[f64], thresholds: &[f64], k: usize) -> IntervalData {
    let m = thresholds.len();
    let mut excesses = vec![Vec::new(); m - k];
    for &y in data {
        if y <= thresholds[k] {
            continue;
        }
        // find interval j: largest index with v_j < y
        let j = match thresholds[k..].binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
            Ok(pos) => pos.saturating_sub(1), // y == v_{k+pos}: belongs to (v_{pos-1}, v_pos]
            Err(pos) => pos - 1,              // v_{pos-1} < y < v_pos
        };
        excesses[j].push(y - thresholds[k + j]);
    }
    let widths: Vec<f64> = (k..m - 1).map(|j| thresholds[j + 1] - thresholds[j]).collect();
    let mut beyond = vec![0usize; m - 1 - k];
    let mut acc = 0usize;
    for j in (0..m - 1 - k).rev() {
        acc += excesses[j + 1].len();
        beyond[j] = acc;
    }
    IntervalData {
        excesses,
        widths,
        beyond,
    }
}

/// Log-likelihood of the piecewise truncated-GPD model: one scale at the
/// lowest threshold, one shape per interval, scales linked by threshold
/// stability σ_{j+1} = σ_j + ξ_j Δ_j.
fn piecewise_loglik(iv: &IntervalData, log_sigma0: f64, shapes: &[f64]) -> f64 {
    let mut sigma = log_sigma0.exp();
    let mut ll = 0.0;
    for (j, shape) in shapes.iter().enumerate() {
        if sigma <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let p = GpdParams {
            scale: sigma,
            shape: *shape,
        };
        for &x in &iv.excesses[j] {
            ll += gpd_logpdf(x, &p);
        }
        if j < iv.widths.len() {
            let sf = gpd_sf(iv.widths[j], &p);
            if sf <= 0.0 {
                if iv.beyond[j] > 0 {
                    return f64::NEG_INFINITY;
                }
            } else {
                ll += iv.beyond[j] as f64 * sf.ln();
            }
            sigma += shape * iv.widths[j];
        }
    }
    ll
}

/// Maximize the piecewise likelihood by cyclic coordinate descent with
/// golden-section line searches.
fn fit_piecewise(iv: &IntervalData, init_sigma: f64, init_shape: f64) -> f64 {
    let n_int = iv.excesses.len();
    let mut log_sigma = init_sigma.ln();
    let mut shapes = vec![init_shape; n_int];
    let mut best = piecewise_loglik(iv, log_sigma, &shapes);
    for _cycle in 0..40 {
        let before = best;
        let (ls, v) = golden_max(
            |s| piecewise_loglik(iv, s, &shapes),
            log_sigma - 2.0,
            log_sigma + 2.0,
            40,
        );
        if v > best {
            log_sigma = ls;
            best = v;
        }
        for j in 0..n_int {
            let (xj, v) = golden_max(
                |x| {
                    let mut s = shapes.clone();
                    s[j] = x;
                    piecewise_loglik(iv, log_sigma, &s)
                },
                XI_MIN,
                XI_MAX,
                40,
            );
            if v > best {
                shapes[j] = xj;
                best = v;
            }
        }
        if best - before < 1e-7 {
            break;
        }
    }
    best
}

/// Multiple-threshold test: for each starting threshold v_k, a likelihood
/// ratio of a single shape against interval-specific shapes over the
/// intervals (v_k, v_{k+1}], …, (v_m, ∞), with χ²(m−k) reference.
pub fn northrop_coleman_test(data: &[f64], thresholds: &[f64]) -> Result<ThresholdDiagnostics> {
    let m = thresholds.len();
    if m < 2 {
        return Err(EmberError::InvalidInput(
            "multiple-threshold test needs at least 2 thresholds".into(),
        ));
    }
    let n_exceed: Vec<usize> = thresholds.iter().map(|&v| count_exceed(data, v)).collect();
    let mut diag = ThresholdDiagnostics::empty(thresholds, n_exceed)?;

    // validate interval occupancy once over the full grid
    let full = interval_data(data, thresholds, 0);
    for (j, exc) in full.excesses.iter().enumerate() {
        if exc.len() < 5 {
            return Err(EmberError::InvalidInput(format!(
                "interval starting at threshold {} holds {} observations (need at least 5)",
                thresholds[j],
                exc.len()
            )));
        }
    }

    let pvals = exec::map_indexed(m, |k| -> Result<f64> {
        if k == m - 1 {
            // single unbounded interval: null and alternative coincide
            return Ok(1.0);
        }
        let excesses: Vec<f64> = data
            .iter()
            .filter(|&&y| y > thresholds[k])
            .map(|&y| y - thresholds[k])
            .collect();
        let null_fit = gpd_fit_ml_with_min(&excesses, 5)?;
        let iv = interval_data(data, thresholds, k);
        let alt_ll = fit_piecewise(&iv, null_fit.params.scale, null_fit.params.shape);
        let lr = (2.0 * (alt_ll - null_fit.log_likelihood)).max(0.0);
        let df = (m - 1 - k) as f64;
        let chi2 = ChiSquared::new(df).map_err(|e| {
            EmberError::InvalidInput(format!("chi-square with {df} degrees of freedom: {e}"))
        })?;
        Ok(1.0 - chi2.cdf(lr))
    });
    for (k, p) in pvals.into_iter().enumerate() {
        diag.p_values[k] = Some(p?);
    }
    Ok(diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn survival_reference_values() {
        let exp1 = GpdParams {
            scale: 1.0,
            shape: 0.0,
        };
        assert_eq!(gpd_sf(0.0, &exp1), 1.0);
        assert_relative_eq!(gpd_sf(1.0, &exp1), (-1f64).exp(), max_relative = 1e-12);
        let heavy = GpdParams {
            scale: 1.0,
            shape: 0.7,
        };
        // 1.7^(-1/0.7)
        assert_relative_eq!(
            gpd_sf(1.0, &heavy),
            0.4685837840252904,
            max_relative = 1e-12
        );
    }

    #[test]
    fn survival_is_continuous_in_shape_at_zero() {
        let sigma = 2.0;
        for k in 0..=100 {
            let x = 10.0 * sigma * k as f64 / 100.0;
            for shape in [-1e-6, 1e-6] {
                let p = GpdParams {
                    scale: sigma,
                    shape,
                };
                let diff = (gpd_sf(x, &p) - (-x / sigma).exp()).abs();
                assert!(diff < 1e-5, "x={x}, shape={shape}, diff={diff}");
            }
        }
    }

    #[test]
    fn logpdf_support_and_origin() {
        for shape in [-0.3, 0.0, 0.7] {
            let p = GpdParams { scale: 1.0, shape };
            assert_relative_eq!(gpd_logpdf(0.0, &p), 0.0, epsilon = 1e-12);
        }
        let bounded = GpdParams {
            scale: 1.0,
            shape: -0.5,
        };
        assert_eq!(gpd_logpdf(3.0, &bounded), f64::NEG_INFINITY);
    }

    #[test]
    fn logpdf_integrates_to_one() {
        // Simpson quadrature; heavy tails are integrated after the
        // substitution x = σ(eʸ − 1) so the integrand decays exponentially
        for shape in [-0.4, 0.0, 0.3, 0.9] {
            let p = GpdParams { scale: 1.3, shape };
            let n = 200_001usize;
            let integral = if shape < 0.0 {
                let hi = p.upper_bound();
                let h = hi / (n - 1) as f64;
                let mut s = 0.0;
                for i in 0..n {
                    let x = i as f64 * h;
                    let w = if i == 0 || i == n - 1 {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    s += w * gpd_logpdf(x, &p).exp();
                }
                s * h / 3.0
            } else {
                // y-range reaching survival 1e-9
                let x_hi = gpd_quantile_from_survival(1e-9, &p);
                let y_hi = (x_hi / p.scale + 1.0).ln();
                let h = y_hi / (n - 1) as f64;
                let mut s = 0.0;
                for i in 0..n {
                    let y = i as f64 * h;
                    let x = p.scale * (y.exp() - 1.0);
                    let w = if i == 0 || i == n - 1 {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    s += w * gpd_logpdf(x, &p).exp() * p.scale * y.exp();
                }
                s * h / 3.0 + 1e-9
            };
            assert_relative_eq!(integral, 1.0, max_relative = 1e-6);
        }
    }

    #[test]
    fn median_scale_relation() {
        assert_relative_eq!(scale_from_median(1.0, 1.0), 1.0, max_relative = 1e-12);
        assert_relative_eq!(
            scale_from_median(std::f64::consts::LN_2, 0.0),
            1.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            scale_from_median(10.0, 0.7),
            11.208881151409959,
            max_relative = 1e-10
        );
        // round-trip: the median of GPD(scale_from_median(m, ξ), ξ) is m
        for shape in [-0.4, -1e-9, 0.0, 0.3, 1.7] {
            let m = 7.3;
            let p = GpdParams {
                scale: scale_from_median(m, shape),
                shape,
            };
            assert_relative_eq!(gpd_sf(m, &p), 0.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn tail_cdf_composition() {
        let p = GpdParams {
            scale: 1.0,
            shape: 0.0,
        };
        let u = 79.0;
        assert_relative_eq!(
            tail_cdf(u + 1e-12, u, 0.05, &p).unwrap(),
            0.95,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            tail_cdf(u + 1.0, u, 0.05, &p).unwrap(),
            0.9816060279414279,
            max_relative = 1e-12
        );
        let heavy = GpdParams {
            scale: 1.0,
            shape: 0.7,
        };
        assert_relative_eq!(
            tail_cdf(u + 1e9, u, 0.05, &heavy).unwrap(),
            1.0,
            epsilon = 1e-6
        );
        assert!(tail_cdf(u, u, 0.05, &p).is_err());
        // non-decreasing in x, mapping into [1 - p_exc, 1)
        let mut prev = 0.0;
        for k in 1..100 {
            let x = u + k as f64;
            let v = tail_cdf(x, u, 0.3, &heavy).unwrap();
            assert!(v >= prev && (0.7..1.0).contains(&v));
            prev = v;
        }
    }

    fn sample_gpd(n: usize, p: &GpdParams, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let s: f64 = rng.random::<f64>();
                gpd_quantile_from_survival(s.max(1e-300), p)
            })
            .collect()
    }

    #[test]
    fn ml_fit_recovers_heavy_tail() {
        let truth = GpdParams {
            scale: 1.0,
            shape: 0.7,
        };
        let data = sample_gpd(5000, &truth, 42);
        let fit = gpd_fit_ml(&data).unwrap();
        assert!((fit.params.shape - 0.7).abs() < 3.0 * fit.shape_se);
        assert!(fit.shape_se > 0.0 && fit.shape_se < 0.1);
    }

    #[test]
    fn ml_fit_beats_oracle_grid() {
        let truth = GpdParams {
            scale: 2.0,
            shape: 0.2,
        };
        let data = sample_gpd(800, &truth, 7);
        let fit = gpd_fit_ml(&data).unwrap();
        // coarse oracle grid must never beat the fit
        for i in 0..40 {
            for j in 0..40 {
                let p = GpdParams {
                    scale: 0.2 + 4.0 * i as f64 / 39.0,
                    shape: XI_MIN + (XI_MAX - XI_MIN) * j as f64 / 39.0,
                };
                assert!(gpd_loglik(&data, &p) <= fit.log_likelihood + 1e-9);
            }
        }
    }

    #[test]
    fn ml_fit_rejects_degenerate_data() {
        let data = vec![2.0; 50];
        assert!(matches!(
            gpd_fit_ml(&data).unwrap_err(),
            EmberError::Degenerate(_)
        ));
        assert!(gpd_fit_ml(&[1.0; 5]).is_err());
    }

    #[test]
    fn mean_excess_hand_case() {
        let diag = mean_excess_curve(&[2.0, 4.0, 6.0, 7.0, 8.0, 9.0], &[3.0]).unwrap();
        let me = diag.mean_excess[0].unwrap();
        // excesses {1, 3, 4, 5, 6}, mean 3.8
        assert_relative_eq!(me.mean, 3.8, max_relative = 1e-12);
        assert!(me.lo < 3.8 && me.hi > 3.8);
        assert!(mean_excess_curve(&[1.0, 2.0], &[5.0]).is_err());
    }

    #[test]
    fn exponential_mean_excess_is_flat() {
        let p = GpdParams {
            scale: 1.0,
            shape: 0.0,
        };
        let data = sample_gpd(100_000, &p, 11);
        let diag = mean_excess_curve(&data, &[0.5, 1.0, 1.5, 2.0]).unwrap();
        for me in diag.mean_excess.iter().flatten() {
            assert!(me.lo < 1.0 && 1.0 < me.hi, "CI {:?} should cover 1", me);
        }
    }

    #[test]
    fn stability_curve_flat_on_pure_gpd() {
        let truth = GpdParams {
            scale: 1.0,
            shape: 0.7,
        };
        let data = sample_gpd(20_000, &truth, 3);
        let grid = equidistant_thresholds(0.0, 8, 1.0);
        let diag = threshold_stability(&data, &grid).unwrap();
        let covered = diag
            .shape
            .iter()
            .flatten()
            .filter(|s| s.lo <= 0.7 && 0.7 <= s.hi)
            .count();
        assert!(covered >= 7, "covered {covered}/8");
    }

    #[test]
    fn multiple_threshold_test_on_single_gpd() {
        let truth = GpdParams {
            scale: 1.0,
            shape: 0.4,
        };
        let data = sample_gpd(20_000, &truth, 5);
        let grid = equidistant_thresholds(0.0, 5, 0.8);
        let diag = northrop_coleman_test(&data, &grid).unwrap();
        assert_eq!(diag.p_values[4], Some(1.0));
        for p in diag.p_values.iter().flatten() {
            assert!((0.0..=1.0).contains(p));
        }
        // on one draw from the null we expect no extreme rejection
        assert!(diag.p_values[0].unwrap() > 1e-4);
    }

    #[test]
    fn merge_combines_columns() {
        let data = sample_gpd(
            5000,
            &GpdParams {
                scale: 1.0,
                shape: 0.2,
            },
            9,
        );
        let grid = equidistant_thresholds(0.0, 4, 0.5);
        let me = mean_excess_curve(&data, &grid).unwrap();
        let st = threshold_stability(&data, &grid).unwrap();
        let merged = me.merge(st).unwrap();
        assert!(merged.mean_excess[0].is_some());
        assert!(merged.shape[0].is_some());
    }
}
