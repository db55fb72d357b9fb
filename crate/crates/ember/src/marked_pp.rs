//! Discretized log-Gaussian Cox process semantics: cell-level Poisson
//! counts, thinning into moderate and extreme sub-processes, and forward
//! simulation of the full marked process.

use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution};

use crate::error::{EmberError, Result};
use crate::exec;
use crate::extremes::{gpd_quantile_from_survival, scale_from_median, GpdParams};
use crate::grid_data::{attach_marks, FireEvent, MarkedDataset, PixelDayTable};
use crate::rng::{derive_seed, rng_from_seed};
use crate::special::{inv_logit, log1p_exp};

/// Storage convention for cell-level log intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntensityConvention {
    /// Linear predictors per unit volume; `log |A|` is added at
    /// likelihood/simulation time (crate default).
    #[default]
    PerUnitVolume,
    /// Linear predictors already include `log |A|`.
    IncludesVolume,
}

/// Per-pixel-day occurrence log-intensity.
#[derive(Debug, Clone)]
pub struct IntensityField {
    pub log_intensity: Vec<f64>,
    pub convention: IntensityConvention,
}

/// Per-pixel-day exceedance logit.
#[derive(Debug, Clone)]
pub struct ThinningField {
    pub exceed_logit: Vec<f64>,
}

impl ThinningField {
    pub fn probability(&self, idx: usize) -> f64 {
        inv_logit(self.exceed_logit[idx])
    }
}

/// Per-pixel-day size-mixture parameters.
#[derive(Debug, Clone)]
pub struct SizeFields {
    /// Logit of the Beta mean for moderate marks.
    pub beta_mean_logit: Vec<f64>,
    /// Beta precision φ = a + b.
    pub beta_precision: f64,
    /// Log median of the GPD excess distribution.
    pub gpd_log_median: Vec<f64>,
    /// GPD shape (stationary).
    pub gpd_shape: f64,
}

/// Expected count in a cell: `|C| · exp(μ)` under the per-unit convention,
/// `exp(μ)` when the predictor already includes the volume.
pub fn expected_count_with(
    mu: f64,
    volume: f64,
    convention: IntensityConvention,
) -> Result<f64> {
    if !mu.is_finite() || !(volume > 0.0) {
        return Err(EmberError::InvalidInput(format!(
            "expected_count needs finite μ and positive volume, got μ={mu}, volume={volume}"
        )));
    }
    let v = match convention {
        IntensityConvention::PerUnitVolume => volume * mu.exp(),
        IntensityConvention::IncludesVolume => mu.exp(),
    };
    if !v.is_finite() {
        return Err(EmberError::InvalidInput(format!(
            "expected count overflows at μ={mu}"
        )));
    }
    Ok(v)
}

/// Expected count under the per-unit-volume convention.
pub fn expected_count(mu: f64, volume: f64) -> Result<f64> {
    expected_count_with(mu, volume, IntensityConvention::PerUnitVolume)
}

/// Thinning probability of the type-2 sub-process: λ₂ / (λ₁ + λ₂).
pub fn thinning_probability(lambda1: f64, lambda2: f64) -> f64 {
    debug_assert!(lambda1 > 0.0 && lambda2 > 0.0);
    lambda2 / (lambda1 + lambda2)
}

/// Log intensity of the extreme sub-process,
/// `μ_BIN + μ_COX − log(1 + exp(μ_BIN))`, in overflow-safe form.
pub fn extreme_log_intensity(mu_cox: f64, mu_bin: f64) -> f64 {
    mu_bin + mu_cox - log1p_exp(mu_bin)
}

/// The `μ_BIN + μ_COX` approximation (valid when exp(μ_BIN) ≈ 0).
pub fn extreme_log_intensity_approx(mu_cox: f64, mu_bin: f64) -> f64 {
    mu_bin + mu_cox
}

/// Poisson sampler: inversion by sequential search below mean 10, PTRS
/// rejection above. Deterministic given the RNG stream.
pub(crate) fn sample_poisson<R: Rng>(mean: f64, rng: &mut R) -> u32 {
    debug_assert!(mean >= 0.0 && mean.is_finite());
    if mean == 0.0 {
        return 0;
    }
    if mean < 10.0 {
        // inversion: walk the CDF
        let l = (-mean).exp();
        let mut k = 0u32;
        let mut p = 1.0;
        loop {
            p *= rng.random::<f64>();
            if p <= l || k > 1_000 {
                return k;
            }
            k += 1;
        }
    } else {
        // PTRS transformed-rejection (Hörmann 1993)
        let b = 0.931 + 2.53 * mean.sqrt();
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = rng.random::<f64>() - 0.5;
            let v = rng.random::<f64>();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
            if us >= 0.07 && v <= v_r {
                return k as u32;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
            let rhs = -mean + k * mean.ln() - crate::special::ln_gamma(k + 1.0);
            if lhs <= rhs {
                return k as u32;
            }
        }
    }
}

/// Draw one mark from the mixture at pixel-day parameters.
fn sample_mark<R: Rng>(
    p_exceed: f64,
    beta_mean: f64,
    beta_precision: f64,
    gpd_median: f64,
    gpd_shape: f64,
    threshold: f64,
    rng: &mut R,
) -> Result<(f64, bool)> {
    let exceeds = rng.random::<f64>() < p_exceed;
    if exceeds {
        let scale = scale_from_median(gpd_median, gpd_shape);
        let params = GpdParams::new(scale, gpd_shape).map_err(|e| {
            EmberError::InvalidInput(format!("invalid GPD size parameters: {e}"))
        })?;
        let s = rng.random::<f64>().max(1e-300);
        let excess = gpd_quantile_from_survival(s, &params);
        Ok((threshold + excess.max(f64::MIN_POSITIVE), true))
    } else {
        let (a, b) = (beta_mean * beta_precision, (1.0 - beta_mean) * beta_precision);
        let dist = BetaDist::new(a, b).map_err(|e| {
            EmberError::InvalidInput(format!(
                "invalid Beta size parameters a={a}, b={b}: {e}"
            ))
        })?;
        let z: f64 = dist.sample(rng);
        let z = z.clamp(1e-12, 1.0 - 1e-12);
        Ok((1.0 + z * (threshold - 1.0), false))
    }
}

/// Forward-simulate the marked process over a pixel-day table.
///
/// Counts are Poisson at the cell intensity, exceedance indicators are
/// Bernoulli at the thinning probability, extreme marks are threshold plus a
/// GPD excess and moderate marks map a Beta draw onto (1, u]. Each pixel-day
/// has its own derived seed stream, so simulation parallelizes with
/// deterministic output; the counts recorded in the returned table equal the
/// number of attached events by construction.
pub fn simulate_marked_process(
    table: &PixelDayTable,
    intensity: &IntensityField,
    thinning: &ThinningField,
    sizes: &SizeFields,
    threshold: f64,
    seed: u64,
) -> Result<MarkedDataset> {
    let n = table.len();
    if intensity.log_intensity.len() != n
        || thinning.exceed_logit.len() != n
        || sizes.beta_mean_logit.len() != n
        || sizes.gpd_log_median.len() != n
    {
        return Err(EmberError::InvalidInput(
            "field lengths do not match the pixel-day table".into(),
        ));
    }
    if !(threshold > 1.0) {
        return Err(EmberError::InvalidInput(format!(
            "threshold must exceed 1 ha, got {threshold}"
        )));
    }
    if !(sizes.beta_precision > 0.0) {
        return Err(EmberError::InvalidInput(format!(
            "Beta precision must be positive, got {}",
            sizes.beta_precision
        )));
    }

    struct RowSim {
        count: u32,
        marks: Vec<(f64, bool)>,
    }

    let sims: Vec<Result<RowSim>> = exec::map_indexed(n, |i| {
        let pd = &table.rows()[i];
        let mean = expected_count_with(
            intensity.log_intensity[i],
            pd.volume,
            intensity.convention,
        )?;
        let mut rng = rng_from_seed(derive_seed(seed, i as u64));
        let count = sample_poisson(mean, &mut rng);
        let mut marks = Vec::with_capacity(count as usize);
        for _ in 0..count {
            marks.push(sample_mark(
                thinning.probability(i),
                inv_logit(sizes.beta_mean_logit[i]),
                sizes.beta_precision,
                sizes.gpd_log_median[i].exp(),
                sizes.gpd_shape,
                threshold,
                &mut rng,
            )?);
        }
        Ok(RowSim { count, marks })
    });

    let mut rows = table.rows().to_vec();
    let mut events = Vec::new();
    let mut fire_id = 1u64;
    for (i, sim) in sims.into_iter().enumerate() {
        let sim = sim?;
        rows[i].count = sim.count;
        for (mark, _) in sim.marks {
            events.push(FireEvent {
                fire_id,
                cell_id: rows[i].cell_id,
                day_index: rows[i].day_index,
                burnt_area_ha: mark,
            });
            fire_id += 1;
        }
    }
    let table = PixelDayTable::new(rows, table.season())?;
    attach_marks(table, events, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_data::{PixelDay, Season};
    use approx::assert_relative_eq;

    fn table(n: usize) -> PixelDayTable {
        let rows: Vec<PixelDay> = (0..n)
            .map(|i| PixelDay {
                cell_id: (i % 100) as u64,
                day_index: (i / 100) as u32,
                year: 2000,
                month: 7,
                x_km: (i % 100) as f64,
                y_km: (i / 100) as f64,
                fwi: 10.0,
                fa: 50.0,
                count: 0,
                volume: 64.0,
            })
            .collect();
        PixelDayTable::new(rows, Season::default()).unwrap()
    }

    #[test]
    fn expected_count_reference_values() {
        assert_eq!(expected_count(0.0, 64.0).unwrap(), 64.0);
        assert_relative_eq!(
            expected_count((1.0f64 / 64.0).ln(), 64.0).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            expected_count(-11.0, 64.0).unwrap(),
            1.0689088505757222e-3,
            max_relative = 1e-12
        );
        assert!(expected_count(f64::INFINITY, 64.0).is_err());
        assert!(expected_count(800.0, 64.0).is_err());
        assert_relative_eq!(
            expected_count_with(2.0, 64.0, IntensityConvention::IncludesVolume).unwrap(),
            2f64.exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn thinning_probability_basics() {
        assert_relative_eq!(thinning_probability(3.0, 1.0), 0.25);
        assert_relative_eq!(thinning_probability(2.0, 2.0), 0.5);
        assert!(thinning_probability(1.0, 1e-300) < 1e-299);
    }

    #[test]
    fn extreme_intensity_exact_vs_approx() {
        // μ_BIN = 0, μ_COX = log 2 → λ_exc = 1
        assert_relative_eq!(extreme_log_intensity(2f64.ln(), 0.0), 0.0, epsilon = 1e-15);
        let diff = extreme_log_intensity(1.0, -5.0) - extreme_log_intensity_approx(1.0, -5.0);
        assert_relative_eq!(diff, -0.006715348489118068, max_relative = 1e-12);
        // limit: exact → approx as μ_BIN → −∞
        let d = extreme_log_intensity(1.0, -500.0) - extreme_log_intensity_approx(1.0, -500.0);
        assert_eq!(d, 0.0);
        // superposition: moderate + extreme = total intensity
        for (mu_cox, mu_bin) in [(0.3f64, -2.0f64), (-4.0, 1.5), (2.0, 0.0)] {
            let lambda = mu_cox.exp();
            let l_exc = extreme_log_intensity(mu_cox, mu_bin).exp();
            let l_mod = lambda - l_exc;
            let p = inv_logit(mu_bin);
            assert_relative_eq!(l_exc, p * lambda, max_relative = 1e-12);
            assert_relative_eq!(l_mod + l_exc, lambda, max_relative = 1e-12);
        }
    }

    #[test]
    fn poisson_sampler_matches_mean_small_and_large() {
        let mut rng = crate::rng::rng_from_seed(0);
        for mean in [0.5, 3.0, 25.0] {
            let n = 200_000;
            let s: u64 = (0..n).map(|_| sample_poisson(mean, &mut rng) as u64).sum();
            let emp = s as f64 / n as f64;
            let se = (mean / n as f64).sqrt();
            assert!(
                (emp - mean).abs() < 4.0 * se,
                "mean {mean}: empirical {emp}"
            );
        }
    }

    fn fields(table: &PixelDayTable, mu: f64, logit_p: f64) -> (IntensityField, ThinningField, SizeFields) {
        let n = table.len();
        (
            IntensityField {
                log_intensity: vec![mu; n],
                convention: IntensityConvention::PerUnitVolume,
            },
            ThinningField {
                exceed_logit: vec![logit_p; n],
            },
            SizeFields {
                beta_mean_logit: vec![0.0; n],
                beta_precision: 2.0,
                gpd_log_median: vec![(30.0f64).ln(); n],
                gpd_shape: 0.7,
            },
        )
    }

    #[test]
    fn zero_exceedance_probability_keeps_all_marks_moderate() {
        let table = table(500);
        let (intensity, _, sizes) = fields(&table, (0.05f64).ln(), 0.0);
        let thinning = ThinningField {
            exceed_logit: vec![-1e3; table.len()],
        };
        let ds =
            simulate_marked_process(&table, &intensity, &thinning, &sizes, 79.0, 4).unwrap();
        assert!(!ds.events().is_empty());
        for e in ds.events() {
            assert!(e.event.burnt_area_ha > 1.0 && e.event.burnt_area_ha <= 79.0);
            assert!(!e.exceeds);
        }
    }

    #[test]
    fn simulated_counts_match_intensity() {
        let table = table(10_000);
        // λ·|A| = 2 per pixel-day
        let mu = (2.0f64 / 64.0).ln();
        let (intensity, thinning, sizes) = fields(&table, mu, -2.0);
        let ds = simulate_marked_process(&table, &intensity, &thinning, &sizes, 79.0, 9).unwrap();
        let total: u64 = ds.table().rows().iter().map(|r| r.count as u64).sum();
        let n = table.len() as f64;
        let emp = total as f64 / n;
        let se = (2.0 / n).sqrt();
        assert!((emp - 2.0).abs() < 3.0 * se, "empirical mean count {emp}");
        // marks classified consistently
        for e in ds.events() {
            assert_eq!(e.exceeds, e.event.burnt_area_ha > 79.0);
            assert!(e.event.burnt_area_ha > 1.0);
        }
        // determinism
        let ds2 = simulate_marked_process(&table, &intensity, &thinning, &sizes, 79.0, 9).unwrap();
        assert_eq!(ds.events().len(), ds2.events().len());
        for (a, b) in ds.events().iter().zip(ds2.events()) {
            assert_eq!(a.event, b.event);
        }
    }

    #[test]
    fn thinned_extreme_counts_are_poisson() {
        // chi-square goodness of fit of extreme counts against
        // Poisson(p·λ·|A|) over many replicate cells
        let table = table(8_000);
        let mu = (3.0f64 / 64.0).ln();
        let p = 0.3;
        let (intensity, _, sizes) = fields(&table, mu, 0.0);
        let thinning = ThinningField {
            exceed_logit: vec![crate::special::logit(p); table.len()],
        };
        let ds = simulate_marked_process(&table, &intensity, &thinning, &sizes, 79.0, 13).unwrap();
        let mut observed = [0usize; 6]; // counts 0..4 and ≥5
        for row in 0..table.len() {
            let k = ds
                .events_for_row(row)
                .iter()
                .filter(|e| e.exceeds)
                .count()
                .min(5);
            observed[k] += 1;
        }
        let lambda = p * 3.0;
        let n = table.len() as f64;
        let mut chi2 = 0.0;
        let mut acc = 0.0;
        for k in 0..5usize {
            let prob = (-lambda + (k as f64) * lambda.ln()
                - crate::special::ln_gamma(k as f64 + 1.0))
                .exp();
            acc += prob;
            let expect = prob * n;
            chi2 += (observed[k] as f64 - expect).powi(2) / expect;
        }
        let expect_tail = (1.0 - acc) * n;
        chi2 += (observed[5] as f64 - expect_tail).powi(2) / expect_tail;
        // df = 5, 5% critical value 11.07
        assert!(chi2 < 11.07, "chi2 {chi2}, observed {observed:?}");
    }

    #[test]
    fn heavy_tail_sample_mean_grows_with_sample_size() {
        // ξ ≥ 1: the mean diverges, so running means grow with n
        let table = table(20_000);
        let (intensity, _, mut sizes) = fields(&table, (0.4f64 / 64.0).ln(), 0.0);
        sizes.gpd_shape = 1.2;
        let thinning = ThinningField {
            exceed_logit: vec![30.0; table.len()], // all extreme
        };
        let ds = simulate_marked_process(&table, &intensity, &thinning, &sizes, 79.0, 31).unwrap();
        let marks: Vec<f64> = ds.events().iter().map(|e| e.event.burnt_area_ha).collect();
        assert!(marks.len() > 2000);
        let m_small: f64 = marks[..500].iter().sum::<f64>() / 500.0;
        let m_all: f64 = marks.iter().sum::<f64>() / marks.len() as f64;
        assert!(m_all > m_small * 0.8, "heavy tail should keep the mean growing");
        // ξ < 1: sample mean close to u + σ/(1−ξ)
        let mut sizes2 = sizes.clone();
        sizes2.gpd_shape = 0.4;
        let ds2 =
            simulate_marked_process(&table, &intensity, &thinning, &sizes2, 79.0, 37).unwrap();
        let marks2: Vec<f64> = ds2.events().iter().map(|e| e.event.burnt_area_ha).collect();
        let sigma = scale_from_median(30.0, 0.4);
        let want = 79.0 + sigma / (1.0 - 0.4);
        let emp: f64 = marks2.iter().sum::<f64>() / marks2.len() as f64;
        assert!(
            (emp - want).abs() / want < 0.25,
            "mean {emp} vs theoretical {want}"
        );
    }
}
