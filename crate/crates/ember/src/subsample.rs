//! Stratified, FWI-weighted subsampling of zero-count pixel-days with
//! Horvitz–Thompson likelihood weights.
//!
//! Positive-count rows are always kept with weight one. Zero rows are
//! subsampled per (pixel, year) stratum: a month is chosen uniformly among
//! the season months present, then a row is drawn within the month with
//! selection mass favouring the high-FWI class. Inclusion probabilities are
//! computed exactly by enumerating the two-stage scheme over
//! month × FWI-class cells, and weights are their reciprocals.

use rand::Rng;

use crate::error::{EmberError, Result};
use crate::grid_data::PixelDayTable;
use crate::rng::{derive_seed, rng_from_seed};
use crate::special::ln_gamma;

/// Tuning of the stratified scheme. Defaults follow the tuned values
/// (p_FWI, p_SS) = (0.7, 0.9) with two draws per pixel-year stratum.
#[derive(Debug, Clone, Copy)]
pub struct SubsampleConfig {
    /// Quantile level splitting each stratum's FWI values into low/high.
    pub p_fwi: f64,
    /// Selection mass of the over-represented class.
    pub p_ss: f64,
    /// Number of zero rows drawn per stratum.
    pub k_per_stratum: usize,
    /// Give the literal below-quantile class the mass `p_ss` instead of the
    /// high-FWI class.
    pub invert_fwi_classes: bool,
    pub seed: u64,
}

impl Default for SubsampleConfig {
    fn default() -> Self {
        SubsampleConfig {
            p_fwi: 0.7,
            p_ss: 0.9,
            k_per_stratum: 2,
            invert_fwi_classes: false,
            seed: 0,
        }
    }
}

/// One selected row with its exact inclusion probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleRow {
    /// Index into the source table.
    pub row: usize,
    pub inclusion_probability: f64,
    pub weight: f64,
}

/// Subsample with Horvitz–Thompson weights; positive-count rows appear with
/// probability and weight one.
#[derive(Debug, Clone)]
pub struct WeightedSubsample {
    rows: Vec<SubsampleRow>,
}

impl WeightedSubsample {
    /// Every row with probability and weight one (no subsampling).
    pub fn full(table: &PixelDayTable) -> Self {
        WeightedSubsample {
            rows: (0..table.len())
                .map(|row| SubsampleRow {
                    row,
                    inclusion_probability: 1.0,
                    weight: 1.0,
                })
                .collect(),
        }
    }

    pub fn rows(&self) -> &[SubsampleRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// A month × FWI-class cell within one stratum.
struct Cell {
    month: u8,
    mass: f64,
    rows: Vec<usize>,
}

/// Recursively accumulate the expected number of selections per cell.
fn enumerate_expected(
    cells: &[Cell],
    counts: &mut Vec<usize>,
    draws_left: usize,
    prob: f64,
    expected: &mut [f64],
) {
    if draws_left == 0 || prob == 0.0 {
        return;
    }
    let mut months: Vec<u8> = cells
        .iter()
        .zip(counts.iter())
        .filter(|(_, &c)| c > 0)
        .map(|(cell, _)| cell.month)
        .collect();
    months.sort_unstable();
    months.dedup();
    if months.is_empty() {
        return;
    }
    let p_month = prob / months.len() as f64;
    for &m in &months {
        let total_mass: f64 = cells
            .iter()
            .zip(counts.iter())
            .filter(|(cell, &c)| cell.month == m && c > 0)
            .map(|(cell, &c)| cell.mass * c as f64)
            .sum();
        for idx in 0..cells.len() {
            if cells[idx].month != m || counts[idx] == 0 {
                continue;
            }
            let p_cell = p_month * cells[idx].mass * counts[idx] as f64 / total_mass;
            expected[idx] += p_cell;
            counts[idx] -= 1;
            enumerate_expected(cells, counts, draws_left - 1, p_cell, expected);
            counts[idx] += 1;
        }
    }
}

/// Draw `k` rows without replacement following the two-stage scheme.
fn draw_rows<R: Rng>(cells: &mut [Cell], k: usize, rng: &mut R) -> Vec<usize> {
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let mut months: Vec<u8> = cells
            .iter()
            .filter(|c| !c.rows.is_empty())
            .map(|c| c.month)
            .collect();
        months.sort_unstable();
        months.dedup();
        if months.is_empty() {
            break;
        }
        let m = months[rng.random_range(0..months.len())];
        let total_mass: f64 = cells
            .iter()
            .filter(|c| c.month == m)
            .map(|c| c.mass * c.rows.len() as f64)
            .sum();
        let mut ticket = rng.random::<f64>() * total_mass;
        let mut chosen = None;
        for (idx, cell) in cells.iter().enumerate() {
            if cell.month != m || cell.rows.is_empty() {
                continue;
            }
            let w = cell.mass * cell.rows.len() as f64;
            if ticket < w || idx == cells.len() - 1 {
                chosen = Some(idx);
                break;
            }
            ticket -= w;
        }
        let idx = chosen.expect("some cell has rows in the chosen month");
        let within = rng.random_range(0..cells[idx].rows.len());
        picked.push(cells[idx].rows.swap_remove(within));
    }
    picked
}

/// Stratified FWI-weighted subsample of the zero-count rows.
pub fn stratified_subsample(
    table: &PixelDayTable,
    cfg: &SubsampleConfig,
) -> Result<WeightedSubsample> {
    if table.is_empty() {
        return Err(EmberError::InvalidInput(
            "cannot subsample an empty pixel-day table".into(),
        ));
    }
    if !(cfg.p_fwi > 0.0 && cfg.p_fwi < 1.0) || !(cfg.p_ss > 0.0 && cfg.p_ss < 1.0) {
        return Err(EmberError::InvalidInput(
            "p_fwi and p_ss must lie strictly inside (0, 1)".into(),
        ));
    }
    if cfg.k_per_stratum == 0 {
        return Err(EmberError::InvalidInput(
            "k_per_stratum must be at least 1".into(),
        ));
    }

    let mut selected = Vec::new();
    // strata keyed by (cell, year); BTreeMap gives a deterministic order
    let mut strata: std::collections::BTreeMap<(u64, i32), Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, row) in table.rows().iter().enumerate() {
        if row.count > 0 {
            selected.push(SubsampleRow {
                row: i,
                inclusion_probability: 1.0,
                weight: 1.0,
            });
        } else {
            strata.entry((row.cell_id, row.year)).or_default().push(i);
        }
    }

    for (stratum_idx, ((cell_id, year), rows)) in strata.into_iter().enumerate() {
        let n = rows.len();
        let mut rng = rng_from_seed(derive_seed(cfg.seed, stratum_idx as u64));
        if n <= cfg.k_per_stratum {
            // every zero row is kept with certainty
            for &r in &rows {
                selected.push(SubsampleRow {
                    row: r,
                    inclusion_probability: 1.0,
                    weight: 1.0,
                });
            }
            continue;
        }

        let fwi: Vec<f64> = rows.iter().map(|&r| table.rows()[r].fwi).collect();
        let degenerate = fwi.iter().all(|&v| v == fwi[0]);
        if degenerate {
            // uniform without-replacement fallback: p = k/n exactly
            let mut pool = rows.clone();
            let p = cfg.k_per_stratum as f64 / n as f64;
            for _ in 0..cfg.k_per_stratum {
                let j = rng.random_range(0..pool.len());
                let r = pool.swap_remove(j);
                selected.push(SubsampleRow {
                    row: r,
                    inclusion_probability: p,
                    weight: 1.0 / p,
                });
            }
            continue;
        }

        // stratum FWI quantile at level p_fwi (order statistic at ⌈p·n⌉)
        let mut sorted = fwi.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q_idx = ((cfg.p_fwi * n as f64).ceil() as usize).clamp(1, n) - 1;
        let q = sorted[q_idx];
        let (mass_high, mass_low) = if cfg.invert_fwi_classes {
            (1.0 - cfg.p_ss, cfg.p_ss)
        } else {
            (cfg.p_ss, 1.0 - cfg.p_ss)
        };

        // month × class cells
        let mut cells: Vec<Cell> = Vec::new();
        for (&r, &v) in rows.iter().zip(&fwi) {
            let month = table.rows()[r].month;
            let mass = if v > q { mass_high } else { mass_low };
            match cells
                .iter_mut()
                .find(|c| c.month == month && c.mass == mass)
            {
                Some(c) => c.rows.push(r),
                None => cells.push(Cell {
                    month,
                    mass,
                    rows: vec![r],
                }),
            }
        }
        cells.sort_by(|a, b| (a.month, a.mass).partial_cmp(&(b.month, b.mass)).unwrap());

        if (cells.len() as f64).powi(cfg.k_per_stratum as i32) > 1e7 {
            return Err(EmberError::InvalidInput(format!(
                "k_per_stratum={} too large for exact inclusion enumeration over {} cells",
                cfg.k_per_stratum,
                cells.len()
            )));
        }

        // exact inclusion probabilities per cell
        let mut counts: Vec<usize> = cells.iter().map(|c| c.rows.len()).collect();
        let mut expected = vec![0.0; cells.len()];
        enumerate_expected(&cells, &mut counts, cfg.k_per_stratum, 1.0, &mut expected);
        let incl: Vec<f64> = cells
            .iter()
            .zip(&expected)
            .map(|(c, &e)| e / c.rows.len() as f64)
            .collect();

        // map row → inclusion probability before cells are consumed
        let mut row_prob: HashMapLike = Vec::new();
        for (cell, &p) in cells.iter().zip(&incl) {
            if !(p > 0.0 && p <= 1.0 + 1e-12) {
                return Err(EmberError::InvalidInput(format!(
                    "inclusion probability {p} out of range in stratum (cell_id={cell_id}, year={year})"
                )));
            }
            for &r in &cell.rows {
                row_prob.push((r, p.min(1.0)));
            }
        }

        let picked = draw_rows(&mut cells, cfg.k_per_stratum, &mut rng);
        for r in picked {
            let p = row_prob
                .iter()
                .find(|&&(rr, _)| rr == r)
                .expect("picked row belongs to the stratum")
                .1;
            selected.push(SubsampleRow {
                row: r,
                inclusion_probability: p,
                weight: 1.0 / p,
            });
        }
    }

    selected.sort_by_key(|s| s.row);
    Ok(WeightedSubsample { rows: selected })
}

type HashMapLike = Vec<(usize, f64)>;

/// Horvitz–Thompson weighted Poisson negative log-likelihood
/// `Σ ω (λ − N log λ + log N!)`.
pub fn weighted_poisson_negloglik(
    counts: &[u32],
    weights: &[f64],
    log_means: &[f64],
) -> Result<f64> {
    if counts.len() != weights.len() || counts.len() != log_means.len() {
        return Err(EmberError::InvalidInput(format!(
            "length mismatch: {} counts, {} weights, {} log-means",
            counts.len(),
            weights.len(),
            log_means.len()
        )));
    }
    let mut total = 0.0;
    for ((&n, &w), &log_lambda) in counts.iter().zip(weights).zip(log_means) {
        if !(w > 0.0) {
            return Err(EmberError::InvalidInput(format!(
                "weights must be positive, got {w}"
            )));
        }
        let lambda = log_lambda.exp();
        let term = w * (lambda - n as f64 * log_lambda + ln_gamma(n as f64 + 1.0));
        if !term.is_finite() {
            return Err(EmberError::InvalidInput(format!(
                "non-finite likelihood term at log-mean {log_lambda}"
            )));
        }
        total += term;
    }
    Ok(total)
}
