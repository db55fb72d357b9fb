//! Proper scoring rules and permutation tests on score differences.

use crate::error::{EmberError, Result};
use crate::exec;
use crate::rng::{derive_seed, rng_from_seed};
use rand::Rng;

/// Scaled CRPS of a predictive sample against an observation:
/// `−Ê|X−y|/Ê|X−X′| − ½ log Ê|X−X′|`, with the pair mean taken over
/// distinct indices. Higher is better in this orientation; reporting layers
/// negate it so that lower is better.
pub fn scrps(samples: &[f64], y: f64) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(EmberError::InvalidInput(format!(
            "sCRPS needs at least 2 samples, got {n}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Σ_{i<j}(x_(j) − x_(i)) via prefix sums
    let mut prefix = 0.0;
    let mut pair_sum = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        pair_sum += i as f64 * v - prefix;
        prefix += v;
    }
    let nf = n as f64;
    let mean_pair = 2.0 * pair_sum / (nf * (nf - 1.0));
    if !(mean_pair > 0.0) {
        return Err(EmberError::Degenerate(
            "predictive sample has zero dispersion".into(),
        ));
    }
    let mean_abs_err: f64 = samples.iter().map(|&x| (x - y).abs()).sum::<f64>() / nf;
    Ok(-mean_abs_err / mean_pair - 0.5 * mean_pair.ln())
}

/// Brier score: mean squared distance of probabilities to binary outcomes.
pub fn brier(probs: &[f64], outcomes: &[bool]) -> Result<f64> {
    if probs.len() != outcomes.len() {
        return Err(EmberError::InvalidInput(format!(
            "{} probabilities vs {} outcomes",
            probs.len(),
            outcomes.len()
        )));
    }
    if probs.is_empty() {
        return Err(EmberError::InvalidInput("empty inputs".into()));
    }
    let mut s = 0.0;
    for (&p, &o) in probs.iter().zip(outcomes) {
        if !(0.0..=1.0).contains(&p) {
            return Err(EmberError::InvalidInput(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let t = if o { 1.0 } else { 0.0 };
        s += (p - t) * (p - t);
    }
    Ok(s / probs.len() as f64)
}

/// Area under the ROC curve by the rank (Mann–Whitney) estimator with ties
/// counted one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EmberError::InvalidInput(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EmberError::Degenerate(
            "AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over ties
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Pointwise log-likelihood matrix (posterior draws × observations).
#[derive(Debug, Clone)]
pub struct PointwiseLogLik {
    pub n_samples: usize,
    pub n_obs: usize,
    values: Vec<f64>,
}

impl PointwiseLogLik {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_samples = rows.len();
        let n_obs = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(n_samples * n_obs);
        for r in &rows {
            if r.len() != n_obs {
                return Err(EmberError::InvalidInput(
                    "ragged pointwise log-likelihood rows".into(),
                ));
            }
            values.extend_from_slice(r);
        }
        Ok(PointwiseLogLik {
            n_samples,
            n_obs,
            values,
        })
    }

    fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_samples).map(move |s| self.values[s * self.n_obs + j])
    }
}

/// Widely applicable information criterion `−2(lppd − p_waic)` with
/// log-sum-exp stabilization and the sample-variance penalty.
pub fn waic(ll: &PointwiseLogLik) -> Result<f64> {
    if ll.n_samples == 0 || ll.n_obs == 0 {
        return Err(EmberError::InvalidInput(
            "empty pointwise log-likelihood".into(),
        ));
    }
    if ll.values.iter().any(|v| !v.is_finite()) {
        return Err(EmberError::InvalidInput(
            "non-finite pointwise log-likelihood entries".into(),
        ));
    }
    let s = ll.n_samples as f64;
    let per_obs: Vec<f64> = exec::map_indexed(ll.n_obs, |j| {
        let col: Vec<f64> = ll.column(j).collect();
        let lppd = crate::special::log_sum_exp(&col) - s.ln();
        let mean: f64 = col.iter().sum::<f64>() / s;
        let var = if ll.n_samples > 1 {
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (s - 1.0)
        } else {
            0.0
        };
        lppd - var
    });
    Ok(-2.0 * per_obs.into_iter().sum::<f64>())
}

/// One-sided sign-flip permutation test for negative mean score differences.
///
/// Returns `(1 + #{T_perm ≤ T_obs}) / (n_perm + 1)`.
pub fn permutation_test(diffs: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    if diffs.is_empty() {
        return Err(EmberError::InvalidInput("no score differences".into()));
    }
    let observed: f64 = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let hits: usize = exec::map_indexed(n_perm, |b| {
        let mut rng = rng_from_seed(derive_seed(seed, b as u64));
        let mut t = 0.0;
        for &d in diffs {
            t += if rng.random::<bool>() { d } else { -d };
        }
        usize::from(t / diffs.len() as f64 <= observed)
    })
    .into_iter()
    .sum();
    Ok((1 + hits) as f64 / (n_perm + 1) as f64)
}

/// Default permutation count used by the score reports.
pub const DEFAULT_N_PERMUTATIONS: usize = 2000;

/// Probability integral transform of observations against predictive
/// samples; ties are split in the middle.
pub fn pit_values(samples: &crate::predict::PredictiveSamples, observed: &[f64]) -> Result<Vec<f64>> {
    if observed.len() != samples.n_targets {
        return Err(EmberError::InvalidInput(format!(
            "{} observations vs {} predictive targets",
            observed.len(),
            samples.n_targets
        )));
    }
    let n = samples.n_draws as f64;
    Ok((0..samples.n_targets)
        .map(|j| {
            let col = samples.target_samples(j);
            let y = observed[j];
            let below = col.iter().filter(|&&v| v < y).count() as f64;
            let equal = col.iter().filter(|&&v| v == y).count() as f64;
            (below + 0.5 * equal) / n
        })
        .collect())
}

/// Kolmogorov–Smirnov statistic against the uniform distribution.
pub fn ks_uniform_statistic(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((x - lo).abs()).max((hi - x).abs());
    }
    d
}
