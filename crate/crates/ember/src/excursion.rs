//! Excursion functions of latent fields: the largest credibility at which a
//! location belongs to the joint exceedance set.
//!
//! Nodes are ordered by decreasing marginal exceedance probability; for each
//! prefix set the joint probability (over posterior samples) that all its
//! nodes exceed the level is the excursion-function value of the last node
//! added. The sequence is non-increasing by construction.

use nalgebra::DVector;

use crate::error::{EmberError, Result};
use crate::inference::PosteriorFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcursionSign {
    /// Joint exceedance above `u`.
    Positive,
    /// Joint staying below `−u`.
    Negative,
}

#[derive(Debug, Clone)]
pub struct ExcursionResult {
    pub threshold: f64,
    pub sign: ExcursionSign,
    /// Excursion function per node, in the input node order.
    pub values: Vec<f64>,
    /// Node indices by decreasing marginal probability (the prefix order).
    pub order: Vec<usize>,
}

/// Excursion function from a matrix of field samples (draw-major rows).
pub fn excursion_from_samples(
    samples: &[Vec<f64>],
    threshold: f64,
    sign: ExcursionSign,
) -> Result<ExcursionResult> {
    let n_draws = samples.len();
    if n_draws == 0 {
        return Err(EmberError::InvalidInput("no samples".into()));
    }
    let n_nodes = samples[0].len();
    if n_nodes == 0 || samples.iter().any(|s| s.len() != n_nodes) {
        return Err(EmberError::InvalidInput("ragged or empty sample rows".into()));
    }
    let exceeds = |v: f64| match sign {
        ExcursionSign::Positive => v > threshold,
        ExcursionSign::Negative => v < -threshold,
    };

    // marginal exceedance probabilities
    let mut marginal = vec![0usize; n_nodes];
    for s in samples {
        for (j, &v) in s.iter().enumerate() {
            if exceeds(v) {
                marginal[j] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.sort_by(|&a, &b| marginal[b].cmp(&marginal[a]).then(a.cmp(&b)));

    // joint prefix probabilities: AND over draws in prefix order
    let mut alive: Vec<bool> = vec![true; n_draws];
    let mut alive_count = n_draws;
    let mut values = vec![0.0; n_nodes];
    for &node in &order {
        for (d, s) in samples.iter().enumerate() {
            if alive[d] && !exceeds(s[node]) {
                alive[d] = false;
                alive_count -= 1;
            }
        }
        values[node] = alive_count as f64 / n_draws as f64;
    }
    Ok(ExcursionResult {
        threshold,
        sign,
        values,
        order,
    })
}

/// Excursion function for a latent block of a fitted model.
pub fn excursion_function(
    fit: &PosteriorFit,
    field_id: &str,
    threshold: f64,
    sign: ExcursionSign,
    n_samples: usize,
    seed: u64,
) -> Result<ExcursionResult> {
    if n_samples < 1000 {
        return Err(EmberError::InvalidInput(format!(
            "excursion functions need at least 1000 samples, got {n_samples}"
        )));
    }
    let block = fit.model.block(field_id).ok_or_else(|| {
        EmberError::Model(format!("no latent block named `{field_id}`"))
    })?;
    let range = block.range();
    let draws: Vec<DVector<f64>> = fit.sample_posterior(n_samples, seed);
    let rows: Vec<Vec<f64>> = draws
        .into_iter()
        .map(|x| x.as_slice()[range.clone()].to_vec())
        .collect();
    excursion_from_samples(&rows, threshold, sign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn singleton_matches_marginal_probability() {
        let mut rng = crate::rng::rng_from_seed(1);
        let samples: Vec<Vec<f64>> = (0..50_000)
            .map(|_| vec![if rng.random::<f64>() < 0.8 { 1.0 } else { -1.0 }])
            .collect();
        let r = excursion_from_samples(&samples, 0.5, ExcursionSign::Positive).unwrap();
        assert!((r.values[0] - 0.8).abs() < 0.01);
    }

    #[test]
    fn independent_pair_gives_product() {
        let mut rng = crate::rng::rng_from_seed(2);
        let samples: Vec<Vec<f64>> = (0..100_000)
            .map(|_| {
                vec![
                    if rng.random::<f64>() < 0.9 { 1.0 } else { 0.0 },
                    if rng.random::<f64>() < 0.6 { 1.0 } else { 0.0 },
                ]
            })
            .collect();
        let r = excursion_from_samples(&samples, 0.5, ExcursionSign::Positive).unwrap();
        assert_eq!(r.order, vec![0, 1]);
        assert!((r.values[0] - 0.9).abs() < 0.01, "got {}", r.values[0]);
        assert!((r.values[1] - 0.54).abs() < 0.01, "got {}", r.values[1]);
    }

    #[test]
    fn sure_exceedance_when_threshold_is_low() {
        let samples: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, -(i as f64)]).collect();
        let r = excursion_from_samples(&samples, -1e300, ExcursionSign::Positive).unwrap();
        assert!(r.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn values_are_non_increasing_along_the_order() {
        let mut rng = crate::rng::rng_from_seed(3);
        let samples: Vec<Vec<f64>> = (0..5000)
            .map(|_| (0..6).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let r = excursion_from_samples(&samples, 0.3, ExcursionSign::Positive).unwrap();
        let mut prev = f64::INFINITY;
        for &node in &r.order {
            assert!(r.values[node] <= prev + 1e-15);
            prev = r.values[node];
        }
        // negative side mirrors the construction
        let rn = excursion_from_samples(&samples, 0.3, ExcursionSign::Negative).unwrap();
        for &v in &rn.values {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
