//! Posterior predictive simulation and aggregation.
//!
//! Sizes are drawn at the pixel-days of observed events from the size
//! components only; counts and burnt areas are simulated per pixel-day by
//! combining the occurrence and size components. One posterior draw of the
//! latent field drives each predictive replicate.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Distribution;

use crate::error::{EmberError, Result};
use crate::exec;
use crate::extremes::{gpd_quantile_from_survival, scale_from_median, GpdParams};
use crate::grid_data::{MarkedDataset, PixelDayTable};
use crate::inference::{Component, Family, LatentModel, PosteriorFit};
use crate::marked_pp::{expected_count, sample_poisson};
use crate::rng::{derive_seed, rng_from_seed};
use crate::special::inv_logit;

/// Matrix of simulated outcomes: `n_draws` rows over `n_targets` columns.
#[derive(Debug, Clone)]
pub struct PredictiveSamples {
    pub n_draws: usize,
    pub n_targets: usize,
    values: Vec<f64>,
}

impl PredictiveSamples {
    fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n_draws = rows.len();
        let n_targets = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(n_draws * n_targets);
        for r in rows {
            debug_assert_eq!(r.len(), n_targets);
            values.extend(r);
        }
        PredictiveSamples {
            n_draws,
            n_targets,
            values,
        }
    }

    pub fn draw(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_targets..(s + 1) * self.n_targets]
    }

    /// All draws for one target.
    pub fn target_samples(&self, j: usize) -> Vec<f64> {
        (0..self.n_draws)
            .map(|s| self.values[s * self.n_targets + j])
            .collect()
    }
}

fn component_rows(
    model: &LatentModel,
    component: Component,
    pds: &[&crate::grid_data::PixelDay],
) -> Result<Vec<Vec<(u32, f64, i32)>>> {
    pds.iter()
        .map(|pd| {
            model
                .design_row_public(component, pd)
                .map(|row| row.into_iter().collect())
        })
        .collect()
}

fn eval_design(row: &[(u32, f64, i32)], x: &nalgebra::DVector<f64>, theta: &crate::inference::Hyperparameters) -> f64 {
    row.iter()
        .map(|&(idx, w, scale)| {
            let s = if scale >= 0 {
                theta.value(scale as usize)
            } else {
                1.0
            };
            w * s * x[idx as usize]
        })
        .sum()
}

/// Draw one size from the mixture (or single-family) size process.
#[allow(clippy::too_many_arguments)]
fn draw_size<R: Rng>(
    family_split: &SizeModel,
    eta_bin: f64,
    eta_beta: f64,
    eta_gpd: f64,
    eta_size: f64,
    theta: &crate::inference::FamilyTheta,
    threshold: f64,
    rng: &mut R,
) -> Result<f64> {
    match family_split {
        SizeModel::Mixture => {
            let p = inv_logit(eta_bin);
            if rng.random::<f64>() < p {
                let median = eta_gpd.exp();
                let params = GpdParams::new(
                    scale_from_median(median, theta.gpd_shape),
                    theta.gpd_shape,
                )?;
                let s = rng.random::<f64>().max(1e-300);
                Ok(threshold + gpd_quantile_from_survival(s, &params).max(f64::MIN_POSITIVE))
            } else {
                let mu = inv_logit(eta_beta).clamp(1e-9, 1.0 - 1e-9);
                let phi = theta.beta_precision;
                let dist = rand_distr::Beta::new(mu * phi, (1.0 - mu) * phi).map_err(|e| {
                    EmberError::InvalidInput(format!("invalid Beta parameters: {e}"))
                })?;
                let z: f64 = dist.sample(rng);
                Ok(1.0 + z.clamp(1e-12, 1.0 - 1e-12) * (threshold - 1.0))
            }
        }
        SizeModel::Single(family) => {
            let y = match family {
                Family::Gamma => {
                    let phi = theta.gamma_precision;
                    let mean = eta_size.exp();
                    let dist = rand_distr::Gamma::new(phi, mean / phi).map_err(|e| {
                        EmberError::InvalidInput(format!("invalid Gamma parameters: {e}"))
                    })?;
                    dist.sample(rng)
                }
                Family::LogNormal => {
                    let phi = theta.lognormal_precision;
                    let m = eta_size.exp();
                    let dist = rand_distr::Normal::new(m, (1.0 / phi).sqrt()).map_err(|e| {
                        EmberError::InvalidInput(format!("invalid normal parameters: {e}"))
                    })?;
                    let z: f64 = dist.sample(rng);
                    z.exp()
                }
                Family::Gaussian => {
                    let phi = theta.gaussian_precision;
                    let dist =
                        rand_distr::Normal::new(eta_size, (1.0 / phi).sqrt()).map_err(|e| {
                            EmberError::InvalidInput(format!("invalid normal parameters: {e}"))
                        })?;
                    dist.sample(rng)
                }
                other => {
                    return Err(EmberError::Model(format!(
                        "{other} is not a size family"
                    )))
                }
            };
            // the size process models escaped fires (> 1 ha)
            Ok(y.max(1.0 + 1e-9))
        }
    }
}

enum SizeModel {
    Mixture,
    Single(Family),
}

fn size_model(model: &LatentModel) -> Result<SizeModel> {
    if model.spec.has_component(Component::Size) {
        Ok(SizeModel::Single(
            model
                .spec
                .component(Component::Size)
                .map(|c| c.family)
                .expect("checked"),
        ))
    } else if model.spec.has_component(Component::Bin)
        && model.spec.has_component(Component::Beta)
        && model.spec.has_component(Component::Gpd)
    {
        Ok(SizeModel::Mixture)
    } else {
        Err(EmberError::Model(
            "model has no complete size process (need BIN+BETA+GPD or SIZE)".into(),
        ))
    }
}

/// Posterior predictive sizes at the pixel-days of the observed events.
pub fn predictive_sizes(
    fit: &PosteriorFit,
    data: &MarkedDataset,
    n_draws: usize,
    seed: u64,
) -> Result<PredictiveSamples> {
    let model = &fit.model;
    let kind = size_model(model)?;
    let pds: Vec<&crate::grid_data::PixelDay> = data
        .events()
        .iter()
        .map(|e| &data.table().rows()[e.row])
        .collect();
    let rows_bin;
    let rows_beta;
    let rows_gpd;
    let rows_size;
    match kind {
        SizeModel::Mixture => {
            rows_bin = component_rows(model, Component::Bin, &pds)?;
            rows_beta = component_rows(model, Component::Beta, &pds)?;
            rows_gpd = component_rows(model, Component::Gpd, &pds)?;
            rows_size = Vec::new();
        }
        SizeModel::Single(_) => {
            rows_bin = Vec::new();
            rows_beta = Vec::new();
            rows_gpd = Vec::new();
            rows_size = component_rows(model, Component::Size, &pds)?;
        }
    }
    let ft = model.family_theta_public(&fit.hyper);
    let threshold = model.threshold;

    let draws: Vec<Result<Vec<f64>>> = exec::map_indexed(n_draws, |s| {
        let mut rng = rng_from_seed(derive_seed(seed, s as u64));
        let x = &fit.mode + fit.factor.sample_one(&mut rng);
        let mut out = Vec::with_capacity(pds.len());
        for j in 0..pds.len() {
            let (eb, ebe, eg, es) = match kind {
                SizeModel::Mixture => (
                    eval_design(&rows_bin[j], &x, &fit.hyper),
                    eval_design(&rows_beta[j], &x, &fit.hyper),
                    eval_design(&rows_gpd[j], &x, &fit.hyper),
                    0.0,
                ),
                SizeModel::Single(_) => {
                    (0.0, 0.0, 0.0, eval_design(&rows_size[j], &x, &fit.hyper))
                }
            };
            out.push(draw_size(
                &kind, eb, ebe, eg, es, &ft, threshold, &mut rng,
            )?);
        }
        Ok(out)
    });
    let rows: Result<Vec<Vec<f64>>> = draws.into_iter().collect();
    Ok(PredictiveSamples::from_rows(rows?))
}

/// Posterior predictive occurrence counts per pixel-day.
pub fn predictive_counts(
    fit: &PosteriorFit,
    table: &PixelDayTable,
    n_draws: usize,
    seed: u64,
) -> Result<PredictiveSamples> {
    let model = &fit.model;
    if !model.spec.has_component(Component::Cox) {
        return Err(EmberError::Model("model has no occurrence component".into()));
    }
    let pds: Vec<&crate::grid_data::PixelDay> = table.rows().iter().collect();
    let rows_cox = component_rows(model, Component::Cox, &pds)?;
    let draws: Vec<Result<Vec<f64>>> = exec::map_indexed(n_draws, |s| {
        let mut rng = rng_from_seed(derive_seed(seed, s as u64));
        let x = &fit.mode + fit.factor.sample_one(&mut rng);
        let mut out = Vec::with_capacity(pds.len());
        for (j, pd) in pds.iter().enumerate() {
            let mu = eval_design(&rows_cox[j], &x, &fit.hyper);
            let mean = expected_count(mu, pd.volume)?;
            out.push(sample_poisson(mean, &mut rng) as f64);
        }
        Ok(out)
    });
    let rows: Result<Vec<Vec<f64>>> = draws.into_iter().collect();
    Ok(PredictiveSamples::from_rows(rows?))
}

/// Posterior predictive burnt area per pixel-day (counts × sizes).
pub fn predictive_burnt_area(
    fit: &PosteriorFit,
    table: &PixelDayTable,
    n_draws: usize,
    seed: u64,
) -> Result<PredictiveSamples> {
    let model = &fit.model;
    if !model.spec.has_component(Component::Cox) {
        return Err(EmberError::Model("model has no occurrence component".into()));
    }
    let kind = size_model(model)?;
    let pds: Vec<&crate::grid_data::PixelDay> = table.rows().iter().collect();
    let rows_cox = component_rows(model, Component::Cox, &pds)?;
    let (rows_bin, rows_beta, rows_gpd, rows_size) = match kind {
        SizeModel::Mixture => (
            component_rows(model, Component::Bin, &pds)?,
            component_rows(model, Component::Beta, &pds)?,
            component_rows(model, Component::Gpd, &pds)?,
            Vec::new(),
        ),
        SizeModel::Single(_) => (
            Vec::new(),
            Vec::new(),
            Vec::new(),
            component_rows(model, Component::Size, &pds)?,
        ),
    };
    let ft = model.family_theta_public(&fit.hyper);
    let threshold = model.threshold;

    let draws: Vec<Result<Vec<f64>>> = exec::map_indexed(n_draws, |s| {
        let mut rng = rng_from_seed(derive_seed(seed, s as u64));
        let x = &fit.mode + fit.factor.sample_one(&mut rng);
        let mut out = Vec::with_capacity(pds.len());
        for (j, pd) in pds.iter().enumerate() {
            let mu = eval_design(&rows_cox[j], &x, &fit.hyper);
            let mean = expected_count(mu, pd.volume)?;
            let n = sample_poisson(mean, &mut rng);
            let mut total = 0.0;
            for _ in 0..n {
                let (eb, ebe, eg, es) = match kind {
                    SizeModel::Mixture => (
                        eval_design(&rows_bin[j], &x, &fit.hyper),
                        eval_design(&rows_beta[j], &x, &fit.hyper),
                        eval_design(&rows_gpd[j], &x, &fit.hyper),
                        0.0,
                    ),
                    SizeModel::Single(_) => {
                        (0.0, 0.0, 0.0, eval_design(&rows_size[j], &x, &fit.hyper))
                    }
                };
                total += draw_size(&kind, eb, ebe, eg, es, &ft, threshold, &mut rng)?;
            }
            out.push(total);
        }
        Ok(out)
    });
    let rows: Result<Vec<Vec<f64>>> = draws.into_iter().collect();
    Ok(PredictiveSamples::from_rows(rows?))
}

/// Grouped predictive distributions: per-draw sums over group labels.
#[derive(Debug, Clone)]
pub struct GroupedSamples {
    pub groups: Vec<String>,
    pub samples: PredictiveSamples,
}

/// Sum each draw over targets sharing a label; groups are the sorted
/// distinct labels.
pub fn aggregate(samples: &PredictiveSamples, labels: &[String]) -> Result<GroupedSamples> {
    let groups: Vec<String> = {
        let set: std::collections::BTreeSet<String> = labels.iter().cloned().collect();
        set.into_iter().collect()
    };
    aggregate_with_groups(samples, labels, &groups)
}

/// Sum each draw over targets sharing a label, against a fixed group list.
pub fn aggregate_with_groups(
    samples: &PredictiveSamples,
    labels: &[String],
    groups: &[String],
) -> Result<GroupedSamples> {
    if labels.len() != samples.n_targets {
        return Err(EmberError::InvalidInput(format!(
            "{} labels for {} targets",
            labels.len(),
            samples.n_targets
        )));
    }
    let index: BTreeMap<&str, usize> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();
    let mut label_pos = Vec::with_capacity(labels.len());
    for l in labels {
        let pos = index.get(l.as_str()).ok_or_else(|| {
            EmberError::InvalidInput(format!("unknown group label `{l}`"))
        })?;
        label_pos.push(*pos);
    }
    let mut rows = Vec::with_capacity(samples.n_draws);
    for s in 0..samples.n_draws {
        let draw = samples.draw(s);
        let mut sums = vec![0.0; groups.len()];
        for (j, &v) in draw.iter().enumerate() {
            sums[label_pos[j]] += v;
        }
        rows.push(sums);
    }
    Ok(GroupedSamples {
        groups: groups.to_vec(),
        samples: PredictiveSamples::from_rows(rows),
    })
}

/// Pointwise log-likelihood matrix over posterior draws, for WAIC.
pub fn pointwise_log_likelihood(
    fit: &PosteriorFit,
    n_draws: usize,
    seed: u64,
) -> Result<crate::score::PointwiseLogLik> {
    let draws: Vec<Result<Vec<f64>>> = exec::map_indexed(n_draws, |s| {
        let mut rng = rng_from_seed(derive_seed(seed, s as u64));
        let x = &fit.mode + fit.factor.sample_one(&mut rng);
        fit.model.pointwise_log_likelihood(&x, &fit.hyper)
    });
    let rows: Result<Vec<Vec<f64>>> = draws.into_iter().collect();
    crate::score::PointwiseLogLik::from_rows(rows?)
}
