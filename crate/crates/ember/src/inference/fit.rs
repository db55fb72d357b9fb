//! Hyperparameter optimization and the fitted-posterior object.
//!
//! Hyperparameters are estimated by maximizing the Laplace-approximated log
//! marginal with a Nelder–Mead simplex on the transformed scale (empirical
//! Bayes); the latent field is then summarized by its Gaussian approximation
//! at the optimum. Inner Newton solves are warm-started across outer
//! evaluations.

use std::cell::RefCell;

use nalgebra::DVector;

use crate::error::{EmberError, Result};
use crate::exec;
use crate::gmrf::PrecisionFactor;
use crate::grid_data::MarkedDataset;
use crate::inference::assemble::{assemble_model, BasisSet, LatentModel};
use crate::inference::hyper::{Hyperparameters, Transform};
use crate::inference::laplace::laplace_log_marginal;
use crate::inference::priors::PriorConfig;
use crate::inference::spec::ModelSpec;
use crate::optim::nelder_mead_max;
use crate::rng::{derive_seed, rng_from_seed};
use crate::subsample::WeightedSubsample;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub seed: u64,
    /// Cap on outer objective evaluations.
    pub max_evals: usize,
    /// Outer convergence tolerance on the objective.
    pub tol: f64,
    /// Initial simplex step on the working scale.
    pub simplex_step: f64,
    /// Slots to fix (value given on the natural scale).
    pub fixed: Vec<(String, f64)>,
    /// Initial values for free slots (natural scale).
    pub init: Vec<(String, f64)>,
    /// When set, only the listed slots stay free.
    pub free_only: Option<Vec<String>>,
    /// Coordinate pre-scan of free identity-scale slots (the sharing
    /// coefficients) before the simplex. The joint posterior in (β, field)
    /// is bimodal under a sign flip; the scan picks the right basin.
    pub prescan: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            seed: 0,
            max_evals: 600,
            tol: 1e-4,
            simplex_step: 0.4,
            fixed: Vec::new(),
            init: Vec::new(),
            free_only: None,
            prescan: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    pub evaluations: usize,
    pub improved_moves: usize,
    pub objective: f64,
    /// Best objective after each accepted improvement.
    pub history: Vec<f64>,
}

/// A fitted model: hyperparameters at the Laplace-marginal optimum and the
/// Gaussian approximation of the latent posterior at that optimum.
pub struct PosteriorFit {
    pub model: LatentModel,
    pub hyper: Hyperparameters,
    pub mode: DVector<f64>,
    pub factor: PrecisionFactor,
    precision: nalgebra::DMatrix<f64>,
    pub log_marginal: f64,
    pub trace: FitTrace,
    pub converged: bool,
}

impl PosteriorFit {
    /// Rebuild a fit from stored parts (loading a serialized fit against a
    /// reassembled model). The log marginal is not recomputed.
    pub fn from_parts(
        model: LatentModel,
        hyper: Hyperparameters,
        mode: DVector<f64>,
        precision: nalgebra::DMatrix<f64>,
    ) -> Result<Self> {
        let factor = PrecisionFactor::of_dense(precision.clone(), model.constraints())?;
        Ok(PosteriorFit {
            model,
            hyper,
            mode,
            factor,
            precision,
            log_marginal: f64::NAN,
            trace: FitTrace::default(),
            converged: true,
        })
    }

    /// Dense posterior precision at the mode.
    pub fn posterior_precision(&self) -> &nalgebra::DMatrix<f64> {
        &self.precision
    }

    /// Marginal posterior standard deviations of the latent field.
    pub fn posterior_sd(&self) -> Vec<f64> {
        self.factor
            .constrained_variance_diagonal()
            .into_iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    }

    /// Posterior samples of the latent field (mode-centred Gaussian).
    pub fn sample_posterior(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        exec::map_indexed(n, |i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            &self.mode + self.factor.sample_one(&mut rng)
        })
    }
}

/// Apply fitting options to a hyperparameter template.
fn configure_hyper(template: &Hyperparameters, opts: &FitOptions) -> Result<Hyperparameters> {
    let mut hyper = template.clone();
    for (name, value) in &opts.init {
        hyper.set_value(name, *value)?;
    }
    for (name, value) in &opts.fixed {
        hyper.set_value(name, *value)?;
        hyper.set_free(name, false)?;
    }
    if let Some(free) = &opts.free_only {
        for slot in template.slots() {
            let keep = free.iter().any(|f| f == &slot.name);
            hyper.set_free(&slot.name, keep && slot.free)?;
        }
        for name in free {
            if hyper.index_of(name).is_none() {
                return Err(EmberError::Model(format!(
                    "free_only references unknown hyperparameter `{name}`"
                )));
            }
            hyper.set_free(name, true)?;
        }
    }
    Ok(hyper)
}

/// Maximize the Laplace log marginal over the free hyperparameters.
///
/// Returns the optimizing hyperparameters, the optimizer trace and a
/// convergence flag. Runs that exhaust the evaluation budget, or end on a
/// flat (non-identifiable) ridge, report `converged = false`.
pub fn optimize_hyperparameters(
    model: &LatentModel,
    hyper0: &Hyperparameters,
    opts: &FitOptions,
) -> Result<(Hyperparameters, FitTrace, bool)> {
    let free = hyper0.free_indices();
    if free.is_empty() {
        let (lml, _) = laplace_log_marginal(model, hyper0, None)?;
        return Ok((
            hyper0.clone(),
            FitTrace {
                evaluations: 1,
                improved_moves: 0,
                objective: lml,
                history: vec![lml],
            },
            true,
        ));
    }

    let warm: RefCell<Option<DVector<f64>>> = RefCell::new(None);
    let history: RefCell<Vec<f64>> = RefCell::new(Vec::new());
    let prescan_evals: RefCell<usize> = RefCell::new(0);
    let objective = |z: &[f64]| -> f64 {
        let theta = hyper0.with_free_working(z);
        let start = warm.borrow().clone();
        match laplace_log_marginal(model, &theta, start.as_ref()) {
            Ok((lml, approx)) => {
                *warm.borrow_mut() = Some(approx.mode);
                let mut h = history.borrow_mut();
                if h.last().map_or(true, |&b| lml > b) {
                    h.push(lml);
                }
                lml
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let mut z0 = hyper0.free_working();
    if opts.prescan {
        const SCAN: [f64; 7] = [-8.0, -4.0, -1.5, 0.0, 1.5, 4.0, 8.0];
        for (pos, &slot_idx) in free.iter().enumerate() {
            if hyper0.slots()[slot_idx].transform != Transform::Identity {
                continue;
            }
            let mut best = (z0[pos], f64::NEG_INFINITY);
            for &g in &SCAN {
                let mut z = z0.clone();
                z[pos] = g;
                let v = objective(&z);
                *prescan_evals.borrow_mut() += 1;
                if v > best.1 {
                    best = (g, v);
                }
            }
            z0[pos] = best.0;
        }
    }
    let result = nelder_mead_max(objective, &z0, opts.simplex_step, opts.tol, opts.max_evals);
    let extra_evals = *prescan_evals.borrow();
    let best = hyper0.with_free_working(&result.x);
    let mut converged = result.converged;

    // identifiability probe on small hyper spaces: a flat ridge at the
    // optimum means the data cannot separate the free parameters
    if converged && free.len() <= 8 {
        let warm_mode = warm.borrow().clone();
        if let Some(floor) = curvature_floor(model, &best, result.value, warm_mode.as_ref()) {
            if floor < 0.01 {
                converged = false;
            }
        }
    }

    Ok((
        best,
        FitTrace {
            evaluations: result.evaluations + extra_evals,
            improved_moves: result.improved_moves,
            objective: result.value,
            history: history.into_inner(),
        },
        converged,
    ))
}

/// Smallest eigenvalue of the finite-difference curvature (negative Hessian
/// of the objective in working coordinates) at the optimum. A value near
/// zero reveals a flat ridge: some direction in hyper space is not
/// identified by data or priors.
fn curvature_floor(
    model: &LatentModel,
    best: &Hyperparameters,
    f0: f64,
    warm: Option<&DVector<f64>>,
) -> Option<f64> {
    let z = best.free_working();
    let n = z.len();
    let h = 0.02;
    let eval = |z: &[f64]| -> Option<f64> {
        laplace_log_marginal(model, &best.with_free_working(z), warm)
            .map(|(v, _)| v)
            .ok()
    };
    let mut hess = nalgebra::DMatrix::zeros(n, n);
    let shifted = |deltas: &[(usize, f64)]| -> Option<f64> {
        let mut zz = z.clone();
        for &(k, d) in deltas {
            zz[k] += d;
        }
        eval(&zz)
    };
    for k in 0..n {
        let fp = shifted(&[(k, h)])?;
        let fm = shifted(&[(k, -h)])?;
        hess[(k, k)] = -(fp - 2.0 * f0 + fm) / (h * h);
    }
    for k in 0..n {
        for l in k + 1..n {
            let fpp = shifted(&[(k, h), (l, h)])?;
            let fpm = shifted(&[(k, h), (l, -h)])?;
            let fmp = shifted(&[(k, -h), (l, h)])?;
            let fmm = shifted(&[(k, -h), (l, -h)])?;
            let v = -(fpp - fpm - fmp + fmm) / (4.0 * h * h);
            hess[(k, l)] = v;
            hess[(l, k)] = v;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(hess);
    Some(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Assemble and fit in one step: optimize hyperparameters, then summarize
/// the latent posterior at the optimum.
pub fn fit(
    spec: &ModelSpec,
    data: &MarkedDataset,
    subsample: &WeightedSubsample,
    bases: &BasisSet,
    priors: &PriorConfig,
    opts: &FitOptions,
) -> Result<PosteriorFit> {
    let model =
        assemble_model(spec, data, subsample, bases, priors).map_err(|e| e.in_stage("assemble"))?;
    fit_model(model, opts)
}

/// Fit an already-assembled model.
pub fn fit_model(model: LatentModel, opts: &FitOptions) -> Result<PosteriorFit> {
    let hyper0 = configure_hyper(&model.hyper_template, opts).map_err(|e| e.in_stage("configure"))?;
    let (hyper, trace, converged) =
        optimize_hyperparameters(&model, &hyper0, opts).map_err(|e| e.in_stage("optimize"))?;
    let (lml, approx) =
        laplace_log_marginal(&model, &hyper, None).map_err(|e| e.in_stage("final approximation"))?;
    Ok(PosteriorFit {
        model,
        hyper,
        mode: approx.mode,
        factor: approx.factor,
        precision: approx.precision,
        log_marginal: lml,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::laplace::gaussian_approximation;
    use crate::grid_data::{attach_marks, FireEvent, PixelDay, PixelDayTable, Season};
    use crate::inference::spec::{Component, ComponentSpec, Effect, EffectKind, Family};
    use crate::subsample::{stratified_subsample, SubsampleConfig};
    use approx::assert_relative_eq;

    /// Dataset of n events with marks, single pixel-day table.
    fn gaussian_size_model(marks: &[f64], phi: f64, free_phi: bool) -> LatentModel {
        let rows = vec![PixelDay {
            cell_id: 1,
            day_index: 0,
            year: 2000,
            month: 7,
            x_km: 0.0,
            y_km: 0.0,
            fwi: 5.0,
            fa: 50.0,
            count: marks.len() as u32,
            volume: 64.0,
        }];
        let table = PixelDayTable::new(rows, Season::default()).unwrap();
        let events: Vec<FireEvent> = marks
            .iter()
            .enumerate()
            .map(|(i, &m)| FireEvent {
                fire_id: i as u64 + 1,
                cell_id: 1,
                day_index: 0,
                burnt_area_ha: m,
            })
            .collect();
        let data = attach_marks(table, events, 1e9).unwrap();
        let ss = stratified_subsample(data.table(), &SubsampleConfig::default()).unwrap();
        let spec = ModelSpec {
            components: vec![ComponentSpec {
                component: Component::Size,
                family: Family::Gaussian,
                effects: vec![Effect::new("size_intercept", EffectKind::Intercept)],
            }],
            shared: vec![],
        };
        let bases = BasisSet::from_table(data.table(), None, 4);
        let mut model =
            assemble_model(&spec, &data, &ss, &bases, &PriorConfig::default()).unwrap();
        model.hyper_template.set_value("gaussian_precision", phi).unwrap();
        model
            .hyper_template
            .set_free("gaussian_precision", free_phi)
            .unwrap();
        model
    }

    #[test]
    fn conjugate_gaussian_posterior_is_exact() {
        let marks = [3.0, 5.0, 4.0, 6.5, 2.5];
        let phi = 1.7;
        let model = gaussian_size_model(&marks, phi, false);
        let theta = model.hyper_template.clone();
        let ga = gaussian_approximation(&model, &theta, None).unwrap();
        let p0 = PriorConfig::default().fixed_effect_precision;
        let n = marks.len() as f64;
        let sum: f64 = marks.iter().sum();
        let want_prec = p0 + n * phi;
        let want_mode = phi * sum / want_prec;
        assert_relative_eq!(ga.mode[0], want_mode, epsilon = 1e-8);
        let sd = ga.factor.constrained_variance_diagonal()[0].sqrt();
        assert_relative_eq!(sd, (1.0 / want_prec).sqrt(), epsilon = 1e-8);

        // marginal likelihood: for the scalar conjugate model,
        // m(y) = ∏ N(y_i; 0, φ⁻¹) adjusted by the prior/posterior precisions
        let (lml, _) = laplace_log_marginal(&model, &theta, None).unwrap();
        let loglik_at = |eta: f64| -> f64 {
            marks
                .iter()
                .map(|&y| {
                    0.5 * (phi / (2.0 * std::f64::consts::PI)).ln()
                        - 0.5 * phi * (y - eta) * (y - eta)
                })
                .sum()
        };
        let log_prior_at = |eta: f64| -> f64 {
            0.5 * (p0 / (2.0 * std::f64::consts::PI)).ln() - 0.5 * p0 * eta * eta
        };
        let log_post_at_mode = 0.5 * (want_prec / (2.0 * std::f64::consts::PI)).ln();
        let want_lml = theta.log_prior_density() + loglik_at(want_mode)
            + log_prior_at(want_mode)
            - log_post_at_mode;
        assert_relative_eq!(lml, want_lml, epsilon = 1e-8);
    }

    #[test]
    fn empirical_bayes_matches_grid_oracle_on_one_hyper() {
        let marks = [3.0, 5.0, 4.0, 6.5, 2.5, 4.4, 3.9, 5.1];
        let model = gaussian_size_model(&marks, 1.0, true);
        let opts = FitOptions::default();
        let hyper0 = configure_hyper(&model.hyper_template, &opts).unwrap();
        let (best, trace, converged) =
            optimize_hyperparameters(&model, &hyper0, &opts).unwrap();
        assert!(converged);
        assert!(trace.evaluations > 0);
        let phi_hat = best.get("gaussian_precision").unwrap();

        // grid + refine oracle over the same objective
        let mut grid_best = (f64::NAN, f64::NEG_INFINITY);
        let mut probe = model.hyper_template.clone();
        let mut log_phi = -4.0f64;
        while log_phi < 4.0 {
            probe.set_value("gaussian_precision", log_phi.exp()).unwrap();
            let (v, _) = laplace_log_marginal(&model, &probe, None).unwrap();
            if v > grid_best.1 {
                grid_best = (log_phi, v);
            }
            log_phi += 0.01;
        }
        assert_relative_eq!(phi_hat.ln(), grid_best.0, epsilon = 2e-2);
        // the optimizer must do at least as well as the grid
        assert!(trace.objective >= grid_best.1 - 1e-3);
    }

    #[test]
    fn starting_at_the_optimum_converges_without_improving_moves() {
        let marks = [3.0, 5.0, 4.0, 6.5, 2.5, 4.4, 3.9, 5.1];
        let model = gaussian_size_model(&marks, 1.0, true);
        let opts = FitOptions::default();
        let hyper0 = configure_hyper(&model.hyper_template, &opts).unwrap();
        let (best, _, _) = optimize_hyperparameters(&model, &hyper0, &opts).unwrap();
        // restart exactly at the optimum
        let (best2, trace2, converged2) =
            optimize_hyperparameters(&model, &best, &opts).unwrap();
        assert!(converged2);
        assert_eq!(trace2.improved_moves, 0);
        assert_relative_eq!(
            best2.get("gaussian_precision").unwrap(),
            best.get("gaussian_precision").unwrap(),
            max_relative = 5e-2
        );
    }

    #[test]
    fn redundant_variances_flag_non_convergence() {
        // two iid effects on the same cells under a Gaussian likelihood:
        // the marginal depends only on the sum of their variances
        let mut rows = Vec::new();
        let mut events = Vec::new();
        let mut id = 1;
        for c in 0..6u64 {
            rows.push(PixelDay {
                cell_id: c,
                day_index: 0,
                year: 2000,
                month: 7,
                x_km: c as f64,
                y_km: 0.0,
                fwi: 5.0,
                fa: 50.0,
                count: 10,
                volume: 64.0,
            });
            for k in 0..10 {
                events.push(FireEvent {
                    fire_id: id,
                    cell_id: c,
                    day_index: 0,
                    burnt_area_ha: 4.0
                        + (c as f64) * 0.8
                        + 0.3 * ((id as f64) * 2.39).sin(),
                });
                id += 1;
                let _ = k;
            }
        }
        let table = PixelDayTable::new(rows, Season::default()).unwrap();
        let data = attach_marks(table, events, 1e9).unwrap();
        let ss = stratified_subsample(data.table(), &SubsampleConfig::default()).unwrap();
        let spec = ModelSpec {
            components: vec![ComponentSpec {
                component: Component::Size,
                family: Family::Gaussian,
                effects: vec![
                    Effect::new("intercept", EffectKind::Intercept),
                    Effect::new("cells_a", EffectKind::CellIid),
                    Effect::new("cells_b", EffectKind::CellIid),
                ],
            }],
            shared: vec![],
        };
        let bases = BasisSet::from_table(data.table(), None, 4);
        let mut model =
            assemble_model(&spec, &data, &ss, &bases, &PriorConfig::default()).unwrap();
        // a fully degenerate pair needs flat hyperpriors: any proper prior
        // on the τ's would by itself pin the variance split
        model
            .hyper_template
            .set_prior("cells_a.tau", crate::inference::hyper::HyperPrior::None)
            .unwrap();
        model
            .hyper_template
            .set_prior("cells_b.tau", crate::inference::hyper::HyperPrior::None)
            .unwrap();
        let opts = FitOptions {
            max_evals: 200,
            fixed: vec![("gaussian_precision".into(), 4.0)],
            ..FitOptions::default()
        };
        let hyper0 = configure_hyper(&model.hyper_template, &opts).unwrap();
        let (_, _, converged) = optimize_hyperparameters(&model, &hyper0, &opts).unwrap();
        assert!(!converged, "redundant variance pair must be flagged");
    }

    #[test]
    fn intercept_only_cox_recovers_log_rate() {
        // total count N over total weighted volume V: intercept ≈ log(N/V)
        let mut rows = Vec::new();
        let mut events = Vec::new();
        let mut id = 1;
        for d in 0..300u32 {
            let count = u32::from(d % 3 == 0);
            rows.push(PixelDay {
                cell_id: 1,
                day_index: d,
                year: 2000,
                month: 6 + (d % 5) as u8,
                x_km: 0.0,
                y_km: 0.0,
                fwi: 5.0,
                fa: 50.0,
                count,
                volume: 64.0,
            });
            if count > 0 {
                events.push(FireEvent {
                    fire_id: id,
                    cell_id: 1,
                    day_index: d,
                    burnt_area_ha: 10.0,
                });
                id += 1;
            }
        }
        let table = PixelDayTable::new(rows, Season::default()).unwrap();
        let data = attach_marks(table, events, 79.0).unwrap();
        // all rows with weight one: exact likelihood
        let ss = crate::subsample::WeightedSubsample::full(data.table());
        let spec = ModelSpec {
            components: vec![ComponentSpec {
                component: Component::Cox,
                family: Family::Poisson,
                effects: vec![Effect::new("intercept", EffectKind::Intercept)],
            }],
            shared: vec![],
        };
        let bases = BasisSet::from_table(data.table(), None, 4);
        let model =
            assemble_model(&spec, &data, &ss, &bases, &PriorConfig::default()).unwrap();
        let fit = fit_model(model, &FitOptions::default()).unwrap();
        let n_total = 100.0f64;
        let v_total = 300.0 * 64.0;
        assert_relative_eq!(
            fit.mode[0],
            (n_total / v_total).ln(),
            epsilon = 1e-3
        );
        // posterior samples center on the mode
        let samples = fit.sample_posterior(4000, 9);
        let mean: f64 = samples.iter().map(|s| s[0]).sum::<f64>() / 4000.0;
        let sd = fit.posterior_sd()[0];
        assert!((mean - fit.mode[0]).abs() < 4.0 * sd / (4000f64).sqrt());
        // determinism
        let s1 = fit.sample_posterior(3, 42);
        let s2 = fit.sample_posterior(3, 42);
        assert_eq!(s1, s2);
    }
}
