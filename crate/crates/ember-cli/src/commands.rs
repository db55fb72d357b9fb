//! Subcommand implementations.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Result};
use log::info;
use serde::Serialize;

use ember::container::{container_from_fit, FitContainer};
use ember::excursion::{excursion_function, ExcursionSign};
use ember::extremes;
use ember::gmrf::{build_mesh_2d, rectangle, Mesh2D, MeshOptions};
use ember::grid_data::{
    attach_marks, load_fire_events, load_pixel_days, write_fire_events, write_pixel_days,
    MarkedDataset, PixelDayTable,
};
use ember::inference::{
    assemble_model, fit_model, BasisSet, Component, EffectKind, FitOptions, ModelSpec,
    PosteriorFit,
};
use ember::marked_pp::{IntensityConvention, IntensityField, SizeFields, ThinningField};
use ember::predict;
use ember::score;
use ember::subsample::{stratified_subsample, WeightedSubsample};

use crate::config::{hex, sha256_of, sha256_of_files, RunConfig};

pub struct RunContext {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub invert_fwi_classes: bool,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    version: String,
    config_digest: String,
    seed: u64,
    wall_time_ms: u128,
    artifacts: Vec<String>,
}

impl RunContext {
    fn write_manifest(&self, command: &str, started: Instant, artifacts: &[PathBuf]) -> Result<()> {
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: hex(&self.cfg.config_digest),
            seed: self.seed,
            wall_time_ms: started.elapsed().as_millis(),
            artifacts: artifacts
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
        };
        let path = self.out_dir.join("run_manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    fn load_table(&self) -> Result<PixelDayTable> {
        let path = self.cfg.path("data.pixel_days")?;
        let season = self.cfg.season()?;
        let table = load_pixel_days(&path, season)
            .map_err(|e| anyhow!("loading {}: {e}", path.display()))?;
        info!("loaded {} pixel-days from {}", table.len(), path.display());
        Ok(table)
    }

    fn load_dataset(&self) -> Result<(MarkedDataset, f64)> {
        let table = self.load_table()?;
        let fires_path = self.cfg.path("data.fires")?;
        let events = load_fire_events(&fires_path)
            .map_err(|e| anyhow!("loading {}: {e}", fires_path.display()))?;
        info!("loaded {} fire events", events.len());
        let threshold = self.threshold(&events)?;
        let data = attach_marks(table, events, threshold)?;
        Ok((data, threshold))
    }

    fn threshold(&self, events: &[ember::grid_data::FireEvent]) -> Result<f64> {
        if let Some(v) = self.cfg.parse_opt::<f64>("threshold.value")? {
            return Ok(v);
        }
        let q: f64 = self.cfg.parse("threshold.quantile", 0.95)?;
        if events.is_empty() {
            bail!("cannot take a burnt-area quantile without events; set threshold.value");
        }
        let mut sizes: Vec<f64> = events.iter().map(|e| e.burnt_area_ha).collect();
        sizes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((q * sizes.len() as f64).ceil() as usize).clamp(1, sizes.len()) - 1;
        Ok(sizes[idx])
    }

    fn mesh_for(&self, table: &PixelDayTable) -> Result<Arc<Mesh2D>> {
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for r in table.rows() {
            xmin = xmin.min(r.x_km);
            xmax = xmax.max(r.x_km);
            ymin = ymin.min(r.y_km);
            ymax = ymax.max(r.y_km);
        }
        let diameter = ((xmax - xmin).hypot(ymax - ymin)).max(1.0);
        let margin: f64 = self.cfg.parse("mesh.margin", 0.02 * diameter)?;
        let interior: f64 = self.cfg.parse("mesh.interior_edge", diameter / 12.0)?;
        let exterior: f64 = self.cfg.parse("mesh.exterior_edge", 2.0 * interior)?;
        let extension: f64 = self.cfg.parse("mesh.extension", 0.3 * diameter)?;
        let mesh = build_mesh_2d(
            &rectangle(xmin - margin, ymin - margin, xmax + margin, ymax + margin),
            &MeshOptions {
                interior_edge: interior,
                exterior_edge: exterior,
                extension,
            },
        )?;
        info!("built mesh with {} nodes", mesh.n_nodes());
        Ok(Arc::new(mesh))
    }

    fn bases_for(&self, spec: &ModelSpec, table: &PixelDayTable) -> Result<BasisSet> {
        let needs_mesh = spec
            .components
            .iter()
            .any(|c| c.effects.iter().any(|e| e.kind == EffectKind::Spatial))
            || !spec.shared.is_empty();
        let mesh = if needs_mesh {
            Some(self.mesh_for(table)?)
        } else {
            None
        };
        let n_knots: usize = self.cfg.parse("model.knots", 4)?;
        Ok(BasisSet::from_table(table, mesh, n_knots))
    }

    fn fit_options(&self) -> Result<FitOptions> {
        let mut opts = FitOptions {
            seed: self.seed,
            max_evals: self.cfg.parse("fit.max_evals", 600)?,
            tol: self.cfg.parse("fit.tol", 1e-4)?,
            ..FitOptions::default()
        };
        for (name, value) in self.cfg.with_prefix("fit.fix.") {
            opts.fixed.push((
                name.to_string(),
                value
                    .parse::<f64>()
                    .map_err(|e| anyhow!("fit.fix.{name}: {e}"))?,
            ));
        }
        for (name, value) in self.cfg.with_prefix("fit.init.") {
            opts.init.push((
                name.to_string(),
                value
                    .parse::<f64>()
                    .map_err(|e| anyhow!("fit.init.{name}: {e}"))?,
            ));
        }
        if let Some(free) = self.cfg.get("fit.free_only") {
            opts.free_only = Some(free.split(',').map(|s| s.trim().to_string()).collect());
        }
        Ok(opts)
    }

    fn spec_digest(&self, spec: &ModelSpec) -> [u8; 32] {
        sha256_of(spec.canonical_string().as_bytes())
    }

    fn data_digest(&self) -> Result<[u8; 32]> {
        let pd = self.cfg.path("data.pixel_days")?;
        let fires = self.cfg.path("data.fires")?;
        sha256_of_files(&[&pd, &fires])
    }
}

// --- diagnose-threshold -------------------------------------------------------

pub fn diagnose_threshold(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let fires_path = ctx.cfg.path("data.fires")?;
    let events = load_fire_events(&fires_path)?;
    if events.is_empty() {
        bail!("no fire events in {}", fires_path.display());
    }
    let sizes: Vec<f64> = events.iter().map(|e| e.burnt_area_ha).collect();

    let min = sizes.iter().cloned().fold(f64::INFINITY, f64::min);
    let start: f64 = ctx.cfg.parse("diagnose.start", min)?;
    let m: usize = ctx.cfg.parse("diagnose.m", 40)?;
    let step: f64 = ctx.cfg.parse("diagnose.step", 5.0)?;
    let grid = extremes::equidistant_thresholds(start, m, step);

    // trim the grid so every interval keeps enough observations
    let mut usable = Vec::new();
    for (k, &v) in grid.iter().enumerate() {
        let next = grid.get(k + 1);
        let in_interval = sizes
            .iter()
            .filter(|&&y| y > v && next.map_or(true, |&n| y <= n))
            .count();
        let above = sizes.iter().filter(|&&y| y > v).count();
        if in_interval >= 5 && above >= extremes::DEFAULT_MIN_EXCESSES {
            usable.push(v);
        } else {
            break;
        }
    }
    if usable.len() < 2 {
        bail!(
            "threshold grid leaves too few observations; lower diagnose.start or diagnose.step"
        );
    }
    if usable.len() < grid.len() {
        info!(
            "trimmed threshold grid from {} to {} thresholds",
            grid.len(),
            usable.len()
        );
    }

    let diag = extremes::mean_excess_curve(&sizes, &usable)?
        .merge(extremes::threshold_stability(&sizes, &usable)?)?
        .merge(extremes::northrop_coleman_test(&sizes, &usable)?)?;

    let path = ctx.out_dir.join("thresholds.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "threshold",
        "n_exceed",
        "xi_hat",
        "xi_se",
        "mean_excess",
        "me_lo",
        "me_hi",
        "p_value",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for k in 0..diag.thresholds.len() {
        w.write_record([
            diag.thresholds[k].to_string(),
            diag.n_exceed[k].to_string(),
            fmt(diag.shape[k].map(|s| s.xi)),
            fmt(diag.shape[k].map(|s| s.se)),
            fmt(diag.mean_excess[k].map(|m| m.mean)),
            fmt(diag.mean_excess[k].map(|m| m.lo)),
            fmt(diag.mean_excess[k].map(|m| m.hi)),
            fmt(diag.p_values[k]),
        ])?;
    }
    w.flush()?;
    let artifacts = vec![path];
    ctx.write_manifest("diagnose-threshold", started, &artifacts)?;
    Ok(artifacts)
}

// --- subsample -----------------------------------------------------------------

pub fn subsample(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let table = ctx.load_table()?;
    let cfg = ctx
        .cfg
        .subsample_config(ctx.seed, ctx.invert_fwi_classes)?;
    let ss = stratified_subsample(&table, &cfg)?;
    info!("subsample keeps {} of {} rows", ss.len(), table.len());

    let path = ctx.out_dir.join("subsample.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "cell_id", "day_index", "year", "month", "x_km", "y_km", "fwi", "fa", "count",
        "volume", "p_incl", "weight",
    ])?;
    for srow in ss.rows() {
        let r = &table.rows()[srow.row];
        w.write_record([
            r.cell_id.to_string(),
            r.day_index.to_string(),
            r.year.to_string(),
            r.month.to_string(),
            r.x_km.to_string(),
            r.y_km.to_string(),
            r.fwi.to_string(),
            r.fa.to_string(),
            r.count.to_string(),
            r.volume.to_string(),
            srow.inclusion_probability.to_string(),
            srow.weight.to_string(),
        ])?;
    }
    w.flush()?;
    let artifacts = vec![path];
    ctx.write_manifest("subsample", started, &artifacts)?;
    Ok(artifacts)
}

// --- fit -------------------------------------------------------------------------

#[derive(Serialize)]
struct SlotSummary {
    name: String,
    value: f64,
    free: bool,
}

#[derive(Serialize)]
struct FitSummary {
    model_label: String,
    converged: bool,
    log_marginal: f64,
    evaluations: usize,
    n_latent: usize,
    n_observations: usize,
    threshold: f64,
    hyperparameters: Vec<SlotSummary>,
}

pub fn fit(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let (data, threshold) = ctx.load_dataset()?;
    let label = ctx.cfg.model_label()?;
    let spec = ModelSpec::preset(label);
    let ss_cfg = ctx
        .cfg
        .subsample_config(ctx.seed, ctx.invert_fwi_classes)?;
    let ss = stratified_subsample(data.table(), &ss_cfg)?;
    info!(
        "fitting {label:?}: {} events, {} subsampled rows, threshold {threshold}",
        data.events().len(),
        ss.len()
    );
    let bases = ctx.bases_for(&spec, data.table())?;
    let priors = ctx.cfg.prior_config()?;
    let opts = ctx.fit_options()?;
    let model = assemble_model(&spec, &data, &ss, &bases, &priors)?;
    info!("latent dimension {}", model.n_latent);
    let fitted = fit_model(model, &opts)?;
    if !fitted.converged {
        info!("warning: hyperparameter optimization flagged non-convergence");
    }

    let container = container_from_fit(
        &fitted,
        ctx.cfg.config_digest,
        ctx.spec_digest(&spec),
        ctx.data_digest()?,
    );
    let bin_path = ctx.out_dir.join("fit.bin");
    let mut file = std::fs::File::create(&bin_path)?;
    container.write(&mut file)?;

    let summary = FitSummary {
        model_label: format!("{label:?}"),
        converged: fitted.converged,
        log_marginal: fitted.log_marginal,
        evaluations: fitted.trace.evaluations,
        n_latent: fitted.model.n_latent,
        n_observations: fitted.model.obs.iter().map(|o| o.len()).sum(),
        threshold,
        hyperparameters: fitted
            .hyper
            .slots()
            .iter()
            .map(|s| SlotSummary {
                name: s.name.clone(),
                value: s.value,
                free: s.free,
            })
            .collect(),
    };
    let summary_path = ctx.out_dir.join("fit_summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;

    let artifacts = vec![bin_path, summary_path];
    ctx.write_manifest("fit", started, &artifacts)?;
    Ok(artifacts)
}

// --- simulate ----------------------------------------------------------------------

#[derive(Serialize)]
struct Provenance {
    seed: u64,
    parameter_digest: String,
    n_events: usize,
    threshold: f64,
}

pub fn simulate(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let table = ctx.load_table()?;
    let label = ctx.cfg.model_label()?;
    let spec = ModelSpec::preset(label);
    if !spec.has_component(Component::Bin) {
        bail!("simulate requires a mixture-size model (M1–M3); got {label:?}");
    }
    let threshold: f64 = ctx.cfg.parse("threshold.value", 79.0)?;

    // zeroed copy of the table; counts come from the simulation
    let rows: Vec<ember::grid_data::PixelDay> = table
        .rows()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.count = 0;
            r
        })
        .collect();
    let table0 = PixelDayTable::new(rows, table.season())?;
    let empty = attach_marks(table0, Vec::new(), threshold)?;
    let full = WeightedSubsample::full(empty.table());
    let bases = ctx.bases_for(&spec, empty.table())?;
    let priors = ctx.cfg.prior_config()?;
    let model = assemble_model(&spec, &empty, &full, &bases, &priors)?;

    // hyper values and intercept pins for the generative draw
    let mut theta = model.hyper_template.clone();
    let mut param_lines = Vec::new();
    for (name, value) in ctx.cfg.with_prefix("simulate.hyper.") {
        let v: f64 = value.parse().map_err(|e| anyhow!("simulate.hyper.{name}: {e}"))?;
        theta
            .set_value(name, v)
            .map_err(|e| anyhow!("simulate.hyper.{name}: {e}"))?;
        param_lines.push(format!("hyper.{name}={v}"));
    }
    let mut pins = HashMap::new();
    for (name, value) in ctx.cfg.with_prefix("simulate.intercept.") {
        let v: f64 = value
            .parse()
            .map_err(|e| anyhow!("simulate.intercept.{name}: {e}"))?;
        pins.insert(name.to_string(), v);
        param_lines.push(format!("intercept.{name}={v}"));
    }
    param_lines.sort();

    let latent = model.sample_prior_latent(&theta, &pins, ctx.seed)?;
    let pds = empty.table().rows();
    let eta_cox = model.component_eta(Component::Cox, pds, &latent, &theta)?;
    let eta_bin = model.component_eta(Component::Bin, pds, &latent, &theta)?;
    let eta_beta = model.component_eta(Component::Beta, pds, &latent, &theta)?;
    let eta_gpd = model.component_eta(Component::Gpd, pds, &latent, &theta)?;
    let ft = model.family_theta_public(&theta);

    let sim = ember::marked_pp::simulate_marked_process(
        empty.table(),
        &IntensityField {
            log_intensity: eta_cox,
            convention: IntensityConvention::PerUnitVolume,
        },
        &ThinningField {
            exceed_logit: eta_bin,
        },
        &SizeFields {
            beta_mean_logit: eta_beta,
            beta_precision: ft.beta_precision,
            gpd_log_median: eta_gpd,
            gpd_shape: ft.gpd_shape,
        },
        threshold,
        ctx.seed,
    )?;
    info!("simulated {} events", sim.events().len());

    let fires_path = ctx.out_dir.join("fires.csv");
    let events: Vec<ember::grid_data::FireEvent> =
        sim.events().iter().map(|e| e.event.clone()).collect();
    write_fire_events(std::fs::File::create(&fires_path)?, &events)?;
    let pd_path = ctx.out_dir.join("pixel_days.csv");
    write_pixel_days(std::fs::File::create(&pd_path)?, sim.table())?;

    let digest = sha256_of(param_lines.join("\n").as_bytes());
    let provenance = Provenance {
        seed: ctx.seed,
        parameter_digest: hex(&digest),
        n_events: events.len(),
        threshold,
    };
    let prov_path = ctx.out_dir.join("provenance.json");
    std::fs::write(&prov_path, serde_json::to_string_pretty(&provenance)?)?;

    let artifacts = vec![fires_path, pd_path, prov_path];
    ctx.write_manifest("simulate", started, &artifacts)?;
    Ok(artifacts)
}

// --- score -----------------------------------------------------------------------

#[derive(Serialize)]
struct Scores {
    n_events: usize,
    n_draws: usize,
    /// Mean sCRPS over individual fire sizes, lower is better.
    scrps_sizes: f64,
    brier_q90: f64,
    one_minus_auc_q90: f64,
    exceed_quantile_level: f64,
    exceed_threshold: f64,
    waic: f64,
    /// Mean sCRPS over aggregated burnt areas, lower is better.
    scrps_aggregated: f64,
    group_by: String,
    n_groups: usize,
    iqr_coverage: f64,
    p_scrps_sizes: Option<f64>,
    p_brier_q90: Option<f64>,
    p_scrps_aggregated: Option<f64>,
}

fn load_fit_against(
    ctx: &RunContext,
    key: &str,
    spec: &ModelSpec,
    training: &MarkedDataset,
) -> Result<PosteriorFit> {
    let path = ctx.cfg.path(key)?;
    let file = std::fs::File::open(&path)?;
    let container = FitContainer::read(std::io::BufReader::new(file))?;
    if container.spec_digest != ctx.spec_digest(spec) {
        bail!(
            "{key}: fit was produced under a different model spec (digest mismatch)"
        );
    }
    if container.data_digest != ctx.data_digest()? {
        bail!("{key}: fit was produced on different training data (digest mismatch)");
    }
    let ss_cfg = ctx
        .cfg
        .subsample_config(ctx.seed, ctx.invert_fwi_classes)?;
    let ss = stratified_subsample(training.table(), &ss_cfg)?;
    let bases = ctx.bases_for(spec, training.table())?;
    let priors = ctx.cfg.prior_config()?;
    let model = assemble_model(spec, training, &ss, &bases, &priors)?;
    if model.n_latent != container.n_latent() {
        bail!(
            "{key}: latent dimension mismatch ({} in container vs {} reassembled)",
            container.n_latent(),
            model.n_latent
        );
    }
    Ok(ember::container::fit_from_container(model, &container)?)
}

fn group_labels(table: &PixelDayTable, group_by: &str) -> Result<Vec<String>> {
    table
        .rows()
        .iter()
        .map(|r| match group_by {
            "year" => Ok(r.year.to_string()),
            "month" => Ok(format!("{:02}", r.month)),
            "cell" => Ok(format!("cell{}", r.cell_id)),
            "year_month" => Ok(format!("{}-{:02}", r.year, r.month)),
            other => bail!("unknown score.group_by `{other}`"),
        })
        .collect()
}

pub fn run_score(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let (training, _threshold) = ctx.load_dataset()?;
    let label = ctx.cfg.model_label()?;
    let spec = ModelSpec::preset(label);
    let fit = load_fit_against(ctx, "score.fit", &spec, &training)?;

    // validation data (defaults to the training paths)
    let val_pd = if ctx.cfg.get("score.pixel_days").is_some() {
        ctx.cfg.path("score.pixel_days")?
    } else {
        ctx.cfg.path("data.pixel_days")?
    };
    let val_fires = if ctx.cfg.get("score.fires").is_some() {
        ctx.cfg.path("score.fires")?
    } else {
        ctx.cfg.path("data.fires")?
    };
    let val_table = load_pixel_days(&val_pd, ctx.cfg.season()?)?;
    let val_events = load_fire_events(&val_fires)?;
    let validation = attach_marks(val_table, val_events, fit.model.threshold)?;
    if validation.events().is_empty() {
        bail!("validation data contains no events to score");
    }

    let n_draws: usize = ctx.cfg.parse("score.n_draws", 500)?;
    let q_level: f64 = ctx.cfg.parse("score.exceed_quantile", 0.9)?;
    let group_by = ctx.cfg.get("score.group_by").unwrap_or("year").to_string();

    // individual fire sizes
    let sizes = predict::predictive_sizes(&fit, &validation, n_draws, ctx.seed)?;
    let observed: Vec<f64> = validation
        .events()
        .iter()
        .map(|e| e.event.burnt_area_ha)
        .collect();
    let scrps_events: Vec<f64> = (0..observed.len())
        .map(|j| score::scrps(&sizes.target_samples(j), observed[j]).map(|v| -v))
        .collect::<ember::Result<_>>()?;
    let scrps_sizes = scrps_events.iter().sum::<f64>() / scrps_events.len() as f64;

    // exceedance scores over the empirical size quantile
    let mut sorted = observed.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let qidx = ((q_level * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    let q90 = sorted[qidx];
    let outcomes: Vec<bool> = observed.iter().map(|&y| y > q90).collect();
    let probs: Vec<f64> = (0..observed.len())
        .map(|j| {
            let col = sizes.target_samples(j);
            col.iter().filter(|&&v| v > q90).count() as f64 / col.len() as f64
        })
        .collect();
    let brier_q90 = score::brier(&probs, &outcomes)?;
    let one_minus_auc = 1.0 - score::auc(&probs, &outcomes)?;

    // WAIC on the training-model observations
    let ll = predict::pointwise_log_likelihood(&fit, n_draws.min(200), ctx.seed ^ 0x5eed)?;
    let waic = score::waic(&ll)?;

    // aggregated burnt areas
    let ba = predict::predictive_burnt_area(&fit, validation.table(), n_draws, ctx.seed + 1)?;
    let labels = group_labels(validation.table(), &group_by)?;
    let grouped = predict::aggregate(&ba, &labels)?;
    let mut observed_by_group: std::collections::BTreeMap<&str, f64> =
        grouped.groups.iter().map(|g| (g.as_str(), 0.0)).collect();
    for (row, ev) in validation
        .events()
        .iter()
        .map(|e| (e.row, e.event.burnt_area_ha))
    {
        *observed_by_group.get_mut(labels[row].as_str()).unwrap() += ev;
    }

    let group_path = ctx.out_dir.join("group_totals.csv");
    let mut w = csv::Writer::from_path(&group_path)?;
    w.write_record(["group", "observed", "q25", "q50", "q75", "in_iqr"])?;
    let mut agg_scores = Vec::new();
    let mut covered = 0usize;
    for (g, group) in grouped.groups.iter().enumerate() {
        let draws = grouped.samples.target_samples(g);
        let mut sorted = draws.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| sorted[((p * sorted.len() as f64) as usize).min(sorted.len() - 1)];
        let obs = observed_by_group[group.as_str()];
        let in_iqr = obs >= q(0.25) && obs <= q(0.75);
        covered += usize::from(in_iqr);
        agg_scores.push(-score::scrps(&draws, obs)?);
        w.write_record([
            group.clone(),
            obs.to_string(),
            q(0.25).to_string(),
            q(0.50).to_string(),
            q(0.75).to_string(),
            u8::from(in_iqr).to_string(),
        ])?;
    }
    w.flush()?;
    let scrps_aggregated = agg_scores.iter().sum::<f64>() / agg_scores.len() as f64;
    let iqr_coverage = covered as f64 / grouped.groups.len() as f64;

    // permutation p-values against an optional baseline fit
    let (mut p_scrps, mut p_brier, mut p_agg) = (None, None, None);
    if ctx.cfg.get("score.baseline_fit").is_some() {
        let baseline = load_fit_against(ctx, "score.baseline_fit", &spec, &training)?;
        let b_sizes = predict::predictive_sizes(&baseline, &validation, n_draws, ctx.seed)?;
        let b_scrps: Vec<f64> = (0..observed.len())
            .map(|j| score::scrps(&b_sizes.target_samples(j), observed[j]).map(|v| -v))
            .collect::<ember::Result<_>>()?;
        let diffs: Vec<f64> = scrps_events
            .iter()
            .zip(&b_scrps)
            .map(|(a, b)| a - b)
            .collect();
        p_scrps = Some(score::permutation_test(
            &diffs,
            score::DEFAULT_N_PERMUTATIONS,
            ctx.seed + 7,
        )?);
        let b_probs: Vec<f64> = (0..observed.len())
            .map(|j| {
                let col = b_sizes.target_samples(j);
                col.iter().filter(|&&v| v > q90).count() as f64 / col.len() as f64
            })
            .collect();
        let brier_diffs: Vec<f64> = (0..observed.len())
            .map(|j| {
                let t = if outcomes[j] { 1.0 } else { 0.0 };
                (probs[j] - t).powi(2) - (b_probs[j] - t).powi(2)
            })
            .collect();
        p_brier = Some(score::permutation_test(
            &brier_diffs,
            score::DEFAULT_N_PERMUTATIONS,
            ctx.seed + 8,
        )?);
        let b_ba =
            predict::predictive_burnt_area(&baseline, validation.table(), n_draws, ctx.seed + 1)?;
        let b_grouped = predict::aggregate_with_groups(&b_ba, &labels, &grouped.groups)?;
        let agg_diffs: Vec<f64> = grouped
            .groups
            .iter()
            .enumerate()
            .map(|(g, group)| {
                let obs = observed_by_group[group.as_str()];
                let a = -score::scrps(&grouped.samples.target_samples(g), obs)?;
                let b = -score::scrps(&b_grouped.samples.target_samples(g), obs)?;
                Ok(a - b)
            })
            .collect::<ember::Result<_>>()?;
        p_agg = Some(score::permutation_test(
            &agg_diffs,
            score::DEFAULT_N_PERMUTATIONS,
            ctx.seed + 9,
        )?);
    }

    let scores = Scores {
        n_events: observed.len(),
        n_draws,
        scrps_sizes,
        brier_q90,
        one_minus_auc_q90: one_minus_auc,
        exceed_quantile_level: q_level,
        exceed_threshold: q90,
        waic,
        scrps_aggregated,
        group_by,
        n_groups: grouped.groups.len(),
        iqr_coverage,
        p_scrps_sizes: p_scrps,
        p_brier_q90: p_brier,
        p_scrps_aggregated: p_agg,
    };
    let scores_path = ctx.out_dir.join("scores.json");
    std::fs::write(&scores_path, serde_json::to_string_pretty(&scores)?)?;

    let artifacts = vec![scores_path, group_path];
    ctx.write_manifest("score", started, &artifacts)?;
    Ok(artifacts)
}

// --- excursion -----------------------------------------------------------------

pub fn excursion(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let (training, _) = ctx.load_dataset()?;
    let label = ctx.cfg.model_label()?;
    let spec = ModelSpec::preset(label);
    let fit = load_fit_against(ctx, "excursion.fit", &spec, &training)?;

    let field = ctx.cfg.require("excursion.field")?.to_string();
    let u: f64 = ctx.cfg.parse("excursion.u", 0.1)?;
    let n_samples: usize = ctx.cfg.parse("excursion.n_samples", 1000)?;
    let pos = excursion_function(&fit, &field, u, ExcursionSign::Positive, n_samples, ctx.seed)?;
    let neg = excursion_function(&fit, &field, u, ExcursionSign::Negative, n_samples, ctx.seed)?;

    // node coordinates from the reassembled mesh when the block matches it
    let bases = ctx.bases_for(&spec, training.table())?;
    let coords: Option<Vec<[f64; 2]>> = bases.mesh.as_ref().and_then(|m| {
        (m.n_nodes() == pos.values.len()).then(|| m.nodes().to_vec())
    });

    let path = ctx.out_dir.join("excursion.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["node_id", "x_km", "y_km", "f_plus", "f_minus"])?;
    for i in 0..pos.values.len() {
        let (x, y) = coords
            .as_ref()
            .map(|c| (c[i][0].to_string(), c[i][1].to_string()))
            .unwrap_or_default();
        w.write_record([
            i.to_string(),
            x,
            y,
            pos.values[i].to_string(),
            neg.values[i].to_string(),
        ])?;
    }
    w.flush()?;
    let artifacts = vec![path];
    ctx.write_manifest("excursion", started, &artifacts)?;
    Ok(artifacts)
}
