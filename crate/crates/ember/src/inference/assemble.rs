//! Assembly of the joint latent Gaussian model: one stacked latent vector,
//! sparse design rows per observation, and a hyperparameter-indexed prior
//! precision built from per-effect blocks.
//!
//! Shared effects appear once in the latent vector; design rows of the
//! scaled component carry a reference to the sharing-coefficient slot, so
//! the same latent block enters both predictors (β-scaled in one).

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{EmberError, Result};
use crate::gmrf::fem::{fem_1d, fem_2d, FemOps};
use crate::gmrf::{projector_2d, sample_gmrf, MaternHyper, Mesh2D, SparsePrecision};
use crate::grid_data::{transform_moderate_mark, MarkedDataset, PixelDay, PixelDayTable, Season};
use crate::inference::family::FamilyTheta;
use crate::inference::hyper::{HyperPrior, HyperSlot, Hyperparameters, Transform};
use crate::inference::priors::PriorConfig;
use crate::inference::spec::{
    Component, Covariate, EffectKind, Family, LinearCovariate, ModelSpec,
};
use crate::rng::derive_seed;
use crate::sparse::{CsrMatrix, SymTripletAcc};
use crate::subsample::WeightedSubsample;

/// Bases underlying the latent effects: one shared 2D mesh and knot vectors
/// for the covariate splines.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub mesh: Option<Arc<Mesh2D>>,
    pub fwi_knots: Vec<f64>,
    pub fa_knots: Vec<f64>,
}

impl BasisSet {
    /// Evenly spaced knots over the observed covariate ranges (the reference
    /// configuration uses four knots).
    pub fn from_table(table: &PixelDayTable, mesh: Option<Arc<Mesh2D>>, n_knots: usize) -> Self {
        let knots = |extract: fn(&PixelDay) -> f64| -> Vec<f64> {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for r in table.rows() {
                let v = extract(r);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !(hi > lo) {
                hi = lo + 1.0;
            }
            let n = n_knots.max(3);
            (0..n)
                .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
                .collect()
        };
        BasisSet {
            mesh,
            fwi_knots: knots(|r| r.fwi),
            fa_knots: knots(|r| r.fa),
        }
    }
}

/// Prior structure of one latent block, parameterized by hyper slots.
#[derive(Debug, Clone)]
pub(crate) enum BlockPrior {
    FixedGaussian {
        precision: f64,
    },
    Iid {
        tau: usize,
    },
    Spde2d {
        fem: Arc<FemOps>,
        range: usize,
        sd: usize,
    },
    Spde1d {
        fem: Arc<FemOps>,
        range: usize,
        sd: usize,
    },
    Rw1 {
        tau: usize,
    },
    FwiByMonth {
        fem: Arc<FemOps>,
        range: usize,
        sd: usize,
        tau: usize,
        n_months: usize,
        n_basis: usize,
    },
}

#[derive(Debug, Clone)]
pub struct LatentBlock {
    pub id: String,
    pub offset: usize,
    pub len: usize,
    pub(crate) prior: BlockPrior,
    /// Block-local constraint rows.
    pub(crate) constraints: Vec<Vec<f64>>,
}

impl LatentBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    /// Sparse precision of the block at given hyper values, with its
    /// constraints attached.
    pub(crate) fn precision(&self, theta: &Hyperparameters) -> Result<SparsePrecision> {
        let csr = self.precision_matrix(theta)?;
        let mut q = SparsePrecision::new(csr)?;
        for c in &self.constraints {
            q = q.with_constraint(c.clone())?;
        }
        Ok(q)
    }

    fn precision_matrix(&self, theta: &Hyperparameters) -> Result<CsrMatrix> {
        match &self.prior {
            BlockPrior::FixedGaussian { precision } => {
                let mut acc = SymTripletAcc::new();
                for i in 0..self.len {
                    acc.add(i, i, *precision);
                }
                Ok(acc.build(self.len))
            }
            BlockPrior::Iid { tau } => {
                let t = theta.value(*tau);
                ensure_positive(t, "iid precision")?;
                let mut acc = SymTripletAcc::new();
                for i in 0..self.len {
                    acc.add(i, i, t);
                }
                Ok(acc.build(self.len))
            }
            BlockPrior::Spde2d { fem, range, sd } => {
                let hyper = MaternHyper::new(theta.value(*range), theta.value(*sd))?;
                Ok(crate::gmrf::spde_from_fem_ops(fem, &hyper, 2))
            }
            BlockPrior::Spde1d { fem, range, sd } => {
                let hyper = MaternHyper::new(theta.value(*range), theta.value(*sd))?;
                Ok(crate::gmrf::spde_from_fem_ops(fem, &hyper, 1))
            }
            BlockPrior::Rw1 { tau } => {
                let t = theta.value(*tau);
                ensure_positive(t, "random-walk precision")?;
                Ok(rw1_matrix(self.len, t))
            }
            BlockPrior::FwiByMonth {
                fem,
                range,
                sd,
                tau,
                n_months,
                n_basis,
            } => {
                let hyper = MaternHyper::new(theta.value(*range), theta.value(*sd))?;
                let q_spline = crate::gmrf::spde_from_fem_ops(fem, &hyper, 1);
                let t = theta.value(*tau);
                ensure_positive(t, "month-link precision")?;
                let rw = rw1_matrix(*n_months, t);
                let mut acc = SymTripletAcc::new();
                for m in 0..*n_months {
                    for (i, j, v) in q_spline.triplets() {
                        if i <= j {
                            acc.add(m * n_basis + i, m * n_basis + j, v);
                        }
                    }
                }
                for (m1, m2, v) in rw.triplets() {
                    if m1 <= m2 {
                        for b in 0..*n_basis {
                            acc.add(m1 * n_basis + b, m2 * n_basis + b, v);
                        }
                    }
                }
                Ok(acc.build(self.len))
            }
        }
    }
}

fn ensure_positive(v: f64, what: &str) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(EmberError::InvalidInput(format!(
            "{what} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

fn rw1_matrix(k: usize, tau: f64) -> CsrMatrix {
    let mut acc = SymTripletAcc::new();
    for i in 0..k {
        let d = if i == 0 || i == k - 1 { 1.0 } else { 2.0 };
        acc.add(i, i, tau * d);
        if i + 1 < k {
            acc.add(i, i + 1, -tau);
        }
    }
    acc.build(k)
}

/// One design-row entry: latent index, basis weight, and the hyper slot of
/// a sharing coefficient when the entry is β-scaled (-1 otherwise).
#[derive(Debug, Clone, Copy)]
pub(crate) struct DesignEntry {
    pub idx: u32,
    pub weight: f64,
    pub scale_slot: i32,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct DesignRows {
    indptr: Vec<usize>,
    entries: Vec<DesignEntry>,
}

impl DesignRows {
    pub fn new() -> Self {
        DesignRows {
            indptr: vec![0],
            entries: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<DesignEntry>) {
        self.entries.extend(row);
        self.indptr.push(self.entries.len());
    }

    pub fn row(&self, i: usize) -> &[DesignEntry] {
        &self.entries[self.indptr[i]..self.indptr[i + 1]]
    }
}

/// Observations of one component.
#[derive(Debug, Clone)]
pub struct ObsSet {
    pub component: Component,
    pub family: Family,
    pub y: Vec<f64>,
    pub weight: Vec<f64>,
    pub offset: Vec<f64>,
    pub(crate) rows: DesignRows,
}

impl ObsSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone)]
pub(crate) enum EffectDesign {
    Intercept {
        block: usize,
    },
    Linear {
        block: usize,
        covariate: LinearCovariate,
    },
    CellIid {
        block: usize,
    },
    Spatial {
        block: usize,
    },
    Spline {
        block: usize,
        covariate: Covariate,
    },
    YearRw1 {
        block: usize,
    },
    MonthRw1 {
        block: usize,
    },
    FwiByMonth {
        block: usize,
        n_basis: usize,
    },
}

#[derive(Debug, Clone, Default)]
pub(crate) struct ComponentDesign {
    pub effects: Vec<(EffectDesign, i32)>,
}

/// The assembled joint model.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub spec: ModelSpec,
    pub blocks: Vec<LatentBlock>,
    pub obs: Vec<ObsSet>,
    pub hyper_template: Hyperparameters,
    pub n_latent: usize,
    pub threshold: f64,
    pub(crate) constraints: Vec<Vec<f64>>,
    pub(crate) designs: BTreeMap<Component, ComponentDesign>,
    pub(crate) spatial_rows: HashMap<u64, Vec<(u32, f64)>>,
    pub(crate) cell_index: HashMap<u64, usize>,
    pub(crate) years: Vec<i32>,
    pub(crate) season: Season,
    pub(crate) fwi_knots: Vec<f64>,
    pub(crate) fa_knots: Vec<f64>,
}

impl LatentModel {
    pub fn block(&self, id: &str) -> Option<&LatentBlock> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn constraints(&self) -> &[Vec<f64>] {
        &self.constraints
    }

    pub fn fwi_knots(&self) -> &[f64] {
        &self.fwi_knots
    }

    /// Dense prior precision at given hyper values (block diagonal).
    pub(crate) fn prior_dense(&self, theta: &Hyperparameters) -> Result<DMatrix<f64>> {
        let mut q = DMatrix::zeros(self.n_latent, self.n_latent);
        for block in &self.blocks {
            let m = block.precision_matrix(theta)?;
            for (i, j, v) in m.triplets() {
                q[(block.offset + i, block.offset + j)] += v;
            }
        }
        Ok(q)
    }

    /// Likelihood hyperparameters resolved from slots.
    pub(crate) fn family_theta(&self, theta: &Hyperparameters) -> FamilyTheta {
        let mut ft = FamilyTheta::default();
        if let Some(v) = theta.get("beta_precision") {
            ft.beta_precision = v;
        }
        if let Some(v) = theta.get("gpd_shape") {
            ft.gpd_shape = v;
        }
        if let Some(v) = theta.get("gamma_precision") {
            ft.gamma_precision = v;
        }
        if let Some(v) = theta.get("lognormal_precision") {
            ft.lognormal_precision = v;
        }
        if let Some(v) = theta.get("gaussian_precision") {
            ft.gaussian_precision = v;
        }
        ft
    }

    fn year_position(&self, year: i32) -> usize {
        match self.years.binary_search(&year) {
            Ok(i) => i,
            // unseen years clamp to the nearest observed level
            Err(0) => 0,
            Err(i) if i >= self.years.len() => self.years.len() - 1,
            Err(i) => {
                if (self.years[i] - year).abs() < (year - self.years[i - 1]).abs() {
                    i
                } else {
                    i - 1
                }
            }
        }
    }

    fn month_position(&self, month: u8) -> usize {
        let m = month
            .clamp(self.season.first_month, self.season.last_month);
        (m - self.season.first_month) as usize
    }

    /// Sparse design row of one pixel-day for one component.
    pub(crate) fn design_row(
        &self,
        component: Component,
        pd: &PixelDay,
    ) -> Result<Vec<DesignEntry>> {
        let design = self.designs.get(&component).ok_or_else(|| {
            EmberError::Model(format!("component {component} is not part of this model"))
        })?;
        let mut row = Vec::with_capacity(16);
        for (effect, scale_slot) in &design.effects {
            let scale_slot = *scale_slot;
            match effect {
                EffectDesign::Intercept { block } => row.push(DesignEntry {
                    idx: self.blocks[*block].offset as u32,
                    weight: 1.0,
                    scale_slot,
                }),
                EffectDesign::Linear { block, covariate } => {
                    let value = match covariate {
                        LinearCovariate::Fwi => pd.fwi,
                        LinearCovariate::Fa => pd.fa,
                        LinearCovariate::Month => pd.month as f64,
                    };
                    row.push(DesignEntry {
                        idx: self.blocks[*block].offset as u32,
                        weight: value,
                        scale_slot,
                    });
                }
                EffectDesign::CellIid { block } => {
                    let ci = *self.cell_index.get(&pd.cell_id).ok_or_else(|| {
                        EmberError::Model(format!(
                            "cell {} was not present at assembly time",
                            pd.cell_id
                        ))
                    })?;
                    row.push(DesignEntry {
                        idx: (self.blocks[*block].offset + ci) as u32,
                        weight: 1.0,
                        scale_slot,
                    });
                }
                EffectDesign::Spatial { block } => {
                    let base = self.blocks[*block].offset as u32;
                    let cells = self.spatial_rows.get(&pd.cell_id).ok_or_else(|| {
                        EmberError::Model(format!(
                            "cell {} has no spatial projection (not seen at assembly)",
                            pd.cell_id
                        ))
                    })?;
                    for &(node, w) in cells {
                        row.push(DesignEntry {
                            idx: base + node,
                            weight: w,
                            scale_slot,
                        });
                    }
                }
                EffectDesign::Spline { block, covariate } => {
                    let (knots, value) = match covariate {
                        Covariate::Fwi => (&self.fwi_knots, pd.fwi),
                        Covariate::Fa => (&self.fa_knots, pd.fa),
                    };
                    let base = self.blocks[*block].offset as u32;
                    for (j, w) in hat_weights(knots, value) {
                        row.push(DesignEntry {
                            idx: base + j as u32,
                            weight: w,
                            scale_slot,
                        });
                    }
                }
                EffectDesign::YearRw1 { block } => row.push(DesignEntry {
                    idx: (self.blocks[*block].offset + self.year_position(pd.year)) as u32,
                    weight: 1.0,
                    scale_slot,
                }),
                EffectDesign::MonthRw1 { block } => row.push(DesignEntry {
                    idx: (self.blocks[*block].offset + self.month_position(pd.month)) as u32,
                    weight: 1.0,
                    scale_slot,
                }),
                EffectDesign::FwiByMonth { block, n_basis } => {
                    let m = self.month_position(pd.month);
                    let base = (self.blocks[*block].offset + m * n_basis) as u32;
                    for (j, w) in hat_weights(&self.fwi_knots, pd.fwi) {
                        row.push(DesignEntry {
                            idx: base + j as u32,
                            weight: w,
                            scale_slot,
                        });
                    }
                }
            }
        }
        Ok(row)
    }

    /// Evaluate a design row against latent values and hyperparameters.
    pub(crate) fn eval_row(
        row: &[DesignEntry],
        x: &DVector<f64>,
        theta: &Hyperparameters,
    ) -> f64 {
        row.iter()
            .map(|e| {
                let scale = if e.scale_slot >= 0 {
                    theta.value(e.scale_slot as usize)
                } else {
                    1.0
                };
                e.weight * scale * x[e.idx as usize]
            })
            .sum()
    }

    /// Linear predictor of a component at arbitrary pixel-days (no offset).
    pub fn component_eta(
        &self,
        component: Component,
        rows: &[PixelDay],
        x: &DVector<f64>,
        theta: &Hyperparameters,
    ) -> Result<Vec<f64>> {
        rows.iter()
            .map(|pd| {
                let row = self.design_row(component, pd)?;
                Ok(Self::eval_row(&row, x, theta))
            })
            .collect()
    }

    /// Draw one latent vector from the prior at given hyper values, with
    /// intercept blocks pinned to supplied constants (default 0).
    pub fn sample_prior_latent(
        &self,
        theta: &Hyperparameters,
        intercepts: &HashMap<String, f64>,
        seed: u64,
    ) -> Result<DVector<f64>> {
        let mut x = DVector::zeros(self.n_latent);
        for (bi, block) in self.blocks.iter().enumerate() {
            if let BlockPrior::FixedGaussian { .. } = block.prior {
                let v = intercepts.get(&block.id).copied().unwrap_or(0.0);
                for k in block.range() {
                    x[k] = v;
                }
                continue;
            }
            let q = block.precision(theta)?;
            let sample = sample_gmrf(&q, 1, derive_seed(seed, bi as u64))?;
            for (k, global) in block.range().enumerate() {
                x[global] = sample[0][k];
            }
        }
        Ok(x)
    }

    /// Design row as plain (index, weight, scale-slot) triples.
    pub fn design_row_public(
        &self,
        component: Component,
        pd: &PixelDay,
    ) -> Result<Vec<(u32, f64, i32)>> {
        Ok(self
            .design_row(component, pd)?
            .into_iter()
            .map(|e| (e.idx, e.weight, e.scale_slot))
            .collect())
    }

    /// Likelihood hyperparameters resolved from slots.
    pub fn family_theta_public(&self, theta: &Hyperparameters) -> FamilyTheta {
        self.family_theta(theta)
    }

    /// Weighted pointwise log-likelihood of every observation at (x, θ).
    pub fn pointwise_log_likelihood(
        &self,
        x: &DVector<f64>,
        theta: &Hyperparameters,
    ) -> Result<Vec<f64>> {
        let ft = self.family_theta(theta);
        let mut out = Vec::new();
        for set in &self.obs {
            for i in 0..set.len() {
                let eta = Self::eval_row(set.rows.row(i), x, theta) + set.offset[i];
                let (v, _, _) = crate::inference::family::component_negloglik(
                    set.family,
                    eta,
                    set.y[i],
                    set.weight[i],
                    &ft,
                )?;
                out.push(-v);
            }
        }
        Ok(out)
    }
}

/// Piecewise-linear basis weights with boundary clamping.
pub(crate) fn hat_weights(knots: &[f64], v: f64) -> Vec<(usize, f64)> {
    let n = knots.len();
    if v <= knots[0] {
        vec![(0, 1.0)]
    } else if v >= knots[n - 1] {
        vec![(n - 1, 1.0)]
    } else {
        let i = knots.partition_point(|&k| k <= v) - 1;
        let t = (v - knots[i]) / (knots[i + 1] - knots[i]);
        if t == 0.0 {
            vec![(i, 1.0)]
        } else {
            vec![(i, 1.0 - t), (i + 1, t)]
        }
    }
}

struct Builder<'a> {
    priors: &'a PriorConfig,
    bases: &'a BasisSet,
    blocks: Vec<LatentBlock>,
    hyper: Hyperparameters,
    offset: usize,
    n_cells: usize,
    n_years: usize,
    n_months: usize,
    fem_fwi: Option<Arc<FemOps>>,
    fem_fa: Option<Arc<FemOps>>,
    fem_mesh: Option<Arc<FemOps>>,
    domain_diameter: f64,
}

impl<'a> Builder<'a> {
    fn add_slot(
        &mut self,
        name: String,
        transform: Transform,
        value: f64,
        free: bool,
        prior: HyperPrior,
    ) -> Result<usize> {
        self.hyper.add(HyperSlot {
            name,
            transform,
            value,
            free,
            prior,
        })
    }

    fn tau_slot(&mut self, id: &str) -> Result<usize> {
        let (shape, rate) = self.priors.rw1_gamma();
        self.add_slot(
            format!("{id}.tau"),
            Transform::Log,
            1.0,
            true,
            HyperPrior::Gamma { shape, rate },
        )
    }

    fn matern_slots(&mut self, id: &str, dim: usize, free: bool) -> Result<(usize, usize)> {
        let (range_init, sd_init) = if dim == 2 {
            (0.3 * self.domain_diameter, 1.0)
        } else {
            (
                self.priors
                    .spline_range
                    .unwrap_or(0.5 * self.knot_span()),
                self.priors.spline_sd,
            )
        };
        let range_prior = if free {
            HyperPrior::PcRange {
                lambda: self.priors.pc_range_lambda(self.domain_diameter, dim),
                dim,
            }
        } else {
            HyperPrior::None
        };
        let sd_prior = if free {
            HyperPrior::PcSd {
                lambda: self.priors.pc_sd_lambda(),
            }
        } else {
            HyperPrior::None
        };
        let r = self.add_slot(
            format!("{id}.range"),
            Transform::Log,
            range_init,
            free,
            range_prior,
        )?;
        let s = self.add_slot(format!("{id}.sd"), Transform::Log, sd_init, free, sd_prior)?;
        Ok((r, s))
    }

    fn knot_span(&self) -> f64 {
        let span = |k: &[f64]| k.last().unwrap() - k.first().unwrap();
        0.5 * (span(&self.bases.fwi_knots) + span(&self.bases.fa_knots))
    }

    fn fem_for(&mut self, covariate: Covariate) -> Result<Arc<FemOps>> {
        let (slot, knots) = match covariate {
            Covariate::Fwi => (&mut self.fem_fwi, &self.bases.fwi_knots),
            Covariate::Fa => (&mut self.fem_fa, &self.bases.fa_knots),
        };
        if slot.is_none() {
            *slot = Some(Arc::new(fem_1d(knots)?));
        }
        Ok(slot.as_ref().unwrap().clone())
    }

    fn push_block(&mut self, id: &str, len: usize, prior: BlockPrior, constraints: Vec<Vec<f64>>) {
        self.blocks.push(LatentBlock {
            id: id.to_string(),
            offset: self.offset,
            len,
            prior,
            constraints,
        });
        self.offset += len;
    }

    fn add_effect_block(&mut self, id: &str, kind: EffectKind) -> Result<usize> {
        match kind {
            EffectKind::Intercept | EffectKind::Linear(_) => {
                self.push_block(
                    id,
                    1,
                    BlockPrior::FixedGaussian {
                        precision: self.priors.fixed_effect_precision,
                    },
                    vec![],
                );
            }
            EffectKind::CellIid => {
                let tau = self.tau_slot(id)?;
                self.push_block(id, self.n_cells, BlockPrior::Iid { tau }, vec![]);
            }
            EffectKind::Spatial => {
                let fem = self.fem_mesh.clone().ok_or_else(|| {
                    EmberError::Model(format!("effect `{id}` needs a 2D mesh in the basis set"))
                })?;
                let (range, sd) = self.matern_slots(id, 2, true)?;
                let len = fem.dim();
                self.push_block(id, len, BlockPrior::Spde2d { fem, range, sd }, vec![]);
            }
            EffectKind::Spline(covariate) => {
                let fem = self.fem_for(covariate)?;
                let (range, sd) = self.matern_slots(id, 1, false)?;
                let len = fem.dim();
                let knots = match covariate {
                    Covariate::Fwi => &self.bases.fwi_knots,
                    Covariate::Fa => &self.bases.fa_knots,
                };
                // FWI splines pin the effect to zero at covariate value 0;
                // FA splines are centred by a sum-to-zero constraint
                let constraint = match covariate {
                    Covariate::Fwi => {
                        let mut row = vec![0.0; len];
                        for (j, w) in hat_weights(knots, 0.0) {
                            row[j] = w;
                        }
                        row
                    }
                    Covariate::Fa => vec![1.0; len],
                };
                self.push_block(
                    id,
                    len,
                    BlockPrior::Spde1d { fem, range, sd },
                    vec![constraint],
                );
            }
            EffectKind::YearRw1 => {
                if self.n_years < 2 {
                    return Err(EmberError::Model(format!(
                        "effect `{id}` needs at least 2 observed years"
                    )));
                }
                let tau = self.tau_slot(id)?;
                self.push_block(
                    id,
                    self.n_years,
                    BlockPrior::Rw1 { tau },
                    vec![vec![1.0; self.n_years]],
                );
            }
            EffectKind::MonthRw1 => {
                if self.n_months < 2 {
                    return Err(EmberError::Model(format!(
                        "effect `{id}` needs a season of at least 2 months"
                    )));
                }
                let tau = self.tau_slot(id)?;
                self.push_block(
                    id,
                    self.n_months,
                    BlockPrior::Rw1 { tau },
                    vec![vec![1.0; self.n_months]],
                );
            }
            EffectKind::FwiByMonth => {
                if self.n_months < 2 {
                    return Err(EmberError::Model(format!(
                        "effect `{id}` needs a season of at least 2 months"
                    )));
                }
                let fem = self.fem_for(Covariate::Fwi)?;
                let (range, sd) = self.matern_slots(id, 1, false)?;
                let tau = self.tau_slot(id)?;
                let n_basis = fem.dim();
                let n_months = self.n_months;
                let len = n_basis * n_months;
                // each month's spline is pinned to zero at FWI = 0, leaving
                // the month level to the separate month effect
                let mut constraints = Vec::with_capacity(n_months);
                for m in 0..n_months {
                    let mut row = vec![0.0; len];
                    for (j, w) in hat_weights(&self.bases.fwi_knots, 0.0) {
                        row[m * n_basis + j] = w;
                    }
                    constraints.push(row);
                }
                self.push_block(
                    id,
                    len,
                    BlockPrior::FwiByMonth {
                        fem,
                        range,
                        sd,
                        tau,
                        n_months,
                        n_basis,
                    },
                    constraints,
                );
            }
        }
        Ok(self.blocks.len() - 1)
    }
}

/// Assemble the joint latent model over a marked dataset.
///
/// COX observations are the weighted subsample rows; BIN observations are
/// all events; BETA/GPD split the events by the exceedance indicator; SIZE
/// covers all events under a single family.
pub fn assemble_model(
    spec: &ModelSpec,
    data: &MarkedDataset,
    subsample: &WeightedSubsample,
    bases: &BasisSet,
    priors: &PriorConfig,
) -> Result<LatentModel> {
    spec.validate()?;
    let table = data.table();
    if table.is_empty() {
        return Err(EmberError::Model("pixel-day table is empty".into()));
    }

    // levels
    let mut years: Vec<i32> = table.rows().iter().map(|r| r.year).collect();
    years.sort_unstable();
    years.dedup();
    let season = table.season();
    let n_months = season.n_months();

    let mut cells: BTreeMap<u64, [f64; 2]> = BTreeMap::new();
    for r in table.rows() {
        cells.entry(r.cell_id).or_insert([r.x_km, r.y_km]);
    }
    let cell_index: HashMap<u64, usize> = cells.keys().enumerate().map(|(i, &c)| (c, i)).collect();

    // domain diameter from cell centroids
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for c in cells.values() {
        xmin = xmin.min(c[0]);
        xmax = xmax.max(c[0]);
        ymin = ymin.min(c[1]);
        ymax = ymax.max(c[1]);
    }
    let domain_diameter = ((xmax - xmin).hypot(ymax - ymin)).max(1e-6);

    let needs_mesh = spec
        .components
        .iter()
        .any(|c| c.effects.iter().any(|e| e.kind == EffectKind::Spatial))
        || !spec.shared.is_empty();
    let fem_mesh = match (&bases.mesh, needs_mesh) {
        (Some(mesh), _) => Some(Arc::new(fem_2d(mesh))),
        (None, true) => {
            return Err(EmberError::Model(
                "model has spatial effects but the basis set has no mesh".into(),
            ))
        }
        (None, false) => None,
    };

    let mut builder = Builder {
        priors,
        bases,
        blocks: Vec::new(),
        hyper: Hyperparameters::new(),
        offset: 0,
        n_cells: cells.len(),
        n_years: years.len(),
        n_months,
        fem_fwi: None,
        fem_fa: None,
        fem_mesh,
        domain_diameter,
    };

    // family hyperparameters
    let (pshape, prate) = priors.precision_gamma();
    if spec.has_component(Component::Beta) {
        builder.add_slot(
            "beta_precision".into(),
            Transform::Log,
            2.0,
            true,
            HyperPrior::Gamma {
                shape: pshape,
                rate: prate,
            },
        )?;
    }
    if spec.has_component(Component::Gpd) {
        builder.add_slot(
            "gpd_shape".into(),
            Transform::Log,
            0.5,
            true,
            HyperPrior::Exponential {
                rate: priors.gpd_shape_rate,
            },
        )?;
    }
    if let Some(size) = spec.component(Component::Size) {
        let name = match size.family {
            Family::Gamma => "gamma_precision",
            Family::LogNormal => "lognormal_precision",
            Family::Gaussian => "gaussian_precision",
            _ => unreachable!("validated"),
        };
        builder.add_slot(
            name.into(),
            Transform::Log,
            1.0,
            true,
            HyperPrior::Gamma {
                shape: pshape,
                rate: prate,
            },
        )?;
    }

    // component-specific blocks
    let mut designs: BTreeMap<Component, ComponentDesign> = BTreeMap::new();
    for cs in &spec.components {
        let mut design = ComponentDesign::default();
        for effect in &cs.effects {
            let block = builder.add_effect_block(&effect.id, effect.kind)?;
            let ed = match effect.kind {
                EffectKind::Intercept => EffectDesign::Intercept { block },
                EffectKind::Linear(covariate) => EffectDesign::Linear { block, covariate },
                EffectKind::CellIid => EffectDesign::CellIid { block },
                EffectKind::Spatial => EffectDesign::Spatial { block },
                EffectKind::Spline(covariate) => EffectDesign::Spline { block, covariate },
                EffectKind::YearRw1 => EffectDesign::YearRw1 { block },
                EffectKind::MonthRw1 => EffectDesign::MonthRw1 { block },
                EffectKind::FwiByMonth => EffectDesign::FwiByMonth {
                    block,
                    n_basis: builder.bases.fwi_knots.len(),
                },
            };
            design.effects.push((ed, -1));
        }
        designs.insert(cs.component, design);
    }

    // shared spatial fields
    for shared in &spec.shared {
        let block = builder.add_effect_block(&shared.id, EffectKind::Spatial)?;
        let beta = builder.add_slot(
            format!("beta.{}", shared.id),
            Transform::Identity,
            0.0,
            true,
            HyperPrior::Gaussian {
                mean: 0.0,
                precision: priors.sharing_precision,
            },
        )?;
        designs
            .get_mut(&shared.unscaled_in)
            .expect("validated component")
            .effects
            .push((EffectDesign::Spatial { block }, -1));
        designs
            .get_mut(&shared.scaled_in)
            .expect("validated component")
            .effects
            .push((EffectDesign::Spatial { block }, beta as i32));
    }

    // spatial projection rows per cell
    let spatial_rows: HashMap<u64, Vec<(u32, f64)>> = if let Some(mesh) = &bases.mesh {
        let centroids: Vec<[f64; 2]> = cells.values().copied().collect();
        let proj = projector_2d(mesh, &centroids)
            .map_err(|e| e.in_stage("projecting cell centroids onto the mesh"))?;
        cells
            .keys()
            .enumerate()
            .map(|(i, &cell)| {
                (
                    cell,
                    proj.row(i)
                        .iter()
                        .map(|&(j, w)| (j as u32, w))
                        .collect::<Vec<_>>(),
                )
            })
            .collect()
    } else {
        HashMap::new()
    };

    // global constraint rows
    let n_latent = builder.offset;
    let mut constraints = Vec::new();
    for block in &builder.blocks {
        for local in &block.constraints {
            let mut row = vec![0.0; n_latent];
            row[block.offset..block.offset + block.len].copy_from_slice(local);
            constraints.push(row);
        }
    }

    let mut model = LatentModel {
        spec: spec.clone(),
        blocks: builder.blocks,
        obs: Vec::new(),
        hyper_template: builder.hyper,
        n_latent,
        threshold: data.threshold(),
        constraints,
        designs,
        spatial_rows,
        cell_index,
        years,
        season,
        fwi_knots: bases.fwi_knots.clone(),
        fa_knots: bases.fa_knots.clone(),
    };

    // observation sets
    let mut obs = Vec::new();
    for cs in &spec.components {
        let mut set = ObsSet {
            component: cs.component,
            family: cs.family,
            y: Vec::new(),
            weight: Vec::new(),
            offset: Vec::new(),
            rows: DesignRows::new(),
        };
        match cs.component {
            Component::Cox => {
                for srow in subsample.rows() {
                    if srow.row >= table.len() {
                        return Err(EmberError::Model(format!(
                            "subsample references row {} outside the table",
                            srow.row
                        )));
                    }
                    let pd = &table.rows()[srow.row];
                    set.y.push(pd.count as f64);
                    set.weight.push(srow.weight);
                    set.offset.push(pd.volume.ln());
                    set.rows.push_row(model.design_row(Component::Cox, pd)?);
                }
            }
            Component::Bin => {
                for ev in data.events() {
                    let pd = &table.rows()[ev.row];
                    set.y.push(if ev.exceeds { 1.0 } else { 0.0 });
                    set.weight.push(1.0);
                    set.offset.push(0.0);
                    set.rows.push_row(model.design_row(Component::Bin, pd)?);
                }
            }
            Component::Beta => {
                for ev in data.events().iter().filter(|e| !e.exceeds) {
                    let pd = &table.rows()[ev.row];
                    set.y
                        .push(transform_moderate_mark(ev.event.burnt_area_ha, data.threshold())?);
                    set.weight.push(1.0);
                    set.offset.push(0.0);
                    set.rows.push_row(model.design_row(Component::Beta, pd)?);
                }
            }
            Component::Gpd => {
                for ev in data.events().iter().filter(|e| e.exceeds) {
                    let pd = &table.rows()[ev.row];
                    set.y.push(ev.event.burnt_area_ha - data.threshold());
                    set.weight.push(1.0);
                    set.offset.push(0.0);
                    set.rows.push_row(model.design_row(Component::Gpd, pd)?);
                }
            }
            Component::Size => {
                for ev in data.events() {
                    let pd = &table.rows()[ev.row];
                    let y = match cs.family {
                        Family::Gamma | Family::LogNormal | Family::Gaussian => {
                            ev.event.burnt_area_ha
                        }
                        _ => unreachable!("validated"),
                    };
                    set.y.push(y);
                    set.weight.push(1.0);
                    set.offset.push(0.0);
                    set.rows.push_row(model.design_row(Component::Size, pd)?);
                }
            }
        }
        obs.push(set);
    }
    model.obs = obs;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_data::attach_marks;
    use crate::inference::spec::{ComponentSpec, Effect, ModelLabel};
    use crate::subsample::{stratified_subsample, SubsampleConfig};

    pub(crate) fn synthetic_dataset(
        n_cells_side: usize,
        n_days: usize,
    ) -> (MarkedDataset, WeightedSubsample) {
        let mut rows = Vec::new();
        for cx in 0..n_cells_side {
            for cy in 0..n_cells_side {
                for d in 0..n_days {
                    let cell_id = (cx * n_cells_side + cy) as u64;
                    rows.push(PixelDay {
                        cell_id,
                        day_index: d as u32,
                        year: 2000 + (d / 153) as i32,
                        month: 6 + ((d / 31) % 5) as u8,
                        x_km: cx as f64 * 8.0,
                        y_km: cy as f64 * 8.0,
                        fwi: ((cell_id as f64 * 13.7 + d as f64 * 3.1) % 50.0),
                        fa: ((cell_id as f64 * 7.3) % 100.0),
                        count: 0,
                        volume: 64.0,
                    });
                }
            }
        }
        // deterministically seed a few events
        let mut events = Vec::new();
        let mut fire_id = 1;
        for (i, r) in rows.iter_mut().enumerate() {
            if i % 97 == 0 {
                r.count = 1;
                events.push(crate::grid_data::FireEvent {
                    fire_id,
                    cell_id: r.cell_id,
                    day_index: r.day_index,
                    burnt_area_ha: if i % 3 == 0 { 120.0 } else { 7.5 },
                });
                fire_id += 1;
            }
        }
        let table = PixelDayTable::new(rows, Season::default()).unwrap();
        let data = attach_marks(table, events, 79.0).unwrap();
        let ss = stratified_subsample(
            data.table(),
            &SubsampleConfig {
                seed: 5,
                ..SubsampleConfig::default()
            },
        )
        .unwrap();
        (data, ss)
    }

    fn mesh_for(data: &MarkedDataset) -> Arc<Mesh2D> {
        let rows = data.table().rows();
        let (mut xmin, mut xmax, mut ymin, mut ymax) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for r in rows {
            xmin = xmin.min(r.x_km);
            xmax = xmax.max(r.x_km);
            ymin = ymin.min(r.y_km);
            ymax = ymax.max(r.y_km);
        }
        Arc::new(
            crate::gmrf::build_mesh_2d(
                &crate::gmrf::rectangle(xmin - 1.0, ymin - 1.0, xmax + 1.0, ymax + 1.0),
                &crate::gmrf::MeshOptions {
                    interior_edge: 12.0,
                    exterior_edge: 24.0,
                    extension: 24.0,
                },
            )
            .unwrap(),
        )
    }

    #[test]
    fn intercept_only_cox_has_latent_dimension_one() {
        let (data, ss) = synthetic_dataset(3, 40);
        let spec = ModelSpec {
            components: vec![ComponentSpec {
                component: Component::Cox,
                family: Family::Poisson,
                effects: vec![Effect::new("cox_intercept", EffectKind::Intercept)],
            }],
            shared: vec![],
        };
        let bases = BasisSet::from_table(data.table(), None, 4);
        let model = assemble_model(&spec, &data, &ss, &bases, &PriorConfig::default()).unwrap();
        assert_eq!(model.n_latent, 1);
        assert_eq!(model.obs.len(), 1);
        assert_eq!(model.obs[0].len(), ss.len());
    }

    #[test]
    fn m1_block_dimensions_follow_the_bases() {
        let (data, ss) = synthetic_dataset(4, 320);
        let mesh = mesh_for(&data);
        let bases = BasisSet::from_table(data.table(), Some(mesh.clone()), 4);
        let spec = ModelSpec::preset(ModelLabel::M1);
        let model = assemble_model(&spec, &data, &ss, &bases, &PriorConfig::default()).unwrap();
        // spatial blocks take the mesh dimension, one per shared field
        for id in ["shared_cox_beta", "shared_cox_bin", "shared_bin_gpd"] {
            assert_eq!(model.block(id).unwrap().len, mesh.n_nodes());
        }
        // iid block spans the grid cells
        assert_eq!(model.block("cox_cell").unwrap().len, 16);
        // FWI×month interaction: 4 knots × 5 months
        assert_eq!(model.block("cox_fwi_month").unwrap().len, 20);
        // constraint rows: FWI splines (3) + FA splines (4) + year RW1 (3)
        // + month RW1 (1) + 5 FWI×month rows
        assert!(model.constraints().len() >= 12);
        let free = model.hyper_template.free_indices();
        assert!(!free.is_empty());
        // sharing coefficients registered
        assert!(model.hyper_template.get("beta.shared_cox_bin").is_some());
    }

    #[test]
    fn missing_mesh_is_an_assembly_error() {
        let (data, ss) = synthetic_dataset(3, 40);
        let bases = BasisSet::from_table(data.table(), None, 4);
        let spec = ModelSpec::preset(ModelLabel::M1);
        let err = assemble_model(&spec, &data, &ss, &bases, &PriorConfig::default()).unwrap_err();
        assert!(matches!(err, EmberError::Model(_)));
    }

    #[test]
    fn design_rows_reference_valid_latents() {
        let (data, ss) = synthetic_dataset(3, 320);
        let mesh = mesh_for(&data);
        let bases = BasisSet::from_table(data.table(), Some(mesh), 4);
        let spec = ModelSpec::preset(ModelLabel::M1);
        let model = assemble_model(&spec, &data, &ss, &bases, &PriorConfig::default()).unwrap();
        for set in &model.obs {
            for i in 0..set.len() {
                for e in set.rows.row(i) {
                    assert!((e.idx as usize) < model.n_latent);
                    assert!(e.weight.is_finite());
                    if e.scale_slot >= 0 {
                        assert!((e.scale_slot as usize) < model.hyper_template.len());
                    }
                }
            }
        }
        // prior assembles and factors at the template values
        let qp = model.prior_dense(&model.hyper_template).unwrap();
        let factor =
            crate::gmrf::PrecisionFactor::of_dense(qp, model.constraints()).unwrap();
        assert_eq!(factor.dim(), model.n_latent);
    }

    #[test]
    fn prior_latent_samples_respect_intercept_pins() {
        let (data, ss) = synthetic_dataset(3, 320);
        let mesh = mesh_for(&data);
        let bases = BasisSet::from_table(data.table(), Some(mesh), 4);
        let model = assemble_model(
            &ModelSpec::preset(ModelLabel::M1),
            &data,
            &ss,
            &bases,
            &PriorConfig::default(),
        )
        .unwrap();
        let mut pins = HashMap::new();
        pins.insert("cox_intercept".to_string(), -11.0);
        let x = model
            .sample_prior_latent(&model.hyper_template, &pins, 3)
            .unwrap();
        let b = model.block("cox_intercept").unwrap();
        assert_eq!(x[b.offset], -11.0);
        // constrained blocks satisfy their constraints
        let year = model.block("cox_year").unwrap();
        let s: f64 = x.as_slice()[year.offset..year.offset + year.len].iter().sum();
        assert!(s.abs() < 1e-8);
    }
}
