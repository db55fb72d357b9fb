//! Declarative model specifications: regression components, their effects,
//! and sharing links between components.

use std::fmt;
use std::str::FromStr;

use crate::error::{EmberError, Result};

/// Regression components of the joint model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    /// Occurrence counts (log-Gaussian Cox process).
    Cox,
    /// Exceedance indicators (thinning of the point pattern).
    Bin,
    /// Moderate mark sizes on (0, 1).
    Beta,
    /// Extreme mark excesses above the threshold.
    Gpd,
    /// Single-family size models without the mixture split.
    Size,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Component::Cox => "COX",
            Component::Bin => "BIN",
            Component::Beta => "BETA",
            Component::Gpd => "GPD",
            Component::Size => "SIZE",
        };
        f.write_str(s)
    }
}

/// Observation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Poisson,
    Bernoulli,
    Beta,
    Gpd,
    Gamma,
    LogNormal,
    /// Identity-link Gaussian; available for SIZE-style custom models and
    /// exactness checks.
    Gaussian,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Poisson => "poisson",
            Family::Bernoulli => "bernoulli",
            Family::Beta => "beta",
            Family::Gpd => "gpd",
            Family::Gamma => "gamma",
            Family::LogNormal => "lognormal",
            Family::Gaussian => "gaussian",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Covariate {
    Fwi,
    Fa,
}

/// Covariates usable as plain linear fixed effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearCovariate {
    Fwi,
    Fa,
    /// Calendar month number.
    Month,
}

impl fmt::Display for LinearCovariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinearCovariate::Fwi => "fwi",
            LinearCovariate::Fa => "fa",
            LinearCovariate::Month => "month",
        })
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Covariate::Fwi => "fwi",
            Covariate::Fa => "fa",
        })
    }
}

/// Latent effect types available to a component's linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectKind {
    Intercept,
    /// Linear fixed effect of a covariate.
    Linear(LinearCovariate),
    /// Independent N(0, 1/τ) level per grid cell.
    CellIid,
    /// Component-specific Matérn field evaluated at cell centroids.
    Spatial,
    /// 1D spline effect of a covariate.
    Spline(Covariate),
    /// First-order random walk over years.
    YearRw1,
    /// First-order random walk over season months.
    MonthRw1,
    /// Per-month FWI splines tied across months by a random walk.
    FwiByMonth,
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EffectKind::Intercept => f.write_str("intercept"),
            EffectKind::Linear(c) => write!(f, "linear({c})"),
            EffectKind::CellIid => f.write_str("cell_iid"),
            EffectKind::Spatial => f.write_str("spatial"),
            EffectKind::Spline(c) => write!(f, "spline({c})"),
            EffectKind::YearRw1 => f.write_str("year_rw1"),
            EffectKind::MonthRw1 => f.write_str("month_rw1"),
            EffectKind::FwiByMonth => f.write_str("fwi_by_month"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Effect {
    pub id: String,
    pub kind: EffectKind,
}

impl Effect {
    pub fn new(id: &str, kind: EffectKind) -> Self {
        Effect {
            id: id.to_string(),
            kind,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComponentSpec {
    pub component: Component,
    pub family: Family,
    pub effects: Vec<Effect>,
}

/// A spatial field included in two components: unscaled in `unscaled_in`
/// and multiplied by an estimated coefficient β in `scaled_in`.
#[derive(Debug, Clone)]
pub struct SharedEffect {
    pub id: String,
    pub scaled_in: Component,
    pub unscaled_in: Component,
}

/// Built-in model presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelLabel {
    /// Full model: mixture sizes, monthly FWI variation, three shared fields.
    M1,
    /// M1 without spatial effects in the size/extreme components.
    M2,
    /// M2 without monthly FWI variation.
    M3,
    /// Log-normal single-family size process with a shared spatial field.
    M4,
    /// Gamma single-family size process with a shared spatial field.
    M5,
}

impl FromStr for ModelLabel {
    type Err = EmberError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M1" => Ok(ModelLabel::M1),
            "M2" => Ok(ModelLabel::M2),
            "M3" => Ok(ModelLabel::M3),
            "M4" => Ok(ModelLabel::M4),
            "M5" => Ok(ModelLabel::M5),
            other => Err(EmberError::Model(format!("unknown model label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub components: Vec<ComponentSpec>,
    pub shared: Vec<SharedEffect>,
}

impl ModelSpec {
    pub fn component(&self, c: Component) -> Option<&ComponentSpec> {
        self.components.iter().find(|cs| cs.component == c)
    }

    pub fn has_component(&self, c: Component) -> bool {
        self.component(c).is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for cs in &self.components {
            if !seen.insert(cs.component) {
                return Err(EmberError::Model(format!(
                    "component {} declared twice",
                    cs.component
                )));
            }
            let expected = match cs.component {
                Component::Cox => Some(Family::Poisson),
                Component::Bin => Some(Family::Bernoulli),
                Component::Beta => Some(Family::Beta),
                Component::Gpd => Some(Family::Gpd),
                Component::Size => None,
            };
            if let Some(fam) = expected {
                if cs.family != fam {
                    return Err(EmberError::Model(format!(
                        "component {} requires the {fam} family",
                        cs.component
                    )));
                }
            } else if !matches!(
                cs.family,
                Family::Gamma | Family::LogNormal | Family::Gaussian
            ) {
                return Err(EmberError::Model(
                    "SIZE supports the gamma, lognormal and gaussian families".into(),
                ));
            }
        }
        if self.has_component(Component::Size)
            && (self.has_component(Component::Bin)
                || self.has_component(Component::Beta)
                || self.has_component(Component::Gpd))
        {
            return Err(EmberError::Model(
                "SIZE is an alternative to the BIN/BETA/GPD mixture; they cannot coexist".into(),
            ));
        }
        let mut ids = std::collections::HashSet::new();
        for cs in &self.components {
            for e in &cs.effects {
                if !ids.insert(e.id.clone()) {
                    return Err(EmberError::Model(format!("duplicate effect id `{}`", e.id)));
                }
            }
        }
        for s in &self.shared {
            if !ids.insert(s.id.clone()) {
                return Err(EmberError::Model(format!("duplicate effect id `{}`", s.id)));
            }
            if s.scaled_in == s.unscaled_in {
                return Err(EmberError::Model(format!(
                    "shared effect `{}` links a component to itself",
                    s.id
                )));
            }
            for c in [s.scaled_in, s.unscaled_in] {
                if !self.has_component(c) {
                    return Err(EmberError::Model(format!(
                        "shared effect `{}` references component {c} absent from the model",
                        s.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical text form used for digests.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        let mut comps = self.components.clone();
        comps.sort_by_key(|c| c.component);
        for cs in &comps {
            out.push_str(&format!("{}:{}[", cs.component, cs.family));
            for e in &cs.effects {
                out.push_str(&format!("{}={};", e.id, e.kind));
            }
            out.push_str("]\n");
        }
        let mut shared = self.shared.clone();
        shared.sort_by(|a, b| a.id.cmp(&b.id));
        for s in &shared {
            out.push_str(&format!(
                "shared:{}=({}<-{})\n",
                s.id, s.scaled_in, s.unscaled_in
            ));
        }
        out
    }

    /// Build one of the preset specifications.
    pub fn preset(label: ModelLabel) -> ModelSpec {
        use Component::*;
        use EffectKind::*;

        let cox_full = |fwi_by_month: bool| {
            let mut effects = vec![
                Effect::new("cox_intercept", Intercept),
                Effect::new("cox_cell", CellIid),
                Effect::new("cox_fa", Spline(Covariate::Fa)),
                Effect::new("cox_year", YearRw1),
                Effect::new("cox_month", MonthRw1),
            ];
            if fwi_by_month {
                effects.insert(2, Effect::new("cox_fwi_month", FwiByMonth));
            } else {
                effects.insert(2, Effect::new("cox_fwi", Spline(Covariate::Fwi)));
            }
            ComponentSpec {
                component: Cox,
                family: Family::Poisson,
                effects,
            }
        };
        let bin = ComponentSpec {
            component: Bin,
            family: Family::Bernoulli,
            effects: vec![
                Effect::new("bin_intercept", Intercept),
                Effect::new("bin_fwi", Spline(Covariate::Fwi)),
                Effect::new("bin_fa", Spline(Covariate::Fa)),
                Effect::new("bin_year", YearRw1),
            ],
        };
        let beta = ComponentSpec {
            component: Beta,
            family: Family::Beta,
            effects: vec![
                Effect::new("beta_intercept", Intercept),
                Effect::new("beta_fwi", Spline(Covariate::Fwi)),
                Effect::new("beta_fa", Spline(Covariate::Fa)),
            ],
        };
        let gpd = ComponentSpec {
            component: Gpd,
            family: Family::Gpd,
            effects: vec![
                Effect::new("gpd_intercept", Intercept),
                Effect::new("gpd_fwi", Spline(Covariate::Fwi)),
                Effect::new("gpd_fa", Spline(Covariate::Fa)),
                Effect::new("gpd_year", YearRw1),
            ],
        };
        let size = |family: Family| ComponentSpec {
            component: Size,
            family,
            effects: vec![
                Effect::new("size_intercept", Intercept),
                Effect::new("size_spatial", Spatial),
                Effect::new("size_fwi", Spline(Covariate::Fwi)),
                Effect::new("size_fa", Spline(Covariate::Fa)),
                Effect::new("size_year", YearRw1),
            ],
        };

        match label {
            ModelLabel::M1 => ModelSpec {
                components: vec![cox_full(true), bin, beta, gpd],
                shared: vec![
                    SharedEffect {
                        id: "shared_cox_beta".into(),
                        scaled_in: Cox,
                        unscaled_in: Beta,
                    },
                    SharedEffect {
                        id: "shared_cox_bin".into(),
                        scaled_in: Cox,
                        unscaled_in: Bin,
                    },
                    SharedEffect {
                        id: "shared_bin_gpd".into(),
                        scaled_in: Bin,
                        unscaled_in: Gpd,
                    },
                ],
            },
            ModelLabel::M2 => ModelSpec {
                components: vec![cox_full(true), bin, beta, gpd],
                shared: vec![],
            },
            ModelLabel::M3 => ModelSpec {
                components: vec![cox_full(false), bin, beta, gpd],
                shared: vec![],
            },
            ModelLabel::M4 | ModelLabel::M5 => {
                let family = if label == ModelLabel::M4 {
                    Family::LogNormal
                } else {
                    Family::Gamma
                };
                ModelSpec {
                    components: vec![cox_full(true), size(family)],
                    shared: vec![SharedEffect {
                        id: "shared_size_cox".into(),
                        scaled_in: Cox,
                        unscaled_in: Size,
                    }],
                }
            }
        }
    }
}
