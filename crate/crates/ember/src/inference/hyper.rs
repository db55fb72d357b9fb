//! Named hyperparameter registry with transforms, priors and free/fixed
//! status.
//!
//! The outer optimizer works on the transformed scale of the free slots; the
//! hyperprior log-density is always evaluated on the natural scale, so the
//! empirical-Bayes optimum does not depend on the parametrization.

use std::collections::HashMap;

use crate::error::{EmberError, Result};
use crate::special::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Log,
}

impl Transform {
    pub fn to_working(&self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Log => v.ln(),
        }
    }

    pub fn from_working(&self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Log => z.exp(),
        }
    }
}

/// Hyperprior families on the natural scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HyperPrior {
    None,
    Gaussian { mean: f64, precision: f64 },
    /// Exponential(rate); support x ≥ 0.
    Exponential { rate: f64 },
    /// Gamma(shape, rate); support x > 0.
    Gamma { shape: f64, rate: f64 },
    /// Penalized-complexity range prior, P(R ≤ r) = exp(−λ r^{−d/2}).
    PcRange { lambda: f64, dim: usize },
    /// Penalized-complexity standard-deviation prior, exponential with rate λ.
    PcSd { lambda: f64 },
}

impl HyperPrior {
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            HyperPrior::None => 0.0,
            HyperPrior::Gaussian { mean, precision } => {
                0.5 * (precision.ln() - (2.0 * std::f64::consts::PI).ln())
                    - 0.5 * precision * (x - mean) * (x - mean)
            }
            HyperPrior::Exponential { rate } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    rate.ln() - rate * x
                }
            }
            HyperPrior::Gamma { shape, rate } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
                }
            }
            HyperPrior::PcRange { lambda, dim } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let d2 = dim as f64 / 2.0;
                    d2.ln() + lambda.ln() - (d2 + 1.0) * x.ln() - lambda * x.powf(-d2)
                }
            }
            HyperPrior::PcSd { lambda } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    lambda.ln() - lambda * x
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperSlot {
    pub name: String,
    pub transform: Transform,
    pub value: f64,
    pub free: bool,
    pub prior: HyperPrior,
}

/// Ordered, name-indexed hyperparameter set.
#[derive(Debug, Clone, Default)]
pub struct Hyperparameters {
    slots: Vec<HyperSlot>,
    by_name: HashMap<String, usize>,
}

impl Hyperparameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, slot: HyperSlot) -> Result<usize> {
        if self.by_name.contains_key(&slot.name) {
            return Err(EmberError::Model(format!(
                "hyperparameter `{}` registered twice",
                slot.name
            )));
        }
        let idx = self.slots.len();
        self.by_name.insert(slot.name.clone(), idx);
        self.slots.push(slot);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[HyperSlot] {
        &self.slots
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.slots[idx].value
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.slots[i].value)
    }

    pub fn set_value(&mut self, name: &str, value: f64) -> Result<()> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| EmberError::Model(format!("unknown hyperparameter `{name}`")))?;
        self.slots[idx].value = value;
        Ok(())
    }

    pub fn set_prior(&mut self, name: &str, prior: HyperPrior) -> Result<()> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| EmberError::Model(format!("unknown hyperparameter `{name}`")))?;
        self.slots[idx].prior = prior;
        Ok(())
    }

    pub fn set_free(&mut self, name: &str, free: bool) -> Result<()> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| EmberError::Model(format!("unknown hyperparameter `{name}`")))?;
        self.slots[idx].free = free;
        Ok(())
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.slots.len())
            .filter(|&i| self.slots[i].free)
            .collect()
    }

    /// Free values on the working (transformed) scale.
    pub fn free_working(&self) -> Vec<f64> {
        self.free_indices()
            .iter()
            .map(|&i| self.slots[i].transform.to_working(self.slots[i].value))
            .collect()
    }

    /// Clone with free slots updated from working-scale values.
    pub fn with_free_working(&self, z: &[f64]) -> Hyperparameters {
        let mut out = self.clone();
        for (&i, &zi) in self.free_indices().iter().zip(z) {
            out.slots[i].value = out.slots[i].transform.from_working(zi);
        }
        out
    }

    /// Sum of hyperprior log-densities on the natural scale.
    pub fn log_prior_density(&self) -> f64 {
        self.slots
            .iter()
            .map(|s| s.prior.log_density(s.value))
            .sum()
    }
}
