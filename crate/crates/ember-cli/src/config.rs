//! Flat key=value run configuration with section prefixes.
//!
//! Lines are `section.key=value`; `#` starts a comment. Unknown keys are
//! rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ember::grid_data::Season;
use ember::inference::{ModelLabel, PriorConfig};
use ember::subsample::SubsampleConfig;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub raw: BTreeMap<String, String>,
    pub config_digest: [u8; 32],
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut raw = BTreeMap::new();
        for (lineno, line) in String::from_utf8_lossy(&bytes).lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key=value, got `{line}`", lineno + 1);
            };
            let key = key.trim().to_string();
            if raw.insert(key.clone(), value.trim().to_string()).is_some() {
                bail!("config line {}: duplicate key `{key}`", lineno + 1);
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let config_digest: [u8; 32] = hasher.finalize().into();
        Ok(RunConfig {
            raw,
            config_digest,
            base_dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.raw.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .with_context(|| format!("config key `{key}` is required"))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        let raw = self.require(key)?;
        let p = PathBuf::from(raw);
        let p = if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p
        };
        if !p.exists() {
            bail!("{key}: path {} does not exist", p.display());
        }
        Ok(p)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("config key `{key}`: {e}")),
        }
    }

    pub fn parse_opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key `{key}`: {e}")),
        }
    }

    pub fn season(&self) -> Result<Season> {
        Ok(Season {
            first_month: self.parse("season.first_month", 6u8)?,
            last_month: self.parse("season.last_month", 10u8)?,
        })
    }

    pub fn model_label(&self) -> Result<ModelLabel> {
        let raw = self.get("model.label").unwrap_or("M1");
        raw.parse::<ModelLabel>()
            .map_err(|e| anyhow::anyhow!("{e}"))
    }

    pub fn subsample_config(&self, seed: u64, invert: bool) -> Result<SubsampleConfig> {
        let defaults = SubsampleConfig::default();
        Ok(SubsampleConfig {
            p_fwi: self.parse("subsample.p_fwi", defaults.p_fwi)?,
            p_ss: self.parse("subsample.p_ss", defaults.p_ss)?,
            k_per_stratum: self.parse("subsample.k_per_stratum", defaults.k_per_stratum)?,
            invert_fwi_classes: invert || self.parse("subsample.invert_fwi_classes", false)?,
            seed: self.parse("subsample.seed", seed)?,
        })
    }

    pub fn prior_config(&self) -> Result<PriorConfig> {
        let d = PriorConfig::default();
        Ok(PriorConfig {
            fixed_effect_precision: self
                .parse("priors.fixed_effect_precision", d.fixed_effect_precision)?,
            sharing_precision: self.parse("priors.sharing_precision", d.sharing_precision)?,
            rw1_loggamma_mean: self.parse("priors.rw1_loggamma_mean", d.rw1_loggamma_mean)?,
            rw1_loggamma_precision: self
                .parse("priors.rw1_loggamma_precision", d.rw1_loggamma_precision)?,
            gpd_shape_rate: self.parse("priors.gpd_shape_rate", d.gpd_shape_rate)?,
            pc_range_prob: self.parse("priors.pc_range_prob", d.pc_range_prob)?,
            pc_range_fraction: self.parse("priors.pc_range_fraction", d.pc_range_fraction)?,
            pc_sd_prob: self.parse("priors.pc_sd_prob", d.pc_sd_prob)?,
            pc_sd_value: self.parse("priors.pc_sd_value", d.pc_sd_value)?,
            precision_loggamma_mean: self
                .parse("priors.precision_loggamma_mean", d.precision_loggamma_mean)?,
            precision_loggamma_precision: self.parse(
                "priors.precision_loggamma_precision",
                d.precision_loggamma_precision,
            )?,
            spline_range: self.parse_opt("priors.spline_range")?,
            spline_sd: self.parse("priors.spline_sd", d.spline_sd)?,
        })
    }

    /// Keys with a given prefix, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> {
        self.raw.iter().filter_map(move |(k, v)| {
            k.strip_prefix(prefix).map(|rest| (rest, v.as_str()))
        })
    }
}

pub fn sha256_of(bytes: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().into()
}

pub fn sha256_of_files(paths: &[&Path]) -> Result<[u8; 32]> {
    let mut hasher = Sha256::new();
    for p in paths {
        let bytes =
            std::fs::read(p).with_context(|| format!("cannot read {}", p.display()))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hasher.finalize().into())
}

pub fn hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
