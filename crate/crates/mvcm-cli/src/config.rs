//! Flat key-value configuration with command-line overrides.
//!
//! Every pipeline knob lives in one flat TOML table; flags win over file
//! values, file values win over defaults. The resolved table is hashed into
//! the run manifest so a run can be reproduced from its outputs.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mvcm::Kernel;

/// Bandwidth request: data-driven selection or fixed per-response values.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthSpec {
    Auto,
    Fixed(Vec<f64>),
}

impl BandwidthSpec {
    fn parse(raw: &str) -> Result<Self> {
        if raw.trim().eq_ignore_ascii_case("auto") {
            return Ok(BandwidthSpec::Auto);
        }
        let values = raw
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .with_context(|| format!("invalid bandwidth value {v:?}"))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() || values.iter().any(|h| !h.is_finite() || *h <= 0.0) {
            bail!("bandwidths must be positive finite numbers or \"auto\"");
        }
        Ok(BandwidthSpec::Fixed(values))
    }

    fn render(&self) -> String {
        match self {
            BandwidthSpec::Auto => "auto".to_string(),
            BandwidthSpec::Fixed(values) => values
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        }
    }

    /// Expands to per-response bandwidths (single values are broadcast).
    pub fn resolve(&self, j_dim: usize) -> Result<Option<Vec<f64>>> {
        match self {
            BandwidthSpec::Auto => Ok(None),
            BandwidthSpec::Fixed(values) if values.len() == 1 => {
                Ok(Some(vec![values[0]; j_dim]))
            }
            BandwidthSpec::Fixed(values) if values.len() == j_dim => Ok(Some(values.clone())),
            BandwidthSpec::Fixed(values) => bail!(
                "{} bandwidths supplied for {} responses",
                values.len(),
                j_dim
            ),
        }
    }
}

/// Resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kernel: Kernel,
    pub h1: BandwidthSpec,
    pub h2: BandwidthSpec,
    pub g_reps: usize,
    pub alpha: f64,
    pub seed: u64,
    /// 0 means "report on the data grid".
    pub eval_points: usize,
    pub energy: f64,
    pub emit_draws: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Epanechnikov,
            h1: BandwidthSpec::Auto,
            h2: BandwidthSpec::Auto,
            g_reps: 1000,
            alpha: 0.05,
            seed: 42,
            eval_points: 0,
            energy: 0.99,
            emit_draws: false,
        }
    }
}

/// Unvalidated override set coming from flags.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub kernel: Option<String>,
    pub h1: Option<String>,
    pub h2: Option<String>,
    pub g_reps: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub eval_points: Option<usize>,
    pub energy: Option<f64>,
    pub emit_draws: bool,
}

impl RunConfig {
    /// Loads the config file (when given), applies flag overrides and
    /// validates every field.
    pub fn resolve(config_path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = RunConfig::default();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            let table: toml::Table = text
                .parse()
                .with_context(|| format!("config file {} is not valid TOML", path.display()))?;
            for (key, value) in &table {
                config.apply(key, value)?;
            }
        }
        if let Some(kernel) = &overrides.kernel {
            config.kernel = kernel.parse()?;
        }
        if let Some(h1) = &overrides.h1 {
            config.h1 = BandwidthSpec::parse(h1)?;
        }
        if let Some(h2) = &overrides.h2 {
            config.h2 = BandwidthSpec::parse(h2)?;
        }
        if let Some(g) = overrides.g_reps {
            config.g_reps = g;
        }
        if let Some(alpha) = overrides.alpha {
            config.alpha = alpha;
        }
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(eval) = overrides.eval_points {
            config.eval_points = eval;
        }
        if let Some(energy) = overrides.energy {
            config.energy = energy;
        }
        config.emit_draws |= overrides.emit_draws;
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, key: &str, value: &toml::Value) -> Result<()> {
        let as_str = || -> Result<String> {
            value
                .as_str()
                .map(str::to_string)
                .or_else(|| value.as_float().map(|v| v.to_string()))
                .or_else(|| value.as_integer().map(|v| v.to_string()))
                .with_context(|| format!("config key {key:?} must be a string or number"))
        };
        match key {
            "kernel" => self.kernel = as_str()?.parse()?,
            "h1" => self.h1 = BandwidthSpec::parse(&as_str()?)?,
            "h2" => self.h2 = BandwidthSpec::parse(&as_str()?)?,
            "g_reps" => {
                self.g_reps = value
                    .as_integer()
                    .with_context(|| "g_reps must be an integer")?
                    .try_into()?
            }
            "alpha" => {
                self.alpha = value
                    .as_float()
                    .with_context(|| "alpha must be a float")?
            }
            "seed" => {
                self.seed = value
                    .as_integer()
                    .with_context(|| "seed must be an integer")? as u64
            }
            "eval_points" => {
                self.eval_points = value
                    .as_integer()
                    .with_context(|| "eval_points must be an integer")?
                    .try_into()?
            }
            "energy" => {
                self.energy = value
                    .as_float()
                    .with_context(|| "energy must be a float")?
            }
            "emit_draws" => {
                self.emit_draws = value
                    .as_bool()
                    .with_context(|| "emit_draws must be a boolean")?
            }
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.g_reps == 0 {
            bail!("g_reps must be at least 1");
        }
        if !(0.0..1.0).contains(&self.alpha) || self.alpha == 0.0 {
            bail!("alpha must lie in (0, 1)");
        }
        if self.eval_points == 1 {
            bail!("eval_points must be 0 (data grid) or at least 2");
        }
        if !(0.0..=1.0).contains(&self.energy) || self.energy == 0.0 {
            bail!("energy must lie in (0, 1]");
        }
        Ok(())
    }

    /// Flat key-value view for the manifest.
    pub fn as_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("kernel".into(), self.kernel.to_string());
        map.insert("h1".into(), self.h1.render());
        map.insert("h2".into(), self.h2.render());
        map.insert("g_reps".into(), self.g_reps.to_string());
        map.insert("alpha".into(), self.alpha.to_string());
        map.insert("seed".into(), self.seed.to_string());
        map.insert("eval_points".into(), self.eval_points.to_string());
        map.insert("energy".into(), self.energy.to_string());
        map.insert("emit_draws".into(), self.emit_draws.to_string());
        map
    }
}
