//! Run configuration layered as defaults < TOML file < `BLASTCAST_*`
//! environment < command-line flags.
//!
//! Environment keys map onto the config tree with `__` as the separator:
//! `BLASTCAST_TRAIN__LEARNING_RATE=1e-4` sets `train.learning_rate`. Values
//! are parsed as TOML literals, falling back to plain strings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::damage::DamageConfig;
use crate::error::{Error, Result};
use crate::euler2d::SolverConfig;
use crate::metrics::DEFAULT_MAPE_THRESHOLD;
use crate::network::ModelConfig;
use crate::scenario::{GridSpec, LayoutParams, SuiteKind};
use crate::training::{LossConfig, TrainConfig};

pub const ENV_PREFIX: &str = "BLASTCAST_";
pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub suite: SuiteKind,
    pub count: usize,
    /// Share of cases held out for testing.
    pub test_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            suite: SuiteKind::RandomLayout,
            count: 10,
            test_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Predicted steps per rollout.
    pub horizon: usize,
    /// First ground-truth frame of the seed window.
    pub start: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self { horizon: 280, start: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub mape_threshold: f64,
    /// Steps entering the aggregates.
    pub horizon: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            mape_threshold: DEFAULT_MAPE_THRESHOLD,
            horizon: 280,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic: bool,
    /// Worker threads for case generation (0 = all cores).
    pub jobs: usize,
    /// Cells per side of the square simulation grid.
    pub grid: usize,
    pub gen: GenConfig,
    pub layout: LayoutParams,
    pub solver: SolverConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub forecast: ForecastConfig,
    pub metrics: MetricsConfig,
    pub damage: DamageConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic: false,
            jobs: 0,
            grid: 64,
            gen: GenConfig::default(),
            layout: LayoutParams::default(),
            solver: SolverConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            forecast: ForecastConfig::default(),
            metrics: MetricsConfig::default(),
            damage: DamageConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::for_domain(&self.layout.domain, self.grid, self.grid)
    }

    /// Worker count after `deterministic` is applied.
    pub fn effective_jobs(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.jobs
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_spec()?;
        self.solver.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.damage.validate()?;
        if !(0.0..1.0).contains(&self.gen.test_fraction) {
            return Err(Error::config("gen.test_fraction must lie in [0, 1)"));
        }
        if !(self.metrics.mape_threshold > 0.0) {
            return Err(Error::config("metrics.mape_threshold must be positive"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("serializing config: {e}")))
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(SNAPSHOT_FILE), self.to_toml()?)?;
        Ok(())
    }
}

/// Builds a [`RunConfig`] layer by layer.
pub struct ConfigBuilder {
    tree: toml::Table,
}

impl Default for ConfigBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self { tree: toml::Table::new() }
    }

    /// Merges a TOML file over the current tree.
    pub fn file(mut self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::binio::with_path(e, path))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        merge(&mut self.tree, table);
        Ok(self)
    }

    /// Applies `BLASTCAST_*` variables from an iterator of `(name, value)`.
    pub fn env_vars(mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut vars: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.len() > ENV_PREFIX.len())
            .collect();
        vars.sort();
        for (k, v) in vars {
            let key = k[ENV_PREFIX.len()..].to_ascii_lowercase().replace("__", ".");
            self = self.set(&key, &v)?;
        }
        Ok(self)
    }

    pub fn env(self) -> Result<Self> {
        self.env_vars(std::env::vars())
    }

    /// Sets a dotted key from a TOML literal (or bare string).
    pub fn set(mut self, key: &str, raw: &str) -> Result<Self> {
        let value = parse_literal(raw);
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::config(format!("malformed config key `{key}`")));
        }
        let mut table = &mut self.tree;
        for p in &parts[..parts.len() - 1] {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::config(format!("config key `{key}` passes through a non-table")))?;
        }
        table.insert(parts[parts.len() - 1].to_string(), value);
        Ok(self)
    }

    pub fn set_value(self, key: &str, value: impl ToString) -> Result<Self> {
        self.set(key, &value.to_string())
    }

    pub fn build(self) -> Result<RunConfig> {
        let cfg: RunConfig = toml::Value::Table(self.tree)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    // parse `x = <raw>` so arrays, numbers, booleans and quoted strings work
    match format!("x = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn merge(dst: &mut toml::Table, src: toml::Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}
