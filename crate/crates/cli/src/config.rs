//! Run configuration, read from TOML.
//!
//! Every `[scenario]` field except `seed` must be present; all other sections
//! and keys fall back to the defaults below. `--set section.key=value`
//! overrides a key after the file is read.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use narnn_rrm::channel_sim::ScenarioConfig;
use narnn_rrm::eval::{EvalConfig, FitSettings};
use narnn_rrm::lm::LmConfig;
use narnn_rrm::narnn::{Activation, Topology};
use narnn_rrm::predictors::PredictorSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub trainer: LmConfig,
    #[serde(default = "PredictorSpec::defaults")]
    pub predictors: Vec<PredictorSpec>,
    #[serde(default)]
    pub sweep: EvalConfig,
    #[serde(default)]
    pub table: TableConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_delays: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_delays: 20,
            train_fraction: 0.8,
            validation_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub n_hidden: usize,
    pub activation: String,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            n_hidden: 16,
            activation: "logsig".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    pub neurons: Vec<usize>,
    pub activations: Vec<String>,
    /// Tap counts of the delay sweep, run with `topology.n_hidden` neurons.
    pub delays: Vec<usize>,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            neurons: vec![8, 12, 14, 16, 18],
            activations: vec!["logsig".into(), "tansig".into()],
            delays: vec![2, 20, 50],
        }
    }
}

impl RunConfig {
    /// Defaults for every section, including the scenario.
    pub fn builtin() -> Self {
        Self {
            seed: default_seed(),
            out_dir: default_out_dir(),
            scenario: ScenarioConfig::default(),
            dataset: DatasetConfig::default(),
            topology: TopologyConfig::default(),
            trainer: LmConfig::default(),
            predictors: PredictorSpec::defaults(),
            sweep: EvalConfig::default(),
            table: TableConfig::default(),
        }
    }

    /// Parse `text` after applying `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Table = text.parse().map_err(|e: toml::de::Error| anyhow!("{e}"))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let mut cfg: RunConfig = tree.try_into().map_err(|e: toml::de::Error| anyhow!("{e}"))?;
        cfg.scenario.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            None => toml::to_string(&Self::builtin()).expect("built-in config serializes"),
        };
        let what = path.map_or_else(|| "built-in config".to_string(), |p| p.display().to_string());
        Self::parse(&text, overrides).with_context(|| format!("invalid config {what}"))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate().context("[scenario]")?;
        self.trainer.validate().context("[trainer]")?;
        self.sweep.validate().context("[sweep]")?;
        self.fit_settings().context("[dataset]/[topology]")?;
        let d = &self.dataset;
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            bail!("dataset.train_fraction must lie in (0, 1), got {}", d.train_fraction);
        }
        if !(0.0..1.0).contains(&d.validation_fraction) {
            bail!("dataset.validation_fraction must lie in [0, 1), got {}", d.validation_fraction);
        }
        self.table_activations().context("[table]")?;
        if self.predictors.is_empty() {
            bail!("predictors: at least one predictor is required");
        }
        Ok(())
    }

    pub fn activation(&self) -> Result<Activation> {
        Ok(self.topology.activation.parse()?)
    }

    pub fn fit_settings(&self) -> Result<FitSettings> {
        Ok(FitSettings {
            topology: Topology::new(self.dataset.n_delays, self.topology.n_hidden, self.activation()?)?,
            train_fraction: self.dataset.train_fraction,
            validation_fraction: self.dataset.validation_fraction,
            trainer: self.trainer.clone(),
        })
    }

    pub fn table_activations(&self) -> Result<Vec<Activation>> {
        self.table
            .activations
            .iter()
            .map(|a| a.parse().map_err(anyhow::Error::from))
            .collect()
    }

    /// Window of the first quantile predictor, or the default.
    pub fn quantile_window(&self) -> usize {
        self.predictors
            .iter()
            .find_map(|p| match p {
                PredictorSpec::Quantile { window, .. } => Some(*window),
                _ => None,
            })
            .unwrap_or(500)
    }

    /// Effective config as TOML, headed by the sub-seed labels.
    pub fn echo(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        format!(
            "# effective configuration\n\
             # random streams derive from `seed` through the labels\n\
             # scenario, fading, init, chunk-<i>\n{body}"
        )
    }
}

fn apply_override(tree: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not key=value"))?;
    let value = parse_value(raw.trim());
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields one item");
    let mut node = tree;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("override {key:?}: {p} is not a table"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// A TOML literal, or a bare string when it does not parse as one.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
