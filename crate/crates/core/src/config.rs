//! Experiment configuration: one strict TOML document drives every stage.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{DEFAULT_DT, DEFAULT_STEPS, DEFAULT_SUBSTEPS};
use crate::port::ModelConfig;
use crate::state::{IcSpec, PendulumParams, Split};
use crate::trainer::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides the worker count of the configuration when set.
pub const WORKERS_ENV: &str = "PMNN_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// RK4 substeps per output step.
    pub substeps: usize,
    pub params: PendulumParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_sims: usize,
    /// Root seed of initial conditions and of the train/test split.
    pub seed: u64,
    pub n_steps: usize,
    /// Output step, s.
    pub dt: f64,
    pub train_fraction: f64,
    pub ic: IcSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Rollout length in steps; at most the dataset's.
    pub rollout_steps: usize,
    pub splits: Vec<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub run: PathBuf,
    pub eval: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Worker threads; 0 lets the runtime decide.
    pub workers: usize,
    pub oracle: OracleConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            workers: 0,
            oracle: OracleConfig {
                substeps: DEFAULT_SUBSTEPS,
                params: PendulumParams::default(),
            },
            dataset: DatasetConfig {
                n_sims: 50,
                seed: 0,
                n_steps: DEFAULT_STEPS,
                dt: DEFAULT_DT,
                train_fraction: 0.8,
                ic: IcSpec::default(),
            },
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig {
                rollout_steps: DEFAULT_STEPS,
                splits: vec![Split::Train, Split::Test],
            },
            paths: PathsConfig {
                dataset: "out/dataset".into(),
                run: "out/run".into(),
                eval: "out/eval".into(),
            },
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, applies `key=value` overrides, then validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let version = doc.get("schema_version").and_then(toml::Value::as_integer);
        if version != Some(SCHEMA_VERSION as i64) {
            return Err(Error::Config(format!(
                "schema_version must be {SCHEMA_VERSION}, found {}",
                version.map_or("none".into(), |v| v.to_string())
            )));
        }
        let cfg: ExperimentConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.n_sims == 0 || d.n_steps == 0 {
            return Err(Error::Config(
                "dataset needs at least one simulation and one step".into(),
            ));
        }
        if !(d.dt > 0.0 && d.dt.is_finite()) {
            return Err(Error::Config(format!("dataset.dt must be positive, got {}", d.dt)));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "dataset.train_fraction must lie in (0, 1), got {}",
                d.train_fraction
            )));
        }
        if self.eval.rollout_steps == 0 || self.eval.rollout_steps > d.n_steps {
            return Err(Error::Config(format!(
                "eval.rollout_steps must lie in 1..={}, got {}",
                d.n_steps, self.eval.rollout_steps
            )));
        }
        self.oracle.params.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Worker count after the environment override.
    pub fn effective_workers(&self) -> Result<usize> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a non-negative integer, got {v:?}"))),
            Err(_) => Ok(self.workers),
        }
    }
}

/// JSON schema of the configuration file.
pub fn schema_json() -> String {
    let schema = schemars::schema_for!(ExperimentConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}

/// `a.b.c=value`: the value is read as a TOML literal, or as a bare string
/// when it does not parse as one.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut table = doc;
    for part in &path[..path.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not a table")))?;
    }
    table.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = ExperimentConfig::default().to_toml().unwrap();
        let bad = text.replace("[train]\n", "[train]\nlearnig_rate = 0.1\n");
        let e = ExperimentConfig::from_toml(&bad, &[]).unwrap_err();
        assert!(e.to_string().contains("learnig_rate"), "{e}");
    }

    #[test]
    fn missing_or_wrong_schema_version() {
        let text = ExperimentConfig::default().to_toml().unwrap();
        let e = ExperimentConfig::from_toml(&text.replace("schema_version = 1", "schema_version = 2"), &[]);
        assert!(matches!(e, Err(Error::Config(_))));
        let e = ExperimentConfig::from_toml(&text.replace("schema_version = 1\n", ""), &[]);
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn overrides_apply_with_types() {
        let text = ExperimentConfig::default().to_toml().unwrap();
        let sets = [
            "train.epochs=7".to_string(),
            "dataset.ic.spread=0.05".to_string(),
            "paths.run=elsewhere".to_string(),
            "model.bulk.hidden=[8, 8]".to_string(),
        ];
        let cfg = ExperimentConfig::from_toml(&text, &sets).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.dataset.ic.spread, 0.05);
        assert_eq!(cfg.paths.run, PathBuf::from("elsewhere"));
        assert_eq!(cfg.model.bulk.hidden, vec![8, 8]);
        assert!(ExperimentConfig::from_toml(&text, &["train.epochs".into()]).is_err());
        assert!(ExperimentConfig::from_toml(&text, &["train.nope=1".into()]).is_err());
        assert!(ExperimentConfig::from_toml(&text, &["train.epochs=-1".into()]).is_err());
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let text = ExperimentConfig::default().to_toml().unwrap();
        for o in [
            "dataset.train_fraction=1.0",
            "eval.rollout_steps=201",
            "dataset.n_sims=0",
        ] {
            assert!(ExperimentConfig::from_toml(&text, &[o.to_string()]).is_err(), "{o}");
        }
    }
}
