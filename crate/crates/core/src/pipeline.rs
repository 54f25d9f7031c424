//! The four pipeline stages behind the command line: generate, train,
//! eval and audit. Every stage reads its inputs and writes its outputs
//! through the paths of one [`ExperimentConfig`].

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluator::{self, thermo_audit, AuditSummary, DynamicsModel, EvalReport, ZeroModel};
use crate::io::{load_dataset, save_dataset};
use crate::oracle::OracleModel;
use crate::port::{ModelConfig, PortModel};
use crate::state::{split_dataset, Dataset, Split};
use crate::trainer::{StopReason, TrainReport, Trainer};

/// Directory names inside the run directory.
pub const MODEL_DIR: &str = "model";
pub const CHECKPOINT_DIR: &str = "checkpoint";
/// Wall-clock measurements; the only output that varies between runs.
pub const TIMING_FILE: &str = "timing.json";

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn oracle(cfg: &ExperimentConfig) -> Result<OracleModel> {
    OracleModel::new(cfg.oracle.params, cfg.oracle.substeps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub n_trajectories: usize,
    pub n_states: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Largest relative total-energy drift over all trajectories.
    pub max_energy_drift: f64,
    /// Smallest per-step change of total entropy.
    pub min_entropy_increment: f64,
}

impl GenerateSummary {
    pub fn line(&self) -> String {
        format!(
            "generated {} trajectories x {} states ({} train / {} test); max energy drift {:.3e}; min entropy increment {:.3e}",
            self.n_trajectories, self.n_states, self.n_train, self.n_test, self.max_energy_drift, self.min_entropy_increment
        )
    }
}

/// Simulates, splits and saves the dataset; `audit.json` sits beside it.
pub fn generate(cfg: &ExperimentConfig) -> Result<GenerateSummary> {
    let d = &cfg.dataset;
    let o = oracle(cfg)?;
    let ds = o.generate_dataset(d.n_sims, d.seed, &d.ic, d.n_steps, d.dt)?;
    let ds = split_dataset(&ds, d.train_fraction, d.seed)?;
    let mut summary = GenerateSummary {
        n_trajectories: ds.len(),
        n_states: d.n_steps + 1,
        n_train: ds.count(Split::Train),
        n_test: ds.count(Split::Test),
        max_energy_drift: 0.0,
        min_entropy_increment: f64::INFINITY,
    };
    for t in &ds.trajectories {
        summary.max_energy_drift = summary.max_energy_drift.max(o.max_energy_drift(t)?);
        summary.min_entropy_increment = summary.min_entropy_increment.min(o.min_entropy_increment(t));
    }
    save_dataset(&ds, &cfg.paths.dataset)?;
    write_json(&cfg.paths.dataset.join("audit.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop: StopReason,
    pub initial_total: f64,
    pub best_total: f64,
    pub best_train_deg: f64,
    pub best_test_data: f64,
    pub checksum: String,
    pub n_train_pairs: usize,
    pub n_test_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub summary: TrainSummary,
    pub report: TrainReport,
    /// Present when training aborted on divergence.
    pub divergence: Option<String>,
}

/// Trains (or resumes) and writes `report.csv`, `summary.json`,
/// `timing.json`, the best model and a resumable checkpoint.
pub fn train(cfg: &ExperimentConfig, resume: bool) -> Result<TrainOutcome> {
    let ds = load_dataset(&cfg.paths.dataset)?;
    let run = &cfg.paths.run;
    let checkpoint = run.join(CHECKPOINT_DIR);
    let start = Instant::now();
    let mut trainer = if resume {
        let t = Trainer::resume(&ds, &cfg.train, &checkpoint)?;
        check_model_config(t.model().config(), &cfg.model)?;
        t
    } else {
        Trainer::new(&ds, &cfg.model, &cfg.train)?
    };
    let first_epoch = trainer.epoch();
    let mut divergence = None;
    if let Err(e) = trainer.run() {
        match e {
            Error::Diverged { .. } => divergence = Some(e.to_string()),
            e => return Err(e),
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let report = trainer.report();
    let stop = report.stop.unwrap_or(StopReason::Completed);
    let best = report.best();
    let summary = TrainSummary {
        epochs_run: trainer.epoch(),
        best_epoch: report.best_epoch,
        stop,
        initial_total: report.initial_total(),
        best_total: report.best_total(),
        best_train_deg: best.train_deg,
        best_test_data: best.test_data,
        checksum: report.checksum.clone(),
        n_train_pairs: report.n_train_pairs,
        n_test_pairs: report.n_test_pairs,
    };
    write(&run.join("report.csv"), &report.to_csv()?)?;
    write_json(&run.join("summary.json"), &summary)?;
    trainer.best_model()?.save(&run.join(MODEL_DIR))?;
    trainer.save_state(&checkpoint)?;
    let epochs = trainer.epoch() - first_epoch;
    write_json(
        &run.join(TIMING_FILE),
        &serde_json::json!({
            "seconds": elapsed,
            "epochs": epochs,
            "seconds_per_epoch": if epochs > 0 { elapsed / epochs as f64 } else { 0.0 },
        }),
    )?;
    Ok(TrainOutcome {
        summary,
        report,
        divergence,
    })
}

/// What to roll out: the reference simulator, the persistence baseline,
/// or a saved model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSource {
    Oracle,
    Zero,
    Checkpoint(PathBuf),
}

impl FromStr for ModelSource {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "oracle" => ModelSource::Oracle,
            "zero" => ModelSource::Zero,
            path => ModelSource::Checkpoint(path.into()),
        })
    }
}

impl ModelSource {
    /// The trained model of the configured run.
    pub fn default_for(cfg: &ExperimentConfig) -> Self {
        ModelSource::Checkpoint(cfg.paths.run.join(MODEL_DIR))
    }
}

enum Loaded {
    Oracle(OracleModel),
    Zero,
    Port(Box<PortModel>),
}

impl Loaded {
    fn model(&self) -> &dyn DynamicsModel {
        match self {
            Loaded::Oracle(o) => o,
            Loaded::Zero => &ZeroModel,
            Loaded::Port(m) => m.as_ref(),
        }
    }

    /// Saved models are named by parameter checksum, not by path, so that
    /// reports do not depend on where the run lives.
    fn name(&self) -> String {
        match self {
            Loaded::Oracle(_) => "oracle".into(),
            Loaded::Zero => "zero".into(),
            Loaded::Port(m) => format!("model {}", m.params().checksum()),
        }
    }
}

fn load_model(cfg: &ExperimentConfig, source: &ModelSource) -> Result<Loaded> {
    Ok(match source {
        ModelSource::Oracle => Loaded::Oracle(oracle(cfg)?),
        ModelSource::Zero => Loaded::Zero,
        ModelSource::Checkpoint(dir) => {
            let m = PortModel::load(dir)?;
            check_model_config(m.config(), &cfg.model)?;
            Loaded::Port(Box::new(m))
        }
    })
}

/// Fails with a key-by-key listing when a saved model was built from a
/// different architecture than the configuration describes.
pub fn check_model_config(saved: &ModelConfig, configured: &ModelConfig) -> Result<()> {
    if saved == configured {
        return Ok(());
    }
    let to_table = |c: &ModelConfig| toml::Table::try_from(c).expect("model config serializes");
    let mut lines = Vec::new();
    diff_tables("model", &to_table(saved), &to_table(configured), &mut lines);
    Err(Error::Config(format!(
        "checkpoint does not match the configuration:\n{}",
        lines.join("\n")
    )))
}

fn diff_tables(prefix: &str, a: &toml::Table, b: &toml::Table, out: &mut Vec<String>) {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    for k in keys {
        let key = format!("{prefix}.{k}");
        match (a.get(k), b.get(k)) {
            (Some(toml::Value::Table(x)), Some(toml::Value::Table(y))) => diff_tables(&key, x, y, out),
            (x, y) if x != y => out.push(format!(
                "  {key}: checkpoint {} vs config {}",
                x.map_or("-".into(), |v| v.to_string()),
                y.map_or("-".into(), |v| v.to_string())
            )),
            _ => {}
        }
    }
}

fn dataset_and_oracle(cfg: &ExperimentConfig) -> Result<(Dataset, OracleModel)> {
    let ds = load_dataset(&cfg.paths.dataset)?;
    Ok((ds, oracle(cfg)?))
}

/// Rollout error statistics written to the eval directory.
pub fn eval(cfg: &ExperimentConfig, source: &ModelSource) -> Result<EvalReport> {
    let (ds, o) = dataset_and_oracle(cfg)?;
    let loaded = load_model(cfg, source)?;
    let report = evaluator::evaluate(
        &loaded.name(),
        loaded.model(),
        &ds,
        &cfg.eval.splits,
        cfg.eval.rollout_steps,
        Some(&o),
    )?;
    report.write(&cfg.paths.eval)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub split: Split,
    pub audit: AuditSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub model: String,
    pub splits: Vec<SplitAudit>,
}

/// Thermodynamic audit of a model along the stored trajectories, written
/// to `audit.json` in the eval directory.
pub fn audit(cfg: &ExperimentConfig, source: &ModelSource) -> Result<AuditReport> {
    let (ds, o) = dataset_and_oracle(cfg)?;
    let loaded = load_model(cfg, source)?;
    let mut splits = Vec::new();
    for &which in &cfg.eval.splits {
        let audits = ds
            .iter_split(which)
            .map(|t| thermo_audit(loaded.model(), t, Some(&o)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(audit) = AuditSummary::combine(&audits) {
            splits.push(SplitAudit { split: which, audit });
        }
    }
    let report = AuditReport {
        model: loaded.name(),
        splits,
    };
    write_json(&cfg.paths.eval.join("audit.json"), &report)?;
    Ok(report)
}
