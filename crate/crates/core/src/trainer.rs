//! Minibatch training of a [`PortModel`] on single-step derivative labels.
//!
//! Per snapshot the loss is `λ·L_data + L_deg`, averaged over the batch.
//! Gradients are accumulated over fixed 64-row chunks and reduced in chunk
//! order, so results do not depend on the number of worker threads. Batch
//! order in epoch `e` comes from the `"batches/{e}"` substream of the seed.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Matrix, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::port::{DataNorm, ModelConfig, Normalization, PortModel};
use crate::seed;
use crate::state::{derivative_labels, Dataset, Split, SystemState, SYSTEM_DIM};

/// Rows per gradient/evaluation chunk.
pub const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the learning rate to 1% of it over `epochs`.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the data term.
    pub lambda: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a new best test `L_data`.
    pub patience: usize,
    pub data_norm: DataNorm,
    /// Abort once the train loss exceeds this multiple of its initial value.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 10.0,
            batch_size: 32,
            learning_rate: 1e-3,
            schedule: LrSchedule::Cosine,
            adam: AdamConfig::default(),
            epochs: 2000,
            seed: 0,
            patience: 200,
            data_norm: DataNorm::Standardized,
            divergence_factor: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::InvalidInput("divergence_factor must exceed 1".into()));
        }
        Ok(())
    }

    /// Learning rate used during epoch `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let lo = 0.01 * self.learning_rate;
                let frac = (epoch.saturating_sub(1)) as f64 / self.epochs.max(1) as f64;
                lo + 0.5 * (self.learning_rate - lo) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Losses after one epoch; epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_data: f64,
    pub train_deg: f64,
    pub test_data: f64,
    pub test_deg: f64,
}

impl EpochRow {
    pub fn train_total(&self, lambda: f64) -> f64 {
        lambda * self.train_data + self.train_deg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Ran the configured number of epochs.
    Completed,
    EarlyStopped,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub lambda: f64,
    pub best_epoch: usize,
    pub stop: Option<StopReason>,
    /// Checksum of the returned (best-on-test) parameters.
    pub checksum: String,
    pub n_train_pairs: usize,
    pub n_test_pairs: usize,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRow {
        &self.rows[self.best_epoch]
    }

    pub fn initial_total(&self) -> f64 {
        self.rows[0].train_total(self.lambda)
    }

    pub fn best_total(&self) -> f64 {
        self.best().train_total(self.lambda)
    }

    /// `epoch,train_data,train_deg,test_data,test_deg`, one row per epoch.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        w.write_record(["epoch", "train_data", "train_deg", "test_data", "test_deg"])
            .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                format!("{:.16e}", r.train_data),
                format!("{:.16e}", r.train_deg),
                format!("{:.16e}", r.test_data),
                format!("{:.16e}", r.test_deg),
            ])
            .map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
    }
}

/// Labelled single-step pairs split into states and targets.
#[derive(Debug, Clone, Default)]
pub struct Pairs {
    pub states: Vec<SystemState>,
    pub labels: Vec<[f64; SYSTEM_DIM]>,
}

impl Pairs {
    pub fn from_split(ds: &Dataset, which: Split) -> Result<Self> {
        let mut p = Pairs::default();
        for traj in ds.iter_split(which) {
            for (z, dz) in derivative_labels(traj)? {
                p.states.push(z);
                p.labels.push(dz);
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn zipped(&self) -> Vec<(SystemState, [f64; SYSTEM_DIM])> {
        self.states.iter().copied().zip(self.labels.iter().copied()).collect()
    }
}

/// `(λ·L_data + L_deg, L_data, L_deg)` at a single snapshot.
pub fn loss_single(
    model: &PortModel,
    z: &SystemState,
    dz_label: &[f64; SYSTEM_DIM],
    lambda: f64,
    data_norm: DataNorm,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new(model.params());
    let vars = model.record_loss(
        &mut tape,
        std::slice::from_ref(z),
        std::slice::from_ref(dz_label),
        lambda,
        data_norm,
    )?;
    let total = tape.value(vars.total).get(0, 0);
    let data = tape.value(vars.data).get(0, 0);
    let deg = tape.value(vars.deg).get(0, 0);
    if !(total.is_finite() && data.is_finite() && deg.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite loss at z = {:?}, label = {dz_label:?}",
            z.to_array()
        )));
    }
    Ok((total, data, deg))
}

/// Mean `L_data` and `L_deg` over a set of pairs.
pub fn mean_loss(model: &PortModel, pairs: &Pairs, lambda: f64, data_norm: DataNorm) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Ok((0.0, 0.0));
    }
    let sums = pairs
        .states
        .par_chunks(CHUNK)
        .zip(pairs.labels.par_chunks(CHUNK))
        .map(|(s, l)| {
            let mut tape = Tape::new(model.params());
            let vars = model.record_loss(&mut tape, s, l, lambda, data_norm)?;
            let d: f64 = tape.value(vars.data).data().iter().sum();
            let g: f64 = tape.value(vars.deg).data().iter().sum();
            Ok((d, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = pairs.len() as f64;
    let (d, g) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((d / n, g / n))
}

/// Gradient of the batch-mean loss.
pub fn batch_gradient(
    model: &PortModel,
    states: &[SystemState],
    labels: &[[f64; SYSTEM_DIM]],
    lambda: f64,
    data_norm: DataNorm,
) -> Result<(Gradients, f64)> {
    let n = states.len();
    let parts = states
        .par_chunks(CHUNK)
        .zip(labels.par_chunks(CHUNK))
        .map(|(s, l)| {
            let mut tape = Tape::new(model.params());
            let vars = model.record_loss(&mut tape, s, l, lambda, data_norm)?;
            let loss = tape.value(vars.total).get(0, 0);
            let w = s.len() as f64 / n as f64;
            let g = tape.backward_from(vars.total, &Matrix::from_vec(1, 1, vec![w])?)?;
            Ok((g, loss * w))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::zeros(model.params().len());
    let mut loss = 0.0;
    for (g, l) in &parts {
        total.add_assign(g);
        loss += l;
    }
    Ok((total, loss))
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResumeState {
    format: String,
    epoch: usize,
    adam: Adam,
    best_epoch: usize,
    best_test: f64,
    since_best: usize,
    rows: Vec<EpochRow>,
}

const RESUME_FORMAT: &str = "pmnn-train-state-v1";

pub struct Trainer {
    cfg: TrainConfig,
    model: PortModel,
    best: ParamStore,
    adam: Adam,
    epoch: usize,
    best_epoch: usize,
    best_test: f64,
    since_best: usize,
    rows: Vec<EpochRow>,
    train: Pairs,
    test: Pairs,
    stop: Option<StopReason>,
}

impl Trainer {
    /// Builds labels, normalization and a fresh model, and records epoch 0.
    pub fn new(ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let train = Pairs::from_split(ds, Split::Train)?;
        let test = Pairs::from_split(ds, Split::Test)?;
        if train.is_empty() {
            return Err(Error::InvalidInput("dataset has no training trajectories".into()));
        }
        let norm = Normalization::from_pairs(&train.zipped())?;
        let model = PortModel::new(model_cfg.clone(), norm, cfg.seed)?;
        let adam = Adam::new(cfg.adam, model.params().len())?;
        let mut t = Trainer {
            cfg: cfg.clone(),
            best: model.params().clone(),
            model,
            adam,
            epoch: 0,
            best_epoch: 0,
            best_test: f64::INFINITY,
            since_best: 0,
            rows: Vec::new(),
            train,
            test,
            stop: None,
        };
        let row = t.evaluate_row(0)?;
        t.record(row);
        Ok(t)
    }

    fn evaluate_row(&self, epoch: usize) -> Result<EpochRow> {
        let (train_data, train_deg) = mean_loss(&self.model, &self.train, self.cfg.lambda, self.cfg.data_norm)?;
        let (test_data, test_deg) = if self.test.is_empty() {
            (train_data, train_deg)
        } else {
            mean_loss(&self.model, &self.test, self.cfg.lambda, self.cfg.data_norm)?
        };
        Ok(EpochRow {
            epoch,
            train_data,
            train_deg,
            test_data,
            test_deg,
        })
    }

    fn record(&mut self, row: EpochRow) {
        if row.test_data < self.best_test {
            self.best_test = row.test_data;
            self.best_epoch = row.epoch;
            self.best = self.model.params().clone();
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.rows.push(row);
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn rows(&self) -> &[EpochRow] {
        &self.rows
    }

    pub fn model(&self) -> &PortModel {
        &self.model
    }

    pub fn train_pairs(&self) -> &Pairs {
        &self.train
    }

    pub fn test_pairs(&self) -> &Pairs {
        &self.test
    }

    pub fn is_finished(&self) -> bool {
        self.stop.is_some()
    }

    /// Runs one epoch of minibatch updates followed by a full evaluation.
    pub fn step_epoch(&mut self) -> Result<EpochRow> {
        if self.stop.is_some() {
            return Err(Error::InvalidState("training already finished".into()));
        }
        let epoch = self.epoch + 1;
        let lr = self.cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut seed::substream(self.cfg.seed, &format!("batches/{epoch}")));
        let mut states = Vec::with_capacity(self.cfg.batch_size);
        let mut labels = Vec::with_capacity(self.cfg.batch_size);
        for batch in order.chunks(self.cfg.batch_size) {
            states.clear();
            labels.clear();
            for &i in batch {
                states.push(self.train.states[i]);
                labels.push(self.train.labels[i]);
            }
            let (g, _) = batch_gradient(&self.model, &states, &labels, self.cfg.lambda, self.cfg.data_norm)?;
            if !g.0.iter().all(|v| v.is_finite()) {
                self.stop = Some(StopReason::Diverged);
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                    limit: self.divergence_limit(),
                });
            }
            self.adam.step(self.model.params_mut().flat_mut(), &g.0, lr)?;
        }
        self.epoch = epoch;
        let row = match self.evaluate_row(epoch) {
            Ok(r) => r,
            Err(Error::Numeric(_)) | Err(Error::InvalidInput(_)) => EpochRow {
                epoch,
                train_data: f64::NAN,
                train_deg: f64::NAN,
                test_data: f64::NAN,
                test_deg: f64::NAN,
            },
            Err(e) => return Err(e),
        };
        let total = row.train_total(self.cfg.lambda);
        let limit = self.divergence_limit();
        if !(total <= limit) {
            self.stop = Some(StopReason::Diverged);
            return Err(Error::Diverged {
                epoch,
                loss: total,
                limit,
            });
        }
        self.record(row);
        if self.since_best >= self.cfg.patience {
            self.stop = Some(StopReason::EarlyStopped);
        } else if self.epoch >= self.cfg.epochs {
            self.stop = Some(StopReason::Completed);
        }
        Ok(row)
    }

    fn divergence_limit(&self) -> f64 {
        self.cfg.divergence_factor * self.rows[0].train_total(self.cfg.lambda).max(f64::EPSILON)
    }

    /// Trains until the epoch budget, early stopping, or divergence.
    pub fn run(&mut self) -> Result<StopReason> {
        if self.epoch >= self.cfg.epochs && self.stop.is_none() {
            self.stop = Some(StopReason::Completed);
        }
        while self.stop.is_none() {
            self.step_epoch()?;
        }
        Ok(self.stop.unwrap())
    }

    pub fn report(&self) -> TrainReport {
        TrainReport {
            rows: self.rows.clone(),
            lambda: self.cfg.lambda,
            best_epoch: self.best_epoch,
            stop: self.stop,
            checksum: self.best.checksum(),
            n_train_pairs: self.train.len(),
            n_test_pairs: self.test.len(),
        }
    }

    /// The best-on-test model seen so far.
    pub fn best_model(&self) -> Result<PortModel> {
        PortModel::from_params(
            self.model.config().clone(),
            *self.model.normalization(),
            self.best.clone(),
        )
    }

    /// Saves the current and best models plus optimizer state.
    pub fn save_state(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.model.save(&dir.join("current"))?;
        self.best_model()?.save(&dir.join("best"))?;
        let state = ResumeState {
            format: RESUME_FORMAT.into(),
            epoch: self.epoch,
            adam: self.adam.clone(),
            best_epoch: self.best_epoch,
            best_test: self.best_test,
            since_best: self.since_best,
            rows: self.rows.clone(),
        };
        let path = dir.join("state.json");
        fs::write(&path, serde_json::to_string(&state)?).map_err(|e| Error::io(&path, e))
    }

    /// Continues from a directory written by [`Trainer::save_state`].
    pub fn resume(ds: &Dataset, cfg: &TrainConfig, dir: &Path) -> Result<Self> {
        cfg.validate()?;
        let path = dir.join("state.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: ResumeState = serde_json::from_str(&text)?;
        if state.format != RESUME_FORMAT {
            return Err(Error::InvalidInput(format!(
                "{}: unknown format {}",
                path.display(),
                state.format
            )));
        }
        let model = PortModel::load(&dir.join("current"))?;
        let best = PortModel::load(&dir.join("best"))?;
        if state.adam.m.len() != model.params().len() {
            return Err(Error::InvalidInput("optimizer state does not match the model".into()));
        }
        let train = Pairs::from_split(ds, Split::Train)?;
        let test = Pairs::from_split(ds, Split::Test)?;
        if Normalization::from_pairs(&train.zipped())? != *model.normalization() {
            return Err(Error::InvalidInput(
                "dataset differs from the one the saved model was trained on".into(),
            ));
        }
        let mut t = Trainer {
            cfg: cfg.clone(),
            best: best.params().clone(),
            model,
            adam: state.adam,
            epoch: state.epoch,
            best_epoch: state.best_epoch,
            best_test: state.best_test,
            since_best: state.since_best,
            rows: state.rows,
            train,
            test,
            stop: None,
        };
        if t.since_best >= t.cfg.patience {
            t.stop = Some(StopReason::EarlyStopped);
        }
        Ok(t)
    }
}

/// Trains from scratch; returns the best-on-test model and the report.
pub fn train(ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(PortModel, TrainReport)> {
    let mut t = Trainer::new(ds, model_cfg, cfg)?;
    t.run()?;
    Ok((t.best_model()?, t.report()))
}
