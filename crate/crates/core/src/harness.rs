//! Experiment runner: run configurations, QNN and baseline training loops,
//! hyperparameter sweeps and CSV/JSON reports.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{build_fair, train_fair_with};
use crate::circuit::{build_qnn, build_qnn_large, validate_dim, Circuit, ParamVector, Readout};
use crate::data::{
    encode_sample, encode_to_input_state, load_mnist, prepare_split, BinarizedImage, DatasetSplit, PipelineConfig,
    Provenance, RawImage,
};
use crate::error::{invalid, QnnError, Result};
use crate::qml::{batch_loss_and_grad, sgd_step_paper, sgd_step_plain, split_seed, GradEngine, LabeledInput};
use crate::statevec::PauliKind;

pub const DEFAULT_LEARNING_RATE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Qnn,
    Fair,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Qnn => "qnn",
            ModelKind::Fair => "fair",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `theta - r g`.
    Plain,
    /// `theta - r (loss / |g|^2) g`.
    Paper,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Plain => "plain",
            Optimizer::Paper => "paper",
        })
    }
}

pub fn format_engine(engine: GradEngine) -> String {
    match engine {
        GradEngine::Analytic => "analytic".into(),
        GradEngine::FiniteDiff { .. } => "fd".into(),
        GradEngine::HadamardTest { shots } => format!("hadamard:{shots}"),
    }
}

/// Parses `analytic`, `fd` or `hadamard:SHOTS`.
pub fn parse_engine(s: &str) -> Result<GradEngine> {
    match s {
        "analytic" => Ok(GradEngine::Analytic),
        "fd" => Ok(GradEngine::FiniteDiff { eps: 1e-5 }),
        _ => match s.strip_prefix("hadamard:").map(str::parse::<u64>) {
            Some(Ok(shots)) if shots > 0 => Ok(GradEngine::HadamardTest { shots }),
            _ => invalid(format!("unknown gradient engine `{s}`")),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub grad_engine: GradEngine,
    pub labels: (u8, u8),
    pub seed: u64,
    pub dedup: bool,
    pub threshold: f64,
    #[serde(default = "default_observable")]
    pub observable: PauliKind,
    /// Permits the 5x5 grid.
    #[serde(default)]
    pub allow_large: bool,
}

fn default_observable() -> PauliKind {
    PauliKind::Z
}

impl RunConfig {
    pub fn new(model: ModelKind, dim: usize, epochs: usize, batch_size: usize) -> Self {
        Self {
            model,
            dim,
            epochs,
            batch_size,
            learning_rate: DEFAULT_LEARNING_RATE,
            optimizer: Optimizer::Plain,
            grad_engine: GradEngine::Analytic,
            labels: (3, 6),
            seed: 1,
            dedup: true,
            threshold: 0.5,
            observable: PauliKind::Z,
            allow_large: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_dim(self.dim, self.allow_large)?;
        if self.epochs == 0 {
            return invalid("epochs must be positive");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.labels.0 == self.labels.1 || self.labels.0 > 9 || self.labels.1 > 9 {
            return invalid(format!("labels must be two distinct digits, got {:?}", self.labels));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return invalid(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        match self.grad_engine {
            GradEngine::FiniteDiff { eps } if eps.is_nan() || eps <= 0.0 => {
                invalid("finite-difference step must be positive")
            }
            GradEngine::HadamardTest { shots: 0 } => invalid("hadamard test needs at least one shot"),
            _ => Ok(()),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig { labels: self.labels, dim: self.dim, threshold: self.threshold, dedup: self.dedup }
    }

    /// Short identifier used in file names and tables.
    pub fn tag(&self) -> String {
        format!("{}-d{}-b{}-e{}-s{}", self.model, self.dim, self.batch_size, self.epochs, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub per_epoch: Vec<EpochMetrics>,
    pub wall_time: f64,
    /// Seconds from the start of the run to the end of each epoch.
    #[serde(default)]
    pub epoch_seconds: Vec<f64>,
    pub provenance: Provenance,
}

impl RunRecord {
    pub fn final_accuracy(&self) -> f64 {
        self.per_epoch.last().map_or(0.0, |m| m.test_accuracy)
    }

    pub fn final_loss(&self) -> f64 {
        self.per_epoch.last().map_or(f64::NAN, |m| m.train_loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Load,
    Preprocess,
    Train,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Preprocess => "preprocess",
            Stage::Train => "train",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct RunError {
    pub stage: Stage,
    #[source]
    pub source: QnnError,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, RunError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, RunError> {
        self.map_err(|source| RunError { stage, source })
    }
}

/// Fraction of outputs whose sign matches the label; an output of exactly
/// zero counts as wrong.
pub fn accuracy(outputs: &[f64], labels: &[i8]) -> Result<f64> {
    if outputs.is_empty() {
        return invalid("accuracy of an empty set");
    }
    if outputs.len() != labels.len() {
        return invalid(format!("{} outputs for {} labels", outputs.len(), labels.len()));
    }
    let correct = outputs.iter().zip(labels).filter(|(&y, &l)| (y > 0.0 && l > 0) || (y < 0.0 && l < 0)).count();
    Ok(correct as f64 / outputs.len() as f64)
}

/// QNN readout expectations for a set of samples. Each distinct grid is
/// encoded and simulated once, and states are only alive while in use.
pub fn qnn_outputs(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    samples: &[BinarizedImage],
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let mut slot_of = HashMap::new();
    let mut unique = Vec::new();
    let slots: Vec<usize> = samples
        .iter()
        .map(|s| {
            *slot_of.entry(&s.grid).or_insert_with(|| {
                unique.push(&s.grid);
                unique.len() - 1
            })
        })
        .collect();
    let values = unique
        .par_iter()
        .map(|g| circuit.expectation(params, &encode_to_input_state(g)?, readout))
        .collect::<Result<Vec<_>>>()?;
    Ok(slots.into_iter().map(|i| values[i]).collect())
}

/// Encodes a mini-batch, sharing one state among equal samples.
fn encode_batch(samples: &[&BinarizedImage]) -> Result<(Vec<LabeledInput>, Vec<usize>)> {
    let mut slot_of = HashMap::new();
    let mut encoded = Vec::new();
    let mut slots = Vec::with_capacity(samples.len());
    for s in samples {
        let slot = match slot_of.get(s) {
            Some(&i) => i,
            None => {
                encoded.push(encode_sample(s)?);
                slot_of.insert(*s, encoded.len() - 1);
                encoded.len() - 1
            }
        };
        slots.push(slot);
    }
    Ok((encoded, slots))
}

/// Trained QNN parameters and per-epoch metrics.
pub struct QnnTraining {
    pub circuit: Circuit,
    pub readout: Readout,
    pub params: ParamVector,
    pub per_epoch: Vec<EpochMetrics>,
    pub skipped_steps: usize,
}

/// Mini-batch training of the QNN. The gradient is averaged over each
/// mini-batch; a batch size of 1 is plain per-sample SGD. Test accuracy is
/// always computed from exact expectations.
pub fn train_qnn(config: &RunConfig, split: &DatasetSplit) -> Result<QnnTraining> {
    train_qnn_with(config, split, |_| {})
}

/// [`train_qnn`] calling `on_epoch` after each epoch is evaluated.
pub fn train_qnn_with(
    config: &RunConfig,
    split: &DatasetSplit,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<QnnTraining> {
    config.validate()?;
    let (circuit, readout_qubit) =
        if config.allow_large { build_qnn_large(config.dim)? } else { build_qnn(config.dim)? };
    let readout = Readout { qubit: readout_qubit, observable: config.observable };
    let (train, test) = (&split.train, &split.test);
    if train.is_empty() || test.is_empty() {
        return invalid("training and test sets must be non-empty");
    }
    let test_labels: Vec<i8> = test.iter().map(|s| s.label).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamVector::random(circuit.n_params(), &mut rng);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut per_epoch = Vec::with_capacity(config.epochs);
    let mut skipped_steps = 0;
    let mut step: u64 = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&BinarizedImage> = chunk.iter().map(|&i| &train[i]).collect();
            let (encoded, slots) = encode_batch(&samples)?;
            let batch: Vec<&LabeledInput> = slots.iter().map(|&i| &encoded[i]).collect();
            let (loss, grad) = batch_loss_and_grad(
                &circuit,
                readout,
                &params,
                &batch,
                config.grad_engine,
                split_seed(config.seed, step),
            )?;
            step += 1;
            loss_sum += loss * batch.len() as f64;
            params = match config.optimizer {
                Optimizer::Plain => sgd_step_plain(&params, &grad, config.learning_rate)?,
                Optimizer::Paper => {
                    let (next, status) = sgd_step_paper(&params, &grad, loss, config.learning_rate)?;
                    if status != crate::qml::StepStatus::Applied {
                        skipped_steps += 1;
                    }
                    next
                }
            };
        }
        let outputs = qnn_outputs(&circuit, readout, &params, test)?;
        let m = EpochMetrics {
            train_loss: loss_sum / train.len() as f64,
            test_accuracy: accuracy(&outputs, &test_labels)?,
        };
        on_epoch(&m);
        per_epoch.push(m);
    }
    Ok(QnnTraining { circuit, readout, params, per_epoch, skipped_steps })
}

/// Trains the configured model on an already-loaded dataset.
pub fn run_on_data(
    config: &RunConfig,
    train: &[RawImage],
    test: &[RawImage],
) -> std::result::Result<RunRecord, RunError> {
    config.validate().at(Stage::Config)?;
    let start = Instant::now();
    let split = prepare_split(train, test, config.pipeline()).at(Stage::Preprocess)?;
    run_on_split(config, &split, start)
}

/// Trains on a preprocessed split. `start` marks the beginning of the run
/// for wall-time accounting.
pub fn run_on_split(
    config: &RunConfig,
    split: &DatasetSplit,
    start: Instant,
) -> std::result::Result<RunRecord, RunError> {
    config.validate().at(Stage::Config)?;
    let mut epoch_seconds = Vec::with_capacity(config.epochs);
    let mut tick = |_: &EpochMetrics| epoch_seconds.push(start.elapsed().as_secs_f64());
    let per_epoch = match config.model {
        ModelKind::Qnn => train_qnn_with(config, split, &mut tick).at(Stage::Train)?.per_epoch,
        ModelKind::Fair => {
            if config.optimizer != Optimizer::Plain {
                return Err(RunError {
                    stage: Stage::Config,
                    source: QnnError::InvalidArgument("the baseline only supports the plain optimizer".into()),
                });
            }
            let net = build_fair(config.dim, config.seed).at(Stage::Train)?;
            train_fair_with(net, split, config.epochs, config.batch_size, config.learning_rate, config.seed, &mut tick)
                .at(Stage::Train)?
                .1
        }
    };
    Ok(RunRecord {
        config: config.clone(),
        per_epoch,
        wall_time: start.elapsed().as_secs_f64(),
        epoch_seconds,
        provenance: split.provenance.clone(),
    })
}

/// The record a run with `config.epochs` epochs would produce, cut from a
/// longer run of an otherwise identical configuration. Training consumes
/// the random stream identically epoch by epoch, so the prefix is exact.
pub fn truncate_record(longer: &RunRecord, config: &RunConfig) -> Option<RunRecord> {
    let same_otherwise = RunConfig { epochs: longer.config.epochs, ..config.clone() } == longer.config;
    if !same_otherwise || config.epochs > longer.config.epochs || longer.epoch_seconds.len() < config.epochs {
        return None;
    }
    Some(RunRecord {
        config: config.clone(),
        per_epoch: longer.per_epoch[..config.epochs].to_vec(),
        wall_time: longer.epoch_seconds[config.epochs - 1],
        epoch_seconds: longer.epoch_seconds[..config.epochs].to_vec(),
        provenance: longer.provenance.clone(),
    })
}

/// Full pipeline from the IDX files in `data_path`.
pub fn run_experiment(config: &RunConfig, data_path: &Path) -> std::result::Result<RunRecord, RunError> {
    config.validate().at(Stage::Config)?;
    let (train, test) = load_mnist(data_path).at(Stage::Load)?;
    run_on_data(config, &train, &test)
}

/// The default grid: `{qnn, fair} x dim {2,3,4} x batch {16,32} x epochs {3,10}`.
pub fn default_grid(seed: u64) -> Vec<RunConfig> {
    let mut grid = Vec::new();
    for model in [ModelKind::Qnn, ModelKind::Fair] {
        for dim in [2, 3, 4] {
            for batch in [16, 32] {
                for epochs in [3, 10] {
                    grid.push(RunConfig { seed, ..RunConfig::new(model, dim, epochs, batch) });
                }
            }
        }
    }
    grid
}

/// One line of the sweep's JSONL output: a record or a failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum SweepEntry {
    Ok { record: RunRecord },
    Failed { config: RunConfig, stage: Stage, error: String },
}

pub const RECORDS_FILE: &str = "records.jsonl";

/// Runs every configuration against one loaded dataset, appending each
/// result to `out_dir/records.jsonl` as soon as it finishes. Each line is a
/// complete JSON document, so an interrupted sweep leaves a parseable file.
/// Runs whose records are already present are skipped. A configuration that
/// differs from another grid entry only by having fewer epochs is cut from
/// the longer run (see [`truncate_record`]).
pub fn sweep_on_data(
    grid: &[RunConfig],
    train: &[RawImage],
    test: &[RawImage],
    out_dir: &Path,
    mut progress: impl FnMut(&SweepEntry),
) -> Result<Vec<RunRecord>> {
    if grid.is_empty() {
        return invalid("sweep grid is empty");
    }
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(RECORDS_FILE);
    let mut done: Vec<RunRecord> = Vec::new();
    if path.exists() {
        drop_torn_tail(&path)?;
        done.extend(read_entries(&path)?.into_iter().filter_map(|e| match e {
            SweepEntry::Ok { record } => Some(record),
            SweepEntry::Failed { .. } => None,
        }));
    }
    let mut records: Vec<RunRecord> = Vec::new();
    let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
    let mut persist = |entry: &SweepEntry| -> Result<()> {
        let line = serde_json::to_string(entry).map_err(|e| QnnError::InvalidState(e.to_string()))?;
        writeln!(file, "{line}")?;
        file.flush()?;
        progress(entry);
        Ok(())
    };
    let mut splits: Vec<(PipelineConfig, DatasetSplit)> = Vec::new();
    let mut run = |config: &RunConfig| -> std::result::Result<RunRecord, RunError> {
        let start = Instant::now();
        let pipeline = config.pipeline();
        let split = match splits.iter().find(|(p, _)| *p == pipeline) {
            Some((_, s)) => s.clone(),
            None => {
                let s = prepare_split(train, test, pipeline).at(Stage::Preprocess)?;
                splits.push((pipeline, s.clone()));
                s
            }
        };
        run_on_split(config, &split, start)
    };
    for config in grid {
        if let Some(prev) = done.iter().find(|r| r.config == *config) {
            records.push(prev.clone());
            continue;
        }
        let longest = grid
            .iter()
            .filter(|c| RunConfig { epochs: c.epochs, ..config.clone() } == **c)
            .max_by_key(|c| c.epochs)
            .expect("the grid contains `config` itself");
        let result = if longest.epochs > config.epochs {
            // The anchor is written as soon as it exists; its own turn in
            // the grid then finds it in `done`.
            let anchor = match done.iter().find(|r| r.config == *longest) {
                Some(r) => Ok(r.clone()),
                None => match run(longest) {
                    Ok(r) => {
                        persist(&SweepEntry::Ok { record: r.clone() })?;
                        done.push(r.clone());
                        Ok(r)
                    }
                    Err(e) => Err(e),
                },
            };
            anchor.map(|r| truncate_record(&r, config).expect("sibling differs only in epochs"))
        } else {
            run(config)
        };
        let entry = match result {
            Ok(record) => SweepEntry::Ok { record },
            Err(e) => SweepEntry::Failed { config: config.clone(), stage: e.stage, error: e.source.to_string() },
        };
        persist(&entry)?;
        if let SweepEntry::Ok { record } = entry {
            done.push(record.clone());
            records.push(record);
        }
    }
    Ok(records)
}

/// Truncates a partially written final line so appends start on a fresh one.
fn drop_torn_tail(path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    if bytes.last().is_some_and(|&b| b != b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

/// Loads MNIST from `data_path` and runs [`sweep_on_data`].
pub fn sweep(
    grid: &[RunConfig],
    data_path: &Path,
    out_dir: &Path,
    progress: impl FnMut(&SweepEntry),
) -> Result<Vec<RunRecord>> {
    if grid.is_empty() {
        return invalid("sweep grid is empty");
    }
    let (train, test) = load_mnist(data_path)?;
    sweep_on_data(grid, &train, &test, out_dir, progress)
}

/// Parses a JSONL sweep file, ignoring a torn final line.
pub fn read_entries(path: &Path) -> Result<Vec<SweepEntry>> {
    let reader = BufReader::new(File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => QnnError::NotFound(path.to_owned()),
        _ => QnnError::Io(e),
    })?);
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let last = lines.len().saturating_sub(1);
    let mut entries = Vec::new();
    for (i, line) in lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(e) => entries.push(e),
            Err(_) if i == last => break,
            Err(e) => {
                return Err(QnnError::CorruptData {
                    path: path.to_owned(),
                    offset: i as u64,
                    reason: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    Ok(entries)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    Ok(read_entries(path)?
        .into_iter()
        .filter_map(|e| match e {
            SweepEntry::Ok { record } => Some(record),
            SweepEntry::Failed { .. } => None,
        })
        .collect())
}

/// A flattened per-epoch CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub model: ModelKind,
    pub dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub grad: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub wall_time: f64,
}

pub fn csv_rows(records: &[RunRecord]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for r in records {
        for (i, m) in r.per_epoch.iter().enumerate() {
            rows.push(CsvRow {
                model: r.config.model,
                dim: r.config.dim,
                batch_size: r.config.batch_size,
                epochs: r.config.epochs,
                seed: r.config.seed,
                learning_rate: r.config.learning_rate,
                optimizer: r.config.optimizer,
                grad: format_engine(r.config.grad_engine),
                epoch: i + 1,
                train_loss: m.train_loss,
                test_accuracy: m.test_accuracy,
                wall_time: r.wall_time,
            });
        }
    }
    rows
}

pub fn read_csv_rows(path: &Path) -> Result<Vec<CsvRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().map(|r| r.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> QnnError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => QnnError::Io(io),
        other => QnnError::InvalidState(format!("csv: {other:?}")),
    }
}

/// Seed-averaged final accuracy of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub model: ModelKind,
    pub dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seeds: usize,
    pub mean_accuracy: f64,
    pub mean_final_loss: f64,
    pub mean_wall_time: f64,
}

/// Groups records by `(model, dim, batch, epochs)`, sorted by that key.
pub fn summarize(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut keys: Vec<(ModelKind, usize, usize, usize)> =
        records.iter().map(|r| (r.config.model, r.config.dim, r.config.batch_size, r.config.epochs)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(model, dim, batch_size, epochs)| {
            let cell: Vec<&RunRecord> = records
                .iter()
                .filter(|r| {
                    (r.config.model, r.config.dim, r.config.batch_size, r.config.epochs)
                        == (model, dim, batch_size, epochs)
                })
                .collect();
            let n = cell.len() as f64;
            CellSummary {
                model,
                dim,
                batch_size,
                epochs,
                seeds: cell.len(),
                mean_accuracy: cell.iter().map(|r| r.final_accuracy()).sum::<f64>() / n,
                mean_final_loss: cell.iter().map(|r| r.final_loss()).sum::<f64>() / n,
                mean_wall_time: cell.iter().map(|r| r.wall_time).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn find_cell(
    cells: &[CellSummary],
    model: ModelKind,
    dim: usize,
    batch: usize,
    epochs: usize,
) -> Option<&CellSummary> {
    cells.iter().find(|c| c.model == model && c.dim == dim && c.batch_size == batch && c.epochs == epochs)
}

/// Files written by [`emit_report`].
pub const RUNS_CSV: &str = "runs.csv";
pub const CONFIGS_JSON: &str = "configs.json";
pub const CELLS_CSV: &str = "cells.csv";
pub const BY_DIM_CSV: &str = "accuracy_by_dim.csv";
pub const BY_BATCH_CSV: &str = "accuracy_by_batch.csv";
pub const QNN_VS_FAIR_CSV: &str = "qnn_vs_fair.csv";

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header_if_empty: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if rows.is_empty() {
        w.write_record(header_if_empty).map_err(csv_err)?;
    }
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct DimRow {
    model: ModelKind,
    batch_size: usize,
    epochs: usize,
    acc_dim2: Option<f64>,
    acc_dim3: Option<f64>,
    acc_dim4: Option<f64>,
}

#[derive(Debug, Serialize)]
struct BatchRow {
    model: ModelKind,
    dim: usize,
    epochs: usize,
    acc_batch16: Option<f64>,
    acc_batch32: Option<f64>,
    relative_drop: Option<f64>,
}

#[derive(Debug, Serialize)]
struct VersusRow {
    dim: usize,
    batch_size: usize,
    epochs: usize,
    qnn: Option<f64>,
    fair: Option<f64>,
    fair_minus_qnn: Option<f64>,
}

/// Writes the per-epoch CSV, the config sidecar, per-cell means and the
/// three pivot tables (accuracy by dim, by batch size, QNN vs fair).
pub fn emit_report(records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return invalid("no records to report");
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut out = |name: &str| {
        let p = out_dir.join(name);
        written.push(p.clone());
        p
    };

    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| {
        let key = |r: &RunRecord| (r.config.model, r.config.dim, r.config.batch_size, r.config.epochs, r.config.seed);
        key(a).cmp(&key(b))
    });
    write_csv(&out(RUNS_CSV), &csv_rows(&sorted), &[])?;
    let configs: Vec<&RunConfig> = sorted.iter().map(|r| &r.config).collect();
    let json = serde_json::to_string_pretty(&configs).map_err(|e| QnnError::InvalidState(e.to_string()))?;
    fs::write(out(CONFIGS_JSON), json)?;

    let cells = summarize(&sorted);
    write_csv(&out(CELLS_CSV), &cells, &[])?;

    let acc = |m, d, b, e| find_cell(&cells, m, d, b, e).map(|c| c.mean_accuracy);
    let mut dims: Vec<(ModelKind, usize, usize)> = cells.iter().map(|c| (c.model, c.batch_size, c.epochs)).collect();
    dims.sort();
    dims.dedup();
    let by_dim: Vec<DimRow> = dims
        .into_iter()
        .map(|(model, batch_size, epochs)| DimRow {
            model,
            batch_size,
            epochs,
            acc_dim2: acc(model, 2, batch_size, epochs),
            acc_dim3: acc(model, 3, batch_size, epochs),
            acc_dim4: acc(model, 4, batch_size, epochs),
        })
        .collect();
    write_csv(&out(BY_DIM_CSV), &by_dim, &[])?;

    let mut batches: Vec<(ModelKind, usize, usize)> = cells.iter().map(|c| (c.model, c.dim, c.epochs)).collect();
    batches.sort();
    batches.dedup();
    let by_batch: Vec<BatchRow> = batches
        .into_iter()
        .map(|(model, dim, epochs)| {
            let (b16, b32) = (acc(model, dim, 16, epochs), acc(model, dim, 32, epochs));
            BatchRow {
                model,
                dim,
                epochs,
                acc_batch16: b16,
                acc_batch32: b32,
                relative_drop: b16.zip(b32).map(|(a, b)| (a - b) / a),
            }
        })
        .collect();
    write_csv(&out(BY_BATCH_CSV), &by_batch, &[])?;

    let mut pairs: Vec<(usize, usize, usize)> = cells.iter().map(|c| (c.dim, c.batch_size, c.epochs)).collect();
    pairs.sort();
    pairs.dedup();
    let versus: Vec<VersusRow> = pairs
        .into_iter()
        .map(|(dim, batch_size, epochs)| {
            let (q, f) = (acc(ModelKind::Qnn, dim, batch_size, epochs), acc(ModelKind::Fair, dim, batch_size, epochs));
            VersusRow { dim, batch_size, epochs, qnn: q, fair: f, fair_minus_qnn: q.zip(f).map(|(q, f)| f - q) }
        })
        .collect();
    write_csv(&out(QNN_VS_FAIR_CSV), &versus, &[])?;
    Ok(written)
}
