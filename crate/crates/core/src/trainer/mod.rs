//! Seeded training trials, evaluation, checkpoints and experiment manifests.

mod checkpoint;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{BatchPlan, DataError, Dataset, DatasetName, BATCH_SIZE};
use crate::models::{InitSpec, Model, ModelError, ModelSpec};
use crate::nn::{adam_step, split_seed, AdamConfig, AdamState, NnError, RngState, Tensor};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_EPOCHS: usize = 20;
const EVAL_CHUNK: usize = 250;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io { path: path.to_path_buf(), source }
    }
}

fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}

fn default_batch() -> usize {
    BATCH_SIZE
}

fn default_trials() -> usize {
    1
}

fn default_parallelism() -> usize {
    1
}

/// One experiment: a population of identically configured trials.
///
/// `parallelism` only affects scheduling, so it is neither serialized into
/// manifests nor part of the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub dataset: DatasetName,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Train on this many examples of a seeded shuffle of the train split.
    #[serde(default)]
    pub subset: Option<usize>,
    /// Evaluate per-epoch accuracy on this many test examples; the final
    /// accuracy always uses the full test split.
    #[serde(default)]
    pub eval_subset: Option<usize>,
    /// Save a checkpoint after every epoch, not only the final one.
    #[serde(default)]
    pub keep_history: bool,
    #[serde(default)]
    pub strict_paper_mode: bool,
    #[serde(default = "default_parallelism", skip_serializing)]
    pub parallelism: usize,
}

impl TrainConfig {
    pub fn new(model: ModelSpec, dataset: DatasetName) -> Self {
        TrainConfig {
            model,
            dataset,
            epochs: DEFAULT_EPOCHS,
            batch_size: BATCH_SIZE,
            adam: AdamConfig::default(),
            trials: 1,
            base_seed: 0,
            subset: None,
            eval_subset: None,
            keep_history: false,
            strict_paper_mode: false,
            parallelism: 1,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        if self.subset == Some(0) || self.eval_subset == Some(0) {
            return bad("subset sizes must be positive");
        }
        if self.model.input_shape != self.dataset.image_shape() {
            return bad(&format!(
                "model input {:?} does not match {} images {:?}",
                self.model.input_shape,
                self.dataset,
                self.dataset.image_shape()
            ));
        }
        if self.strict_paper_mode
            && (self.epochs != DEFAULT_EPOCHS || self.batch_size != BATCH_SIZE || self.adam != AdamConfig::default())
        {
            return bad("strict paper mode fixes epochs=20, batch_size=100 and the default Adam settings");
        }
        self.model.validate(self.strict_paper_mode)?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON of everything that affects results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.model = c.model.resolved();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }

    /// Seed of trial `id`.
    pub fn trial_seed(&self, id: usize) -> u64 {
        split_seed(self.base_seed, id as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub seed: u64,
    pub spec: ModelSpec,
    pub init: InitSpec,
    /// Mean minibatch loss per epoch.
    pub train_loss: Vec<f64>,
    /// Test accuracy (%) after each epoch.
    pub test_accuracy: Vec<f64>,
    /// Accuracy (%) of the final weights on the full test split.
    pub final_accuracy: f64,
    /// Relative to the manifest's directory.
    pub checkpoint: Option<String>,
    pub wall_time_s: f64,
    pub diverged: bool,
    /// Set when the trial failed outright.
    pub error: Option<String>,
    /// Accuracy group, filled in by analysis.
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub toolkit_version: String,
    pub config_hash: String,
    pub config: TrainConfig,
    pub train_size: usize,
    /// Examples per per-epoch evaluation.
    pub eval_size: usize,
    /// Examples in the final evaluation.
    pub test_size: usize,
    /// Examples left out of each epoch by the full-batch rule.
    pub dropped_per_epoch: usize,
    pub trials: Vec<TrialRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ExperimentManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| TrainError::io(parent, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| TrainError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| TrainError::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

/// Knobs that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory receiving `checkpoints/`; `None` keeps nothing on disk.
    pub out_dir: Option<PathBuf>,
    /// Suppress per-epoch progress lines on stderr.
    pub quiet: bool,
    /// Record wall time as 0 so manifests are byte-reproducible.
    pub fixed_clock: bool,
}

/// Train and test data for one experiment.
pub struct Data<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    /// Per-epoch evaluation set; defaults to `test`.
    pub eval: Option<&'a Dataset>,
}

/// Percentage of examples whose argmax logit equals the label.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<f64, TrainError> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for start in (0..ds.len()).step_by(EVAL_CHUNK) {
        let batch = ds.slice(start, start + EVAL_CHUNK);
        let logits = model.forward(&batch.x)?;
        correct += count_correct(&logits, &batch.labels);
    }
    Ok(accuracy(correct, ds.len()))
}

pub fn accuracy(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

/// First index of the largest entry; NaNs never win.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] || row[best].is_nan() && !v.is_nan() {
            best = i;
        }
    }
    best
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.dim(1);
    logits.data().chunks_exact(k).zip(labels).filter(|(row, &l)| argmax(row) == l).count()
}

pub fn checkpoint_name(trial_id: usize) -> String {
    format!("checkpoints/trial_{trial_id:04}.pscp")
}

fn history_name(trial_id: usize, epoch: usize) -> String {
    format!("checkpoints/trial_{trial_id:04}/epoch_{epoch:02}.pscp")
}

/// Runs one trial: init, `epochs` passes of shuffled minibatch Adam with a
/// test evaluation after each, final full-test evaluation and checkpoint.
pub fn run_trial(config: &TrainConfig, trial_id: usize, data: &Data<'_>, opts: &RunOptions) -> Result<TrialRecord, TrainError> {
    let started = Instant::now();
    let seed = config.trial_seed(trial_id);
    let root = RngState::new(seed);
    let spec = config.model.clone().resolved();
    let mut model = Model::build(&spec, config.strict_paper_mode, &mut root.split(0))?;
    let plan = BatchPlan::new(config.batch_size, root.split(1).next_u64())?;
    let mut states: Vec<AdamState> = model.params().iter().map(|p| AdamState::new(p.tensor.shape(), config.adam)).collect();
    let eval_set = data.eval.unwrap_or(data.test);

    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut test_accuracy = Vec::with_capacity(config.epochs);
    let mut diverged = false;
    'epochs: for epoch in 0..config.epochs {
        let mut sum = 0.0;
        let mut steps = 0usize;
        for batch in crate::data::batches(data.train, &plan, epoch) {
            let (loss, grads) = model.backward(&batch)?;
            sum += loss;
            steps += 1;
            if !loss.is_finite() {
                diverged = true;
            }
            for ((p, g), st) in model.params_mut().iter_mut().zip(&grads).zip(&mut states) {
                match adam_step(&mut p.tensor, g, st) {
                    Ok(()) => {}
                    Err(NnError::NonFiniteGradient { .. }) => diverged = true,
                    Err(e) => return Err(e.into()),
                }
            }
            if diverged {
                train_loss.push(f64::NAN);
                test_accuracy.push(evaluate(&model, eval_set)?);
                break 'epochs;
            }
        }
        let mean = if steps > 0 { sum / steps as f64 } else { f64::NAN };
        let acc = evaluate(&model, eval_set)?;
        if !opts.quiet {
            eprintln!("{}", progress_line(trial_id, epoch, mean, acc));
        }
        train_loss.push(mean);
        test_accuracy.push(acc);
        if config.keep_history {
            if let Some(dir) = &opts.out_dir {
                save_checkpoint(&model, seed, &dir.join(history_name(trial_id, epoch)))?;
            }
        }
    }

    let final_accuracy = match (data.eval.is_none(), test_accuracy.last()) {
        (true, Some(&acc)) => acc,
        _ => evaluate(&model, data.test)?,
    };
    let checkpoint = match &opts.out_dir {
        Some(dir) => {
            let rel = checkpoint_name(trial_id);
            save_checkpoint(&model, seed, &dir.join(&rel))?;
            Some(rel)
        }
        None => None,
    };
    Ok(TrialRecord {
        trial_id,
        seed,
        init: spec.init(),
        spec,
        train_loss,
        test_accuracy,
        final_accuracy,
        checkpoint,
        wall_time_s: if opts.fixed_clock { 0.0 } else { started.elapsed().as_secs_f64() },
        diverged,
        error: None,
        group: None,
    })
}

fn failed_record(config: &TrainConfig, trial_id: usize, err: &TrainError) -> TrialRecord {
    let spec = config.model.clone().resolved();
    TrialRecord {
        trial_id,
        seed: config.trial_seed(trial_id),
        init: spec.init(),
        spec,
        train_loss: Vec::new(),
        test_accuracy: Vec::new(),
        final_accuracy: 0.0,
        checkpoint: None,
        wall_time_s: 0.0,
        diverged: false,
        error: Some(err.to_string()),
        group: None,
    }
}

/// Applies `subset`/`eval_subset` to loaded splits.
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub eval: Option<Dataset>,
}

impl PreparedData {
    pub fn new(config: &TrainConfig, train: Dataset, test: Dataset) -> Self {
        let train = match config.subset {
            Some(n) => train.subset(n, config.base_seed),
            None => train,
        };
        let eval = config.eval_subset.filter(|&n| n < test.len()).map(|n| test.subset(n, config.base_seed));
        PreparedData { train, test, eval }
    }

    pub fn view(&self) -> Data<'_> {
        Data { train: &self.train, test: &self.test, eval: self.eval.as_ref() }
    }
}

/// Runs every trial (on `config.parallelism` threads) and assembles the manifest.
/// A failing trial is recorded with its error instead of aborting the run.
pub fn run_experiment(config: &TrainConfig, data: &PreparedData, opts: &RunOptions) -> Result<ExperimentManifest, TrainError> {
    config.validate()?;
    let view = data.view();
    let run = |id: usize| run_trial(config, id, &view, opts).unwrap_or_else(|e| failed_record(config, id, &e));
    let trials: Vec<TrialRecord> = if config.parallelism <= 1 {
        (0..config.trials).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| TrainError::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| (0..config.trials).into_par_iter().map(run).collect())
    };

    let plan = BatchPlan::new(config.batch_size, 0)?;
    let mut warnings = Vec::new();
    let dropped = plan.dropped(data.train.len());
    if dropped > 0 {
        warnings.push(format!("{dropped} training examples per epoch fall in a dropped short batch"));
    }
    let eval_size = data.eval.as_ref().map_or(data.test.len(), Dataset::len);
    let mut resolved = config.clone();
    resolved.model = resolved.model.resolved();
    let manifest = ExperimentManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        toolkit_version: TOOLKIT_VERSION.to_string(),
        config_hash: config.hash(),
        config: resolved,
        train_size: data.train.len(),
        eval_size,
        test_size: data.test.len(),
        dropped_per_epoch: dropped,
        trials,
        warnings,
    };
    if let Some(dir) = &opts.out_dir {
        manifest.write(&dir.join("manifest.json"))?;
    }
    Ok(manifest)
}

/// Machine-parseable progress line, e.g. `trial=3 epoch=7 loss=0.1234 acc=97.10`.
pub fn progress_line(trial_id: usize, epoch: usize, loss: f64, acc: f64) -> String {
    format!("trial={trial_id} epoch={epoch} loss={loss:.4} acc={acc:.2}")
}

#[cfg(test)]
mod tests;
