//! Training with one retained intermediate model per epoch.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{DatasetHandle, Example, Target};
use crate::error::{Error, Result};
use crate::nn::{self, forward, Loss, ModelSpec, Optimizer, OptimizerConfig, ParamSet, Task, Wrt};
use crate::parallel::{map_indexed, Parallelism};
use crate::rng::seeded_indexed;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn checkpoint_file_name(epoch: u32) -> String {
    format!("ckpt_{epoch:04}.trck")
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub dataset_id: String,
    pub spec: ModelSpec,
    /// Where to persist checkpoints; in-memory only when `None`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Deployed model epoch, defaults to the last one.
    pub target_epoch: Option<u32>,
    pub parallelism: Parallelism,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 2 {
            return Err(Error::Config(format!(
                "need at least 2 epochs so one intermediate model differs from the target, got {}",
                self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(t) = self.target_epoch {
            if t == 0 || t as usize > self.epochs {
                return Err(Error::Config(format!("target epoch {t} outside 1..={}", self.epochs)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: u32,
    pub params: Arc<ParamSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Metric {
    Accuracy(f64),
    Mse(f64),
}

impl Metric {
    pub fn value(self) -> f64 {
        match self {
            Metric::Accuracy(v) | Metric::Mse(v) => v,
        }
    }
}

/// Manifest written next to the checkpoint files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub epochs: u32,
    pub target_epoch: u32,
    pub files: Vec<String>,
    pub train_loss: Vec<f64>,
    pub val_metric: Vec<Metric>,
}

/// Ordered intermediate models of one training run. Immutable once built
/// and cheap to clone.
#[derive(Debug, Clone)]
pub struct CheckpointSet {
    spec: ModelSpec,
    checkpoints: Vec<Checkpoint>,
    target_epoch: u32,
    train_loss: Vec<f64>,
    val_metric: Vec<Metric>,
    seed: u64,
    dataset_id: String,
}

impl CheckpointSet {
    /// Epochs must run `1..=K` without gaps.
    pub fn new(spec: ModelSpec, checkpoints: Vec<Checkpoint>, target_epoch: u32) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::InvalidArgument("empty checkpoint set".into()));
        }
        for (i, c) in checkpoints.iter().enumerate() {
            if c.epoch as usize != i + 1 {
                return Err(Error::MissingCheckpoint(i as u32 + 1));
            }
            c.params.check(&spec)?;
        }
        if target_epoch == 0 || target_epoch as usize > checkpoints.len() {
            return Err(Error::InvalidArgument(format!(
                "target epoch {target_epoch} outside 1..={}",
                checkpoints.len()
            )));
        }
        Ok(Self {
            spec,
            checkpoints,
            target_epoch,
            train_loss: Vec::new(),
            val_metric: Vec::new(),
            seed: 0,
            dataset_id: String::new(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Number of retained models, `K`.
    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn target_epoch(&self) -> u32 {
        self.target_epoch
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn params(&self, epoch: u32) -> Result<&ParamSet> {
        self.checkpoints
            .get((epoch as usize).wrapping_sub(1))
            .map(|c| c.params.as_ref())
            .ok_or(Error::MissingCheckpoint(epoch))
    }

    pub fn target_params(&self) -> &ParamSet {
        &self.checkpoints[self.target_epoch as usize - 1].params
    }

    /// Epochs other than the target, in order.
    pub fn intermediate_epochs(&self) -> Vec<u32> {
        (1..=self.len() as u32).filter(|&e| e != self.target_epoch).collect()
    }

    pub fn train_loss(&self) -> &[f64] {
        &self.train_loss
    }

    pub fn val_metric(&self) -> &[Metric] {
        &self.val_metric
    }

    pub fn with_target_epoch(mut self, epoch: u32) -> Result<Self> {
        if epoch == 0 || epoch as usize > self.len() {
            return Err(Error::InvalidArgument(format!("target epoch {epoch} outside 1..={}", self.len())));
        }
        self.target_epoch = epoch;
        Ok(self)
    }

    /// Keeps this set's intermediate models but swaps in another set's
    /// deployed model: an attacker's surrogate trajectory around the real
    /// target.
    pub fn with_target_from(&self, other: &CheckpointSet) -> Result<Self> {
        if other.spec != self.spec {
            return Err(Error::InvalidArgument("checkpoint sets use different models".into()));
        }
        let mut out = self.clone();
        let idx = out.target_epoch as usize - 1;
        out.checkpoints[idx] = Checkpoint {
            epoch: out.target_epoch,
            params: Arc::new(other.target_params().clone()),
        };
        Ok(out)
    }

    /// Keeps epochs `1..=n` and makes `n` the target.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n < 2 || n > self.len() {
            return Err(Error::InvalidArgument(format!("cannot keep {n} of {} checkpoints", self.len())));
        }
        let mut out = self.clone();
        out.checkpoints.truncate(n);
        out.target_epoch = n as u32;
        out.train_loss.truncate(n);
        out.val_metric.truncate(n);
        Ok(out)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            model: self.spec.to_string(),
            dataset: self.dataset_id.clone(),
            seed: self.seed,
            epochs: self.len() as u32,
            target_epoch: self.target_epoch,
            files: self.checkpoints.iter().map(|c| checkpoint_file_name(c.epoch)).collect(),
            train_loss: self.train_loss.clone(),
            val_metric: self.val_metric.clone(),
        }
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for c in &self.checkpoints {
            save_checkpoint(&dir.join(checkpoint_file_name(c.epoch)), &self.spec, c.epoch, &c.params)?;
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let spec: ModelSpec = manifest.model.parse()?;
        let mut checkpoints = Vec::with_capacity(manifest.epochs as usize);
        for epoch in 1..=manifest.epochs {
            let file = dir.join(checkpoint_file_name(epoch));
            if !file.exists() {
                return Err(Error::MissingCheckpoint(epoch));
            }
            let (params, meta) = load_checkpoint(&file)?;
            if meta.epoch != epoch || meta.spec != spec {
                return Err(Error::Dataset(format!(
                    "{} does not belong to this run",
                    file.display()
                )));
            }
            checkpoints.push(Checkpoint {
                epoch,
                params: Arc::new(params),
            });
        }
        let mut set = Self::new(spec, checkpoints, manifest.target_epoch)?;
        set.train_loss = manifest.train_loss;
        set.val_metric = manifest.val_metric;
        set.seed = manifest.seed;
        set.dataset_id = manifest.dataset;
        Ok(set)
    }
}

fn loss_for(task: Task, target: &Target) -> Result<Loss> {
    match (task, target) {
        (Task::Classification, Target::Class(c)) => Ok(Loss::CrossEntropy(*c)),
        (Task::Regression, Target::Value(v)) => Ok(Loss::Mse(v.clone())),
        _ => Err(Error::InvalidArgument(format!("{task} model given mismatched targets"))),
    }
}

/// Trains `config.epochs` epochs, snapshotting the parameters after the last
/// optimizer step of each epoch. Deterministic for a fixed seed: the
/// initialization and every epoch's shuffle come from seeded streams and
/// per-batch gradients are reduced in example order.
pub fn train_with_checkpoints(config: &TrainConfig, data: &DatasetHandle) -> Result<CheckpointSet> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Dataset("empty training split".into()));
    }
    let spec = &config.spec;
    if spec.input_shape() != data.feature_shape.as_slice() {
        return Err(Error::shape(
            "input",
            format!("model expects {:?}, dataset has {:?}", spec.input_shape(), data.feature_shape),
        ));
    }
    let mut params = ParamSet::init(spec, config.seed);
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut checkpoints = Vec::with_capacity(config.epochs);
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut val_metric = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=config.epochs as u32 {
        order.sort_unstable();
        order.shuffle(&mut seeded_indexed(config.seed, "epoch-shuffle", epoch as u64));
        let mut loss_sum = 0.0f64;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let examples: Vec<&Example> = batch.iter().map(|&i| &data.train[i]).collect();
            let per_example = map_indexed(&examples, config.parallelism, |_, ex| {
                let loss = loss_for(spec.task(), &ex.target)?;
                nn::gradients(spec, &params, &ex.x, &loss, Wrt::Params)
            });
            let mut sum: Option<Vec<Vec<f32>>> = None;
            for g in per_example {
                let g = g.map_err(|e| match e {
                    Error::NonFinite { context } => Error::non_finite(format!(
                        "{context} (epoch {epoch}, batch {batch_idx})"
                    )),
                    other => other,
                })?;
                if !g.loss.is_finite() {
                    return Err(Error::non_finite(format!("loss (epoch {epoch}, batch {batch_idx})")));
                }
                loss_sum += g.loss;
                let gp = g.params.expect("parameter gradients requested");
                match sum.as_mut() {
                    None => sum = Some(gp.tensors().map(|t| t.data().to_vec()).collect()),
                    Some(acc) => {
                        for (a, t) in acc.iter_mut().zip(gp.tensors()) {
                            a.iter_mut().zip(t.data()).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f32;
            let entries = params
                .iter()
                .zip(sum.expect("non-empty batch"))
                .map(|((name, t), mut g)| {
                    g.iter_mut().for_each(|v| *v *= scale);
                    (name.to_string(), Tensor::from_parts_unchecked(t.shape().to_vec(), g))
                })
                .collect();
            optimizer
                .step(&mut params, &ParamSet::new(entries)?)
                .map_err(|_| Error::non_finite(format!("update (epoch {epoch}, batch {batch_idx})")))?;
        }
        train_loss.push(loss_sum / data.train.len() as f64);
        if !data.val.is_empty() {
            val_metric.push(evaluate_model(spec, &params, &data.val)?);
        }
        checkpoints.push(Checkpoint {
            epoch,
            params: Arc::new(params.clone()),
        });
    }

    let target = config.target_epoch.unwrap_or(config.epochs as u32);
    let mut set = CheckpointSet::new(spec.clone(), checkpoints, target)?;
    set.train_loss = train_loss;
    set.val_metric = val_metric;
    set.seed = config.seed;
    set.dataset_id = config.dataset_id.clone();
    if let Some(dir) = &config.checkpoint_dir {
        set.save_dir(dir)?;
    }
    Ok(set)
}

pub fn predict_class(spec: &ModelSpec, params: &ParamSet, x: &Tensor) -> Result<usize> {
    Ok(forward(spec, params, x)?.argmax())
}

/// Accuracy for classification, mean squared error for regression.
pub fn evaluate_model(spec: &ModelSpec, params: &ParamSet, split: &[Example]) -> Result<Metric> {
    if split.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty split".into()));
    }
    match spec.task() {
        Task::Classification => {
            let mut correct = 0usize;
            for ex in split {
                let label = ex
                    .target
                    .class()
                    .ok_or_else(|| Error::InvalidArgument("accuracy needs class labels".into()))?;
                if predict_class(spec, params, &ex.x)? == label {
                    correct += 1;
                }
            }
            Ok(Metric::Accuracy(correct as f64 / split.len() as f64))
        }
        Task::Regression => {
            let mut total = 0.0;
            for ex in split {
                let Target::Value(v) = &ex.target else {
                    return Err(Error::InvalidArgument("mse needs regression targets".into()));
                };
                let y = forward(spec, params, &ex.x)?;
                total += nn::loss::mse(v, y.data());
            }
            Ok(Metric::Mse(total / split.len() as f64))
        }
    }
}
