//! Synthetic-loss trajectories and softmax imprints across intermediate
//! models.
//!
//! The deployed model's output stands in for the unavailable label: each
//! intermediate model's output is scored against it, one value per epoch.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::data::{Example, Target};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_soft, forward, softmax_f64, Task};
use crate::parallel::{map_indexed, Parallelism};
use crate::rng::seeded;
use crate::tensor::Tensor;
use crate::train::CheckpointSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthesisMode {
    /// Every intermediate model against the deployed model.
    Anchored,
    /// Each epoch against the next one.
    Consecutive,
}

impl fmt::Display for SynthesisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthesisMode::Anchored => "anchored",
            SynthesisMode::Consecutive => "consecutive",
        })
    }
}

impl FromStr for SynthesisMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anchored" | "target-anchored" => Ok(SynthesisMode::Anchored),
            "consecutive" => Ok(SynthesisMode::Consecutive),
            other => Err(Error::Config(format!("unknown trajectory mode `{other}`"))),
        }
    }
}

/// A fixed-length multichannel sequence: the shared input format of the
/// autoencoder.
pub trait Signal {
    fn steps(&self) -> usize;
    fn channels(&self) -> usize;
    /// Step-major values, `steps * channels` long.
    fn signal(&self) -> &[f64];
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTrajectory {
    values: Vec<f64>,
    example_id: usize,
    label: Option<Target>,
    mode: SynthesisMode,
    task: Task,
    /// Elements kept after truncation; the full length otherwise.
    n_used: usize,
}

impl LossTrajectory {
    pub fn new(values: Vec<f64>, example_id: usize, mode: SynthesisMode, task: Task) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("trajectory element {} of example {example_id}", i + 1)));
        }
        Ok(Self {
            n_used: values.len(),
            values,
            example_id,
            label: None,
            mode,
            task,
        })
    }

    pub fn with_label(mut self, label: Target) -> Self {
        self.label = Some(label);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn example_id(&self) -> usize {
        self.example_id
    }

    pub fn label(&self) -> Option<&Target> {
        self.label.as_ref()
    }

    pub fn mode(&self) -> SynthesisMode {
        self.mode
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_used(&self) -> usize {
        self.n_used
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Signal for LossTrajectory {
    fn steps(&self) -> usize {
        self.values.len()
    }

    fn channels(&self) -> usize {
        1
    }

    fn signal(&self) -> &[f64] {
        &self.values
    }
}

/// Softmax outputs of every intermediate model, one column per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprintMatrix {
    classes: usize,
    /// Epoch-major: `data[k * classes + c]`.
    data: Vec<f64>,
    example_id: usize,
    label: Option<Target>,
}

impl ImprintMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>, example_id: usize) -> Result<Self> {
        let classes = columns.first().map(Vec::len).unwrap_or(0);
        if classes == 0 {
            return Err(Error::InvalidArgument("empty imprint".into()));
        }
        if columns.iter().any(|c| c.len() != classes) {
            return Err(Error::InvalidArgument("imprint columns differ in length".into()));
        }
        Ok(Self {
            classes,
            data: columns.concat(),
            example_id,
            label: None,
        })
    }

    pub fn with_label(mut self, label: Target) -> Self {
        self.label = Some(label);
        self
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn epochs(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.data[k * self.classes..(k + 1) * self.classes]
    }

    pub fn get(&self, class: usize, k: usize) -> f64 {
        self.data[k * self.classes + class]
    }

    pub fn example_id(&self) -> usize {
        self.example_id
    }

    pub fn label(&self) -> Option<&Target> {
        self.label.as_ref()
    }
}

impl Signal for ImprintMatrix {
    fn steps(&self) -> usize {
        self.epochs()
    }

    fn channels(&self) -> usize {
        self.classes
    }

    fn signal(&self) -> &[f64] {
        &self.data
    }
}

pub trait Truncate: Sized {
    /// Keeps the first `first_n` epochs.
    fn truncate_epochs(&self, first_n: usize) -> Result<Self>;
}

fn check_prefix(first_n: usize, len: usize) -> Result<()> {
    if first_n == 0 || first_n > len {
        return Err(Error::InvalidArgument(format!("cannot keep first {first_n} of {len} epochs")));
    }
    Ok(())
}

impl Truncate for LossTrajectory {
    fn truncate_epochs(&self, first_n: usize) -> Result<Self> {
        check_prefix(first_n, self.len())?;
        let mut out = self.clone();
        out.values.truncate(first_n);
        out.n_used = first_n;
        Ok(out)
    }
}

impl Truncate for ImprintMatrix {
    fn truncate_epochs(&self, first_n: usize) -> Result<Self> {
        check_prefix(first_n, self.epochs())?;
        let mut out = self.clone();
        out.data.truncate(first_n * self.classes);
        Ok(out)
    }
}

/// Raw outputs of every checkpoint, in epoch order.
pub fn epoch_outputs(set: &CheckpointSet, x: &Tensor) -> Result<Vec<Vec<f32>>> {
    set.checkpoints()
        .iter()
        .map(|c| {
            forward(set.spec(), &c.params, x)
                .map(Tensor::into_data)
                .map_err(|e| tag_epoch(e, c.epoch))
        })
        .collect()
}

/// The synthetic loss between a reference output and another model's output.
pub fn synthetic_loss(task: Task, reference: &[f32], other: &[f32]) -> Result<f64> {
    match task {
        Task::Classification => cross_entropy_soft(&softmax_f64(reference), &softmax_f64(other)),
        Task::Regression => Ok(mse_f64(reference, other)),
    }
}

fn mse_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64
}

/// Pairs `(reference epoch, scored epoch)` in trajectory order, 1-based.
pub fn epoch_pairs(set: &CheckpointSet, mode: SynthesisMode) -> Vec<(u32, u32)> {
    match mode {
        SynthesisMode::Anchored => {
            let t = set.target_epoch();
            set.intermediate_epochs().into_iter().map(|k| (t, k)).collect()
        }
        SynthesisMode::Consecutive => (1..set.len() as u32).map(|k| (k + 1, k)).collect(),
    }
}

pub fn trajectory_values(set: &CheckpointSet, x: &Tensor, mode: SynthesisMode) -> Result<Vec<f64>> {
    let outputs = epoch_outputs(set, x)?;
    let task = set.spec().task();
    let probs: Option<Vec<Vec<f64>>> =
        (task == Task::Classification).then(|| outputs.iter().map(|o| softmax_f64(o)).collect());
    epoch_pairs(set, mode)
        .into_iter()
        .map(|(r, k)| {
            let (r, k) = (r as usize - 1, k as usize - 1);
            match &probs {
                Some(p) => cross_entropy_soft(&p[r], &p[k]),
                None => Ok(mse_f64(&outputs[r], &outputs[k])),
            }
        })
        .collect()
}

pub fn extract_trajectory(set: &CheckpointSet, example: &Example, mode: SynthesisMode) -> Result<LossTrajectory> {
    let values = trajectory_values(set, &example.x, mode)?;
    Ok(LossTrajectory::new(values, example.id, mode, set.spec().task())?.with_label(example.target.clone()))
}

pub fn extract_softmax_imprint(set: &CheckpointSet, example: &Example) -> Result<ImprintMatrix> {
    if set.spec().task() != Task::Classification {
        return Err(Error::InvalidArgument("softmax imprints need a classification model".into()));
    }
    let outputs = epoch_outputs(set, &example.x)?;
    let columns = set
        .intermediate_epochs()
        .into_iter()
        .map(|k| softmax_f64(&outputs[k as usize - 1]))
        .collect();
    Ok(ImprintMatrix::from_columns(columns, example.id)?.with_label(example.target.clone()))
}

/// Extracts every example in order. The first failure is returned tagged
/// with its example id.
pub fn batch_extract(
    set: &CheckpointSet,
    examples: &[Example],
    mode: SynthesisMode,
    par: Parallelism,
) -> Result<Vec<LossTrajectory>> {
    map_indexed(examples, par, |_, ex| {
        extract_trajectory(set, ex, mode).map_err(|e| e.for_example(ex.id))
    })
    .into_iter()
    .collect()
}

pub fn batch_extract_imprints(set: &CheckpointSet, examples: &[Example], par: Parallelism) -> Result<Vec<ImprintMatrix>> {
    map_indexed(examples, par, |_, ex| {
        extract_softmax_imprint(set, ex).map_err(|e| e.for_example(ex.id))
    })
    .into_iter()
    .collect()
}

/// Whether the deployed model gets this example right. Regression outputs
/// count as correct within `tolerance` relative error.
pub fn is_correct(set: &CheckpointSet, example: &Example, tolerance: f64) -> Result<bool> {
    let out = forward(set.spec(), set.target_params(), &example.x)?;
    Ok(match &example.target {
        Target::Class(c) => out.argmax() == *c,
        Target::Value(v) => v
            .iter()
            .zip(out.data())
            .all(|(&y, &p)| (p as f64 - y as f64).abs() <= tolerance * (y as f64).abs().max(1e-6)),
    })
}

/// Draws `n` examples the deployed model handles correctly, in a seeded
/// random order.
pub fn select_benign_pool(
    set: &CheckpointSet,
    split: &[Example],
    n: usize,
    seed: u64,
    regression_tolerance: f64,
) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..split.len()).collect();
    order.shuffle(&mut seeded(seed, "benign-pool"));
    let mut picked = Vec::with_capacity(n);
    for i in order {
        if picked.len() == n {
            break;
        }
        if is_correct(set, &split[i], regression_tolerance)? {
            picked.push(split[i].id);
        }
    }
    if picked.len() < n {
        return Err(Error::InsufficientBenign {
            needed: n,
            found: picked.len(),
        });
    }
    Ok(picked)
}

fn label_field(label: Option<&Target>) -> String {
    match label {
        None => String::new(),
        Some(Target::Class(c)) => c.to_string(),
        Some(Target::Value(v)) => v.iter().map(|x| format!("{x:.8e}")).collect::<Vec<_>>().join("|"),
    }
}

fn parse_label(field: &str, task: Task) -> Result<Option<Target>> {
    if field.is_empty() {
        return Ok(None);
    }
    let bad = || Error::Dataset(format!("bad label `{field}`"));
    Ok(Some(match task {
        Task::Classification => Target::Class(field.parse().map_err(|_| bad())?),
        Task::Regression => Target::Value(
            field
                .split('|')
                .map(|v| v.parse::<f32>().map_err(|_| bad()))
                .collect::<Result<_>>()?,
        ),
    }))
}

pub fn write_trajectories_csv(path: &Path, trajectories: &[LossTrajectory]) -> Result<()> {
    let width = trajectories.iter().map(LossTrajectory::len).max().unwrap_or(0);
    let mut out = String::from("example_id,label,mode,n_used");
    for k in 1..=width {
        out.push_str(&format!(",l_{k:03}"));
    }
    out.push('\n');
    for t in trajectories {
        out.push_str(&format!("{},{},{},{}", t.example_id, label_field(t.label()), t.mode, t.n_used));
        for v in &t.values {
            out.push_str(&format!(",{v:.8e}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_trajectories_csv(path: &Path, task: Task) -> Result<Vec<LossTrajectory>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Dataset(format!("{} is empty", path.display())))?;
    if !header.starts_with("example_id,label,mode,n_used") {
        return Err(Error::Dataset(format!("{}: not a trajectory file", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(row, line)| {
            let bad = |what: &str| Error::Dataset(format!("{} row {}: bad {what}", path.display(), row + 1));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 5 {
                return Err(bad("field count"));
            }
            let id = fields[0].parse().map_err(|_| bad("example_id"))?;
            let mode: SynthesisMode = fields[2].parse().map_err(|_| bad("mode"))?;
            let n_used: usize = fields[3].parse().map_err(|_| bad("n_used"))?;
            let values: Vec<f64> = fields[4..]
                .iter()
                .map(|v| v.parse().map_err(|_| bad("value")))
                .collect::<Result<_>>()?;
            if n_used != values.len() {
                return Err(bad("n_used"));
            }
            let mut t = LossTrajectory::new(values, id, mode, task)?;
            t.label = parse_label(fields[1], task)?;
            Ok(t)
        })
        .collect()
}

pub fn write_imprints_csv(path: &Path, imprints: &[ImprintMatrix]) -> Result<()> {
    let (classes, epochs) = imprints.first().map(|m| (m.classes, m.epochs())).unwrap_or((0, 0));
    if imprints.iter().any(|m| m.classes != classes || m.epochs() != epochs) {
        return Err(Error::InvalidArgument("imprints differ in shape".into()));
    }
    let mut out = String::from("example_id,label,mode,n_used");
    for k in 1..=epochs {
        for c in 0..classes {
            out.push_str(&format!(",c{c}_e{k}"));
        }
    }
    out.push('\n');
    for m in imprints {
        out.push_str(&format!("{},{},imprint,{}", m.example_id, label_field(m.label()), epochs));
        for v in &m.data {
            out.push_str(&format!(",{v:.8e}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn tag_epoch(e: Error, epoch: u32) -> Error {
    match e {
        Error::NonFinite { context } => Error::non_finite(format!("{context} at epoch {epoch}")),
        other => other,
    }
}
