//! Plain-text `key = value` experiment configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Every key has a
//! default, so a file only needs to list what it changes. Unknown or
//! repeated keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::Variant;
use crate::attacks::{AttackMethod, ImSource, DEFAULT_REGRESSION_TOLERANCE};
use crate::data::DatasetSizes;
use crate::error::{Error, Result};
use crate::intensifier::SpectrumMode;
use crate::nn::{ModelSpec, OptimizerKind};
use crate::parallel::Parallelism;
use crate::trajectory::SynthesisMode;

/// What the trajectory stage hands to the intensifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignalKind {
    /// One synthetic loss per intermediate model.
    #[default]
    Loss,
    /// The full softmax of every intermediate model, one channel per class.
    Softmax,
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalKind::Loss => "loss",
            SignalKind::Softmax => "softmax",
        })
    }
}

impl FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(SignalKind::Loss),
            "softmax" => Ok(SignalKind::Softmax),
            other => Err(Error::Config(format!("unknown trajectory signal `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seeds {
    pub data: u64,
    pub train: u64,
    pub pool: u64,
    pub attack: u64,
    pub ae: u64,
    pub svdd: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            data: seed,
            train: seed,
            pool: seed,
            attack: seed,
            ae: seed,
            svdd: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset_id: String,
    pub dataset_sizes: DatasetSizes,
    pub model_spec: ModelSpec,
    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_optimizer: OptimizerKind,
    pub train_lr: f32,
    pub train_weight_decay: f32,
    /// Deployed epoch; the last one when `None`.
    pub target_epoch: Option<u32>,
    pub attack_methods: Vec<AttackMethod>,
    pub attack_epsilon: f32,
    pub attack_steps: usize,
    pub attack_alpha: Option<f32>,
    pub attack_lambda: f64,
    pub attack_tau: f64,
    pub attack_count: usize,
    pub attack_im_source: ImSource,
    pub attack_inner_iterations: usize,
    pub regression_tolerance: f64,
    pub trajectory_mode: SynthesisMode,
    pub trajectory_signal: SignalKind,
    /// Keep only the first `n` epochs of every trajectory.
    pub truncate: Option<usize>,
    pub pool_size: usize,
    pub ae_bottleneck: usize,
    pub ae_hidden: usize,
    pub ae_epochs: usize,
    pub ae_lr: f32,
    pub ae_dropout: f32,
    pub ae_batch_size: usize,
    pub spectrum_mode: SpectrumMode,
    pub svdd_frr: f64,
    pub svdd_hidden: usize,
    pub svdd_output_dim: usize,
    pub svdd_epochs: usize,
    pub svdd_lr: f32,
    pub svdd_weight_decay: f32,
    pub svdd_batch_size: usize,
    pub svdd_standardize: bool,
    pub svdd_holdout: Option<f64>,
    pub frr_presets: Vec<f64>,
    pub holdout_size: usize,
    pub variant: Variant,
    pub seeds: Seeds,
    /// Execution only; never part of the echo or the hash.
    pub parallelism: Parallelism,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_id: "blobs-4-64".into(),
            dataset_sizes: DatasetSizes::default(),
            model_spec: ModelSpec::mlp(64, &[32], 4, crate::nn::Task::Classification).expect("valid default model"),
            train_epochs: 30,
            train_batch_size: 32,
            train_optimizer: OptimizerKind::Sgd,
            train_lr: 0.05,
            train_weight_decay: 0.0,
            target_epoch: None,
            attack_methods: vec![AttackMethod::Fgsm, AttackMethod::Pgd],
            attack_epsilon: 0.1,
            attack_steps: 10,
            attack_alpha: None,
            attack_lambda: 1.0,
            attack_tau: 0.19,
            attack_count: 500,
            attack_im_source: ImSource::Defender,
            attack_inner_iterations: 5,
            regression_tolerance: DEFAULT_REGRESSION_TOLERANCE,
            trajectory_mode: SynthesisMode::Anchored,
            trajectory_signal: SignalKind::Loss,
            truncate: None,
            pool_size: 1000,
            ae_bottleneck: 8,
            ae_hidden: 32,
            ae_epochs: 150,
            ae_lr: 1e-3,
            ae_dropout: 0.2,
            ae_batch_size: 32,
            spectrum_mode: SpectrumMode::Vector,
            svdd_frr: 0.05,
            svdd_hidden: 32,
            svdd_output_dim: 16,
            svdd_epochs: 100,
            svdd_lr: 1e-3,
            svdd_weight_decay: 1e-6,
            svdd_batch_size: 32,
            svdd_standardize: true,
            svdd_holdout: None,
            frr_presets: vec![0.01, 0.03, 0.05],
            holdout_size: 1000,
            variant: Variant::Full,
            seeds: Seeds::all(42),
            parallelism: Parallelism::AUTO,
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "dataset.id",
    "dataset.train",
    "dataset.val",
    "dataset.test",
    "model.spec",
    "train.epochs",
    "train.batch_size",
    "train.optimizer",
    "train.lr",
    "train.weight_decay",
    "train.target_epoch",
    "attack.method",
    "attack.epsilon",
    "attack.steps",
    "attack.alpha",
    "attack.lambda",
    "attack.tau",
    "attack.count",
    "attack.im_source",
    "attack.inner_iterations",
    "attack.regression_tolerance",
    "trajectory.mode",
    "trajectory.signal",
    "trajectory.truncate",
    "trajectory.pool",
    "ae.bottleneck",
    "ae.hidden",
    "ae.epochs",
    "ae.lr",
    "ae.dropout",
    "ae.batch_size",
    "spectrum.mode",
    "svdd.frr",
    "svdd.hidden",
    "svdd.output_dim",
    "svdd.epochs",
    "svdd.lr",
    "svdd.weight_decay",
    "svdd.batch_size",
    "svdd.standardize",
    "svdd.holdout",
    "eval.frr_presets",
    "eval.holdout",
    "ablation.variant",
    "seeds.data",
    "seeds.train",
    "seeds.pool",
    "seeds.attack",
    "seeds.ae",
    "seeds.svdd",
];

/// Pipeline stages and the key prefixes that feed each one.
pub const STAGES: &[(&str, &[&str])] = &[
    ("data", &["dataset.", "seeds.data"]),
    ("train", &["model.", "train.", "seeds.train"]),
    ("attack", &["attack.", "seeds.attack"]),
    ("trajectory", &["trajectory.", "seeds.pool"]),
    ("intensifier", &["ae.", "spectrum.", "ablation.", "seeds.ae"]),
    ("detector", &["svdd.", "seeds.svdd"]),
    ("eval", &["eval."]),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value {
        "none" | "default" | "" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(key, v))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn show_optional<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn optimizer_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adam => "adam",
    }
}

fn im_source_name(source: ImSource) -> &'static str {
    match source {
        ImSource::Defender => "defender",
        ImSource::Surrogate => "surrogate",
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset.id" => self.dataset_id = v.to_string(),
            "dataset.train" => self.dataset_sizes.train = parse(key, v)?,
            "dataset.val" => self.dataset_sizes.val = parse(key, v)?,
            "dataset.test" => self.dataset_sizes.test = parse(key, v)?,
            "model.spec" => self.model_spec = v.parse()?,
            "train.epochs" => self.train_epochs = parse(key, v)?,
            "train.batch_size" => self.train_batch_size = parse(key, v)?,
            "train.optimizer" => {
                self.train_optimizer = match v {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    other => return Err(Error::Config(format!("{key}: unknown optimizer `{other}`"))),
                }
            }
            "train.lr" => self.train_lr = parse(key, v)?,
            "train.weight_decay" => self.train_weight_decay = parse(key, v)?,
            "train.target_epoch" => {
                self.target_epoch = match v {
                    "last" => None,
                    v => parse_optional(key, v)?,
                }
            }
            "attack.method" => self.attack_methods = parse_list(key, v)?,
            "attack.epsilon" => self.attack_epsilon = parse(key, v)?,
            "attack.steps" => self.attack_steps = parse(key, v)?,
            "attack.alpha" => self.attack_alpha = parse_optional(key, v)?,
            "attack.lambda" => self.attack_lambda = parse(key, v)?,
            "attack.tau" => self.attack_tau = parse(key, v)?,
            "attack.count" => self.attack_count = parse(key, v)?,
            "attack.im_source" => {
                self.attack_im_source = match v {
                    "defender" => ImSource::Defender,
                    "surrogate" => ImSource::Surrogate,
                    other => return Err(Error::Config(format!("{key}: unknown source `{other}`"))),
                }
            }
            "attack.inner_iterations" => self.attack_inner_iterations = parse(key, v)?,
            "attack.regression_tolerance" => self.regression_tolerance = parse(key, v)?,
            "trajectory.mode" => self.trajectory_mode = v.parse()?,
            "trajectory.signal" => self.trajectory_signal = v.parse()?,
            "trajectory.truncate" => {
                self.truncate = match v {
                    "0" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "trajectory.pool" => self.pool_size = parse(key, v)?,
            "ae.bottleneck" => self.ae_bottleneck = parse(key, v)?,
            "ae.hidden" => self.ae_hidden = parse(key, v)?,
            "ae.epochs" => self.ae_epochs = parse(key, v)?,
            "ae.lr" => self.ae_lr = parse(key, v)?,
            "ae.dropout" => self.ae_dropout = parse(key, v)?,
            "ae.batch_size" => self.ae_batch_size = parse(key, v)?,
            "spectrum.mode" => self.spectrum_mode = v.parse()?,
            "svdd.frr" => self.svdd_frr = parse(key, v)?,
            "svdd.hidden" => self.svdd_hidden = parse(key, v)?,
            "svdd.output_dim" => self.svdd_output_dim = parse(key, v)?,
            "svdd.epochs" => self.svdd_epochs = parse(key, v)?,
            "svdd.lr" => self.svdd_lr = parse(key, v)?,
            "svdd.weight_decay" => self.svdd_weight_decay = parse(key, v)?,
            "svdd.batch_size" => self.svdd_batch_size = parse(key, v)?,
            "svdd.standardize" => self.svdd_standardize = parse(key, v)?,
            "svdd.holdout" => self.svdd_holdout = parse_optional(key, v)?,
            "eval.frr_presets" => self.frr_presets = parse_list(key, v)?,
            "eval.holdout" => self.holdout_size = parse(key, v)?,
            "ablation.variant" => self.variant = v.parse()?,
            "seeds.data" => self.seeds.data = parse(key, v)?,
            "seeds.train" => self.seeds.train = parse(key, v)?,
            "seeds.pool" => self.seeds.pool = parse(key, v)?,
            "seeds.attack" => self.seeds.attack = parse(key, v)?,
            "seeds.ae" => self.seeds.ae = parse(key, v)?,
            "seeds.svdd" => self.seeds.svdd = parse(key, v)?,
            "runtime.parallelism" => self.parallelism = Parallelism(parse(key, v)?),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Current value of every key in [`KEYS`], in that order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.dataset_sizes;
        let values = [
            self.dataset_id.clone(),
            s.train.to_string(),
            s.val.to_string(),
            s.test.to_string(),
            self.model_spec.to_string(),
            self.train_epochs.to_string(),
            self.train_batch_size.to_string(),
            optimizer_name(self.train_optimizer).to_string(),
            self.train_lr.to_string(),
            self.train_weight_decay.to_string(),
            self.target_epoch.map_or_else(|| "last".to_string(), |e| e.to_string()),
            join(&self.attack_methods),
            self.attack_epsilon.to_string(),
            self.attack_steps.to_string(),
            show_optional(&self.attack_alpha),
            self.attack_lambda.to_string(),
            self.attack_tau.to_string(),
            self.attack_count.to_string(),
            im_source_name(self.attack_im_source).to_string(),
            self.attack_inner_iterations.to_string(),
            self.regression_tolerance.to_string(),
            self.trajectory_mode.to_string(),
            self.trajectory_signal.to_string(),
            self.truncate.map_or_else(|| "none".to_string(), |n| n.to_string()),
            self.pool_size.to_string(),
            self.ae_bottleneck.to_string(),
            self.ae_hidden.to_string(),
            self.ae_epochs.to_string(),
            self.ae_lr.to_string(),
            self.ae_dropout.to_string(),
            self.ae_batch_size.to_string(),
            self.spectrum_mode.to_string(),
            self.svdd_frr.to_string(),
            self.svdd_hidden.to_string(),
            self.svdd_output_dim.to_string(),
            self.svdd_epochs.to_string(),
            self.svdd_lr.to_string(),
            self.svdd_weight_decay.to_string(),
            self.svdd_batch_size.to_string(),
            self.svdd_standardize.to_string(),
            show_optional(&self.svdd_holdout),
            join(&self.frr_presets),
            self.holdout_size.to_string(),
            self.variant.to_string(),
            self.seeds.data.to_string(),
            self.seeds.train.to_string(),
            self.seeds.pool.to_string(),
            self.seeds.attack.to_string(),
            self.seeds.ae.to_string(),
            self.seeds.svdd.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        self.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The config as a file that parses back to an equal config.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        digest(self.entries().iter())
    }

    /// One hash per pipeline stage over the keys that stage reads.
    pub fn stage_hashes(&self) -> BTreeMap<String, String> {
        let entries = self.entries();
        STAGES
            .iter()
            .map(|(stage, prefixes)| {
                let keys = entries
                    .iter()
                    .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)));
                (stage.to_string(), digest(keys))
            })
            .collect()
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn set_all_seeds(&mut self, seed: u64) {
        self.seeds = Seeds::all(seed);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model_spec.input_shape().iter().product::<usize>() == 0 {
            return bad("model input is empty".into());
        }
        if self.train_epochs < 2 {
            return bad(format!("train.epochs must be at least 2, got {}", self.train_epochs));
        }
        if let Some(n) = self.truncate {
            if n == 0 || n >= self.train_epochs {
                return bad(format!(
                    "trajectory.truncate {n} must lie in 1..{}",
                    self.train_epochs - 1
                ));
            }
        }
        for (key, frr) in std::iter::once(("svdd.frr", &self.svdd_frr)).chain(self.frr_presets.iter().map(|f| ("eval.frr_presets", f))) {
            if !(0.0..1.0).contains(frr) {
                return bad(format!("{key} {frr} outside [0, 1)"));
            }
        }
        if !(self.attack_epsilon >= 0.0) {
            return bad(format!("attack.epsilon {} must be non-negative", self.attack_epsilon));
        }
        if !(self.attack_tau > 0.0) || !(self.attack_lambda >= 0.0) {
            return bad("attack.tau must be positive and attack.lambda non-negative".into());
        }
        if self.pool_size == 0 || self.holdout_size == 0 {
            return bad("trajectory.pool and eval.holdout must be positive".into());
        }
        if self.trajectory_signal == SignalKind::Softmax && self.model_spec.task() != crate::nn::Task::Classification {
            return bad("trajectory.signal = softmax needs a classification model".into());
        }
        Ok(())
    }
}

fn digest<'a>(entries: impl Iterator<Item = &'a (&'static str, String)>) -> String {
    let mut h = Sha256::new();
    for (k, v) in entries {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` set twice", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.root())))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = cfg.to_text().parse().unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.entries().len(), KEYS.len());
    }

    #[test]
    fn every_key_belongs_to_one_stage() {
        for key in KEYS {
            let owners = STAGES
                .iter()
                .filter(|(_, prefixes)| prefixes.iter().any(|p| key.starts_with(p)))
                .count();
            assert_eq!(owners, 1, "{key}");
        }
    }

    #[test]
    fn comments_and_overrides() {
        let cfg: ExperimentConfig = "# stock\n\ntrain.epochs = 12\nattack.method = fgsm, pgd,bim\nattack.alpha = 0.02\n"
            .parse()
            .unwrap();
        assert_eq!(cfg.train_epochs, 12);
        assert_eq!(cfg.attack_methods, vec![AttackMethod::Fgsm, AttackMethod::Pgd, AttackMethod::Bim]);
        assert_eq!(cfg.attack_alpha, Some(0.02));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "nope = 1",
            "train.epochs = x",
            "train.epochs = 3\ntrain.epochs = 4",
            "no equals sign",
            "svdd.frr = 1.5",
            "train.epochs = 1",
            "trajectory.truncate = 30",
        ] {
            let err = text.parse::<ExperimentConfig>().unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
    }

    #[test]
    fn variant_only_touches_the_intensifier_hash() {
        let a = ExperimentConfig::default();
        let b = a.with_variant(Variant::Neither);
        let (ha, hb) = (a.stage_hashes(), b.stage_hashes());
        for (stage, h) in &ha {
            assert_eq!(h == &hb[stage], stage != "intensifier", "{stage}");
        }
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn parallelism_is_not_hashed() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.set("runtime.parallelism", "3").unwrap();
        assert_eq!(a.hash(), b.hash());
    }
}
