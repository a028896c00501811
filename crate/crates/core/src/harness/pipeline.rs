//! Offline fitting of the detection bundle and the online verdict path.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, SignalKind, Variant};
use crate::data::{load_or_synthesize_dataset_sized, DatasetHandle, Example};
use crate::detector::{calibration_split, fit_svdd, DetectionVerdict, SvddConfig, SvddModel};
use crate::error::{Error, Result, StageExt};
use crate::intensifier::{
    fit_autoencoder, signature, signature_len, spectrum, AutoencoderConfig, AutoencoderModel, SpectrumMode,
    Standardizer,
};
use crate::nn::{softmax_f64, OptimizerConfig, OptimizerKind, Task};
use crate::parallel::map_indexed;
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::train::{train_with_checkpoints, CheckpointSet, TrainConfig, MANIFEST_FILE};
use crate::trajectory::{
    epoch_outputs, is_correct, select_benign_pool, trajectory_values, ImprintMatrix, LossTrajectory, Signal,
    SynthesisMode, Truncate,
};

pub const BUNDLE_FILE: &str = "bundle.json";
const BUNDLE_FORMAT: &str = "trait-bundle-v1";
const CHECKPOINT_SUBDIR: &str = "checkpoints";
const AUTOENCODER_FILE: &str = "autoencoder.trck";
const DETECTOR_FILE: &str = "detector.trck";

/// A trajectory in whichever form the config asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtractedSignal {
    Loss(LossTrajectory),
    Softmax(ImprintMatrix),
}

impl Signal for ExtractedSignal {
    fn steps(&self) -> usize {
        match self {
            ExtractedSignal::Loss(t) => t.steps(),
            ExtractedSignal::Softmax(m) => m.steps(),
        }
    }

    fn channels(&self) -> usize {
        match self {
            ExtractedSignal::Loss(t) => t.channels(),
            ExtractedSignal::Softmax(m) => m.channels(),
        }
    }

    fn signal(&self) -> &[f64] {
        match self {
            ExtractedSignal::Loss(t) => t.signal(),
            ExtractedSignal::Softmax(m) => m.signal(),
        }
    }
}

impl ExtractedSignal {
    /// Synthesizes the signal of one input, keeping the first `truncate`
    /// epochs when set.
    pub fn of_input(
        set: &CheckpointSet,
        x: &Tensor,
        id: usize,
        mode: SynthesisMode,
        kind: SignalKind,
        truncate: Option<usize>,
    ) -> Result<Self> {
        let full = match kind {
            SignalKind::Loss => {
                let values = trajectory_values(set, x, mode)?;
                ExtractedSignal::Loss(LossTrajectory::new(values, id, mode, set.spec().task())?)
            }
            SignalKind::Softmax => {
                if set.spec().task() != Task::Classification {
                    return Err(Error::InvalidArgument("softmax signals need a classification model".into()));
                }
                let outputs = epoch_outputs(set, x)?;
                let columns = set
                    .intermediate_epochs()
                    .into_iter()
                    .map(|k| softmax_f64(&outputs[k as usize - 1]))
                    .collect();
                ExtractedSignal::Softmax(ImprintMatrix::from_columns(columns, id)?)
            }
        };
        match truncate {
            None => Ok(full),
            Some(n) => match full {
                ExtractedSignal::Loss(t) => Ok(ExtractedSignal::Loss(t.truncate_epochs(n)?)),
                ExtractedSignal::Softmax(m) => Ok(ExtractedSignal::Softmax(m.truncate_epochs(n)?)),
            },
        }
    }
}

/// Dataset and checkpoints shared by every bundle fitted from one config.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: ExperimentConfig,
    pub data: DatasetHandle,
    pub checkpoints: Arc<CheckpointSet>,
}

fn train_config(config: &ExperimentConfig, seed: u64) -> TrainConfig {
    let optimizer = match config.train_optimizer {
        OptimizerKind::Sgd => OptimizerConfig::sgd(config.train_lr),
        OptimizerKind::Adam => OptimizerConfig::adam(config.train_lr),
    }
    .with_weight_decay(config.train_weight_decay);
    TrainConfig {
        epochs: config.train_epochs,
        batch_size: config.train_batch_size,
        optimizer,
        seed,
        dataset_id: config.dataset_id.clone(),
        spec: config.model_spec.clone(),
        checkpoint_dir: None,
        target_epoch: config.target_epoch,
        parallelism: config.parallelism,
    }
}

/// Loads the dataset and obtains the checkpoint set: read from
/// `checkpoint_dir` when it already holds one, trained (and saved there, if
/// given) otherwise.
pub fn prepare(config: &ExperimentConfig, checkpoint_dir: Option<&Path>) -> Result<Workspace> {
    config.validate()?;
    let data = load_or_synthesize_dataset_sized(&config.dataset_id, config.seeds.data, config.dataset_sizes)
        .stage("dataset")?;
    let spec = &config.model_spec;
    if spec.input_shape() != data.feature_shape.as_slice()
        || spec.output_dim() != data.output_dim
        || spec.task() != data.task
    {
        return Err(Error::Config(format!(
            "model `{spec}` does not fit dataset `{}` (features {:?}, {} outputs, {})",
            data.id, data.feature_shape, data.output_dim, data.task
        )));
    }
    let tc = train_config(config, config.seeds.train);
    let existing = checkpoint_dir.filter(|d| d.join(MANIFEST_FILE).exists());
    let set = match existing {
        Some(dir) => {
            let set = CheckpointSet::load_dir(dir).stage("train")?;
            let m = set.manifest();
            let expected_target = config.target_epoch.unwrap_or(config.train_epochs as u32);
            if m.model != spec.to_string()
                || m.dataset != config.dataset_id
                || m.seed != config.seeds.train
                || m.epochs as usize != config.train_epochs
                || m.target_epoch != expected_target
            {
                return Err(Error::Config(format!(
                    "checkpoints in {} were trained under a different config",
                    dir.display()
                )));
            }
            set
        }
        None => {
            let set = train_with_checkpoints(&tc, &data).stage("train")?;
            if let Some(dir) = checkpoint_dir {
                set.save_dir(dir).stage("train")?;
            }
            set
        }
    };
    Ok(Workspace {
        config: config.clone(),
        data,
        checkpoints: Arc::new(set),
    })
}

impl Workspace {
    /// Test examples the deployed model gets right, in split order.
    pub fn correct_test_examples(&self) -> Result<Vec<Example>> {
        let set = &self.checkpoints;
        let tol = self.config.regression_tolerance;
        let flags = map_indexed(&self.data.test, self.config.parallelism, |_, ex| is_correct(set, ex, tol));
        let mut out = Vec::new();
        for (ex, ok) in self.data.test.iter().zip(flags) {
            if ok.stage("holdout")? {
                out.push(ex.clone());
            }
        }
        Ok(out)
    }

    /// Benign inputs for online FRR: correctly classified test examples,
    /// disjoint from the validation-split pool.
    pub fn benign_holdout(&self) -> Result<Vec<Example>> {
        let mut ex = self.correct_test_examples()?;
        ex.truncate(self.config.holdout_size);
        Ok(ex)
    }

    /// Inputs handed to the attacks.
    pub fn attack_sources(&self) -> Result<Vec<Example>> {
        let mut ex = self.correct_test_examples()?;
        ex.truncate(self.config.attack_count);
        Ok(ex)
    }

    /// Intermediate models of an independently trained model with this
    /// workspace's deployed model swapped in as target.
    pub fn surrogate_checkpoints(&self) -> Result<CheckpointSet> {
        let tc = train_config(&self.config, derive_seed(self.config.seeds.train, "surrogate", 0));
        let own = train_with_checkpoints(&tc, &self.data).stage("surrogate")?;
        own.with_target_from(&self.checkpoints)
    }

    pub fn signals(&self, examples: &[Example]) -> Result<Vec<ExtractedSignal>> {
        let c = &self.config;
        let set = &self.checkpoints;
        map_indexed(examples, c.parallelism, |_, ex| {
            ExtractedSignal::of_input(set, &ex.x, ex.id, c.trajectory_mode, c.trajectory_signal, c.truncate)
                .map_err(|e| e.for_example(ex.id))
        })
        .into_iter()
        .collect()
    }
}

/// Offline-phase state shared across ablation variants: the benign pool,
/// its signals, the standardizer and (once needed) the autoencoder.
#[derive(Debug)]
pub struct Offline {
    config: ExperimentConfig,
    checkpoints: Arc<CheckpointSet>,
    pool_ids: Vec<usize>,
    signals: Vec<ExtractedSignal>,
    standardizer: Standardizer,
    autoencoder: OnceLock<AutoencoderModel>,
}

impl Offline {
    pub fn new(ws: &Workspace) -> Result<Self> {
        let c = &ws.config;
        let pool_ids = select_benign_pool(
            &ws.checkpoints,
            &ws.data.val,
            c.pool_size,
            c.seeds.pool,
            c.regression_tolerance,
        )
        .stage("pool")?;
        let pool: Vec<Example> = pool_ids.iter().map(|&i| ws.data.val[i].clone()).collect();
        let signals = ws.signals(&pool).stage("extract")?;
        let rows: Vec<&[f64]> = signals.iter().map(Signal::signal).collect();
        let standardizer = Standardizer::fit(&rows).stage("standardize")?;
        Ok(Self {
            config: c.clone(),
            checkpoints: Arc::clone(&ws.checkpoints),
            pool_ids,
            signals,
            standardizer,
            autoencoder: OnceLock::new(),
        })
    }

    pub fn pool_ids(&self) -> &[usize] {
        &self.pool_ids
    }

    pub fn signals(&self) -> &[ExtractedSignal] {
        &self.signals
    }

    pub fn autoencoder(&self) -> Result<&AutoencoderModel> {
        if let Some(ae) = self.autoencoder.get() {
            return Ok(ae);
        }
        let c = &self.config;
        let cfg = AutoencoderConfig {
            bottleneck: c.ae_bottleneck,
            hidden: c.ae_hidden,
            dropout: c.ae_dropout,
            epochs: c.ae_epochs,
            lr: c.ae_lr,
            batch_size: c.ae_batch_size,
            seed: c.seeds.ae,
            parallelism: c.parallelism,
        };
        let ae = fit_autoencoder(&self.signals, &cfg).stage("autoencoder")?;
        Ok(self.autoencoder.get_or_init(|| ae))
    }

    /// Fits the detector for one variant; the autoencoder is fitted at most
    /// once across calls.
    pub fn bundle(&self, variant: Variant) -> Result<PipelineBundle> {
        let c = &self.config;
        let autoencoder = if variant.uses_autoencoder() {
            Some(self.autoencoder()?.clone())
        } else {
            None
        };
        let stages = Stages {
            variant,
            spectrum: c.spectrum_mode,
            standardizer: &self.standardizer,
            autoencoder: autoencoder.as_ref(),
        };
        let features: Vec<Vec<f64>> = map_indexed(&self.signals, c.parallelism, |_, s| stages.features(s))
            .into_iter()
            .collect::<Result<_>>()
            .stage("reduction")?;
        let svdd_cfg = SvddConfig {
            hidden: c.svdd_hidden,
            output_dim: c.svdd_output_dim,
            epochs: c.svdd_epochs,
            lr: c.svdd_lr,
            weight_decay: c.svdd_weight_decay,
            batch_size: c.svdd_batch_size,
            seed: c.seeds.svdd,
            standardize: c.svdd_standardize,
            holdout_fraction: c.svdd_holdout,
            parallelism: c.parallelism,
        };
        let svdd = fit_svdd(&features, c.svdd_frr, &svdd_cfg).stage("svdd")?;
        let (keep, hold) = calibration_split(features.len(), c.svdd_holdout, c.seeds.svdd);
        let calib = if hold.is_empty() { keep } else { hold };
        let calibration_scores = calib
            .iter()
            .map(|&i| svdd.anomaly_score(&features[i]))
            .collect::<Result<_>>()
            .stage("svdd")?;
        PipelineBundle::new(
            Arc::clone(&self.checkpoints),
            autoencoder,
            self.standardizer.clone(),
            svdd,
            BundleSettings {
                variant,
                mode: c.trajectory_mode,
                signal: c.trajectory_signal,
                truncate: c.truncate,
                spectrum: c.spectrum_mode,
                config_hash: c.with_variant(variant).hash(),
                pool_ids: self.pool_ids.clone(),
                calibration_scores,
            },
        )
    }
}

/// Runs the offline phase for `config.variant`, training checkpoints first.
pub fn run_offline(config: &ExperimentConfig) -> Result<PipelineBundle> {
    let ws = prepare(config, None)?;
    Offline::new(&ws)?.bundle(config.variant)
}

struct Stages<'a> {
    variant: Variant,
    spectrum: SpectrumMode,
    standardizer: &'a Standardizer,
    autoencoder: Option<&'a AutoencoderModel>,
}

impl Stages<'_> {
    fn standardizer(&self) -> &Standardizer {
        self.autoencoder.map_or(self.standardizer, AutoencoderModel::standardizer)
    }

    fn ae(&self) -> Result<&AutoencoderModel> {
        self.autoencoder
            .ok_or_else(|| Error::InvalidArgument(format!("variant {} needs an autoencoder", self.variant)))
    }

    fn features<S: Signal + ?Sized>(&self, s: &S) -> Result<Vec<f64>> {
        let z = self.standardizer().apply(s.signal())?;
        match self.variant {
            Variant::Full => match self.spectrum {
                SpectrumMode::Vector => spectrum(&self.ae()?.embed_standardized(&z)?),
                SpectrumMode::Sequence => signature(self.ae()?, s, SpectrumMode::Sequence),
            },
            Variant::NoFft => self.ae()?.embed_standardized(&z),
            Variant::NoNoiseReduction => channel_spectrum(&z, s.channels()),
            Variant::Neither => Ok(z),
        }
    }

    fn feature_len(&self, steps: usize, channels: usize) -> Result<usize> {
        Ok(match self.variant {
            Variant::Full => signature_len(self.ae()?, self.spectrum),
            Variant::NoFft => self.ae()?.bottleneck(),
            Variant::NoNoiseReduction => steps / 2 + 1,
            Variant::Neither => steps * channels,
        })
    }
}

/// Spectrum along time of every channel of a step-major signal, averaged
/// over channels.
fn channel_spectrum(z: &[f64], channels: usize) -> Result<Vec<f64>> {
    if channels == 1 {
        return spectrum(z);
    }
    let steps = z.len() / channels;
    let mut avg = vec![0.0; steps / 2 + 1];
    for c in 0..channels {
        let series: Vec<f64> = (0..steps).map(|t| z[t * channels + c]).collect();
        avg.iter_mut().zip(spectrum(&series)?).for_each(|(a, b)| *a += b);
    }
    avg.iter_mut().for_each(|a| *a /= channels as f64);
    Ok(avg)
}

#[derive(Debug, Clone, PartialEq)]
struct BundleSettings {
    variant: Variant,
    mode: SynthesisMode,
    signal: SignalKind,
    truncate: Option<usize>,
    spectrum: SpectrumMode,
    config_hash: String,
    pool_ids: Vec<usize>,
    calibration_scores: Vec<f64>,
}

/// Everything the online phase needs, as produced by the offline phase.
#[derive(Debug, Clone)]
pub struct PipelineBundle {
    checkpoints: Arc<CheckpointSet>,
    autoencoder: Option<AutoencoderModel>,
    standardizer: Standardizer,
    svdd: SvddModel,
    settings: BundleSettings,
}

/// Wall-clock time spent after the deployed model's own inference.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageLatencies {
    /// Intermediate-model forwards and synthetic losses.
    pub synthesis: Duration,
    /// Standardization, embedding and spectrum.
    pub reduction: Duration,
    pub detection: Duration,
}

impl PipelineBundle {
    fn new(
        checkpoints: Arc<CheckpointSet>,
        autoencoder: Option<AutoencoderModel>,
        standardizer: Standardizer,
        svdd: SvddModel,
        settings: BundleSettings,
    ) -> Result<Self> {
        let bundle = Self {
            checkpoints,
            autoencoder,
            standardizer,
            svdd,
            settings,
        };
        bundle.check_dimensions()?;
        Ok(bundle)
    }

    fn stages(&self) -> Stages<'_> {
        Stages {
            variant: self.settings.variant,
            spectrum: self.settings.spectrum,
            standardizer: &self.standardizer,
            autoencoder: self.autoencoder.as_ref(),
        }
    }

    /// Trajectory length, autoencoder input, feature length and detector
    /// input must agree.
    fn check_dimensions(&self) -> Result<()> {
        let s = &self.settings;
        let full = self.checkpoints.len() - 1;
        let steps = s.truncate.unwrap_or(full);
        if steps == 0 || steps > full {
            return Err(Error::shape("bundle", format!("{steps} trajectory steps from {} checkpoints", full + 1)));
        }
        let channels = match s.signal {
            SignalKind::Loss => 1,
            SignalKind::Softmax => self.checkpoints.spec().output_dim(),
        };
        if self.standardizer.len() != steps * channels {
            return Err(Error::shape(
                "bundle",
                format!("standardizer covers {} values, signals have {}", self.standardizer.len(), steps * channels),
            ));
        }
        if s.variant.uses_autoencoder() != self.autoencoder.is_some() {
            return Err(Error::shape("bundle", format!("autoencoder presence does not match variant {}", s.variant)));
        }
        if let Some(ae) = &self.autoencoder {
            if ae.steps() != steps || ae.channels() != channels {
                return Err(Error::shape(
                    "bundle",
                    format!("autoencoder expects {}x{}, signals are {steps}x{channels}", ae.steps(), ae.channels()),
                ));
            }
        }
        let feature_len = self.stages().feature_len(steps, channels)?;
        if self.svdd.input_dim() != feature_len {
            return Err(Error::shape(
                "bundle",
                format!("detector takes {} inputs, features have {feature_len}", self.svdd.input_dim()),
            ));
        }
        Ok(())
    }

    pub fn checkpoints(&self) -> &CheckpointSet {
        &self.checkpoints
    }

    pub fn autoencoder(&self) -> Option<&AutoencoderModel> {
        self.autoencoder.as_ref()
    }

    pub fn standardizer(&self) -> &Standardizer {
        self.autoencoder.as_ref().map_or(&self.standardizer, AutoencoderModel::standardizer)
    }

    pub fn detector(&self) -> &SvddModel {
        &self.svdd
    }

    pub fn variant(&self) -> Variant {
        self.settings.variant
    }

    pub fn mode(&self) -> SynthesisMode {
        self.settings.mode
    }

    pub fn signal_kind(&self) -> SignalKind {
        self.settings.signal
    }

    pub fn spectrum_mode(&self) -> SpectrumMode {
        self.settings.spectrum
    }

    /// Trajectory elements used per input.
    pub fn n_used(&self) -> usize {
        self.settings.truncate.unwrap_or(self.checkpoints.len() - 1)
    }

    pub fn truncate(&self) -> Option<usize> {
        self.settings.truncate
    }

    pub fn preset_frr(&self) -> f64 {
        self.svdd.preset_frr()
    }

    pub fn config_hash(&self) -> &str {
        &self.settings.config_hash
    }

    /// Validation-split ids of the benign pool the detector was fitted on.
    pub fn pool_ids(&self) -> &[usize] {
        &self.settings.pool_ids
    }

    /// Scores the threshold was calibrated on.
    pub fn calibration_scores(&self) -> &[f64] {
        &self.settings.calibration_scores
    }

    pub fn signal_of(&self, x: &Tensor) -> Result<ExtractedSignal> {
        let s = &self.settings;
        ExtractedSignal::of_input(&self.checkpoints, x, 0, s.mode, s.signal, s.truncate)
    }

    /// The detector's input for a synthesized signal.
    pub fn features<S: Signal + ?Sized>(&self, s: &S) -> Result<Vec<f64>> {
        self.stages().features(s)
    }

    pub fn score(&self, x: &Tensor) -> Result<f64> {
        let s = self.signal_of(x).stage("synthesis")?;
        let f = self.features(&s).stage("reduction")?;
        self.svdd.anomaly_score(&f).stage("detection")
    }

    /// Verdict for one input along with the time each stage took.
    pub fn detect(&self, x: &Tensor) -> Result<(DetectionVerdict, StageLatencies)> {
        let t0 = Instant::now();
        let s = self.signal_of(x).stage("synthesis")?;
        let t1 = Instant::now();
        let f = self.features(&s).stage("reduction")?;
        let t2 = Instant::now();
        let verdict = self.svdd.classify(&f).stage("detection")?;
        let t3 = Instant::now();
        Ok((
            verdict,
            StageLatencies {
                synthesis: t1 - t0,
                reduction: t2 - t1,
                detection: t3 - t2,
            },
        ))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.checkpoints.save_dir(&dir.join(CHECKPOINT_SUBDIR))?;
        let ae_path = dir.join(AUTOENCODER_FILE);
        match &self.autoencoder {
            Some(ae) => ae.save(&ae_path)?,
            None => {
                if ae_path.exists() {
                    std::fs::remove_file(&ae_path).map_err(|e| Error::io(&ae_path, e))?;
                }
            }
        }
        self.svdd.save(&dir.join(DETECTOR_FILE))?;
        let s = &self.settings;
        let meta = BundleMeta {
            format: BUNDLE_FORMAT.into(),
            variant: s.variant,
            mode: s.mode.to_string(),
            signal: s.signal.to_string(),
            truncate: s.truncate,
            spectrum: s.spectrum.to_string(),
            preset_frr: self.svdd.preset_frr(),
            config_hash: s.config_hash.clone(),
            pool_ids: s.pool_ids.clone(),
            calibration_scores: s.calibration_scores.clone(),
            standardizer_mean: self.standardizer.mean().to_vec(),
            standardizer_std: self.standardizer.std().to_vec(),
        };
        let path = dir.join(BUNDLE_FILE);
        let text = serde_json::to_string_pretty(&meta)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(BUNDLE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: BundleMeta = serde_json::from_str(&text)?;
        if meta.format != BUNDLE_FORMAT {
            return Err(Error::InvalidArgument(format!("{}: unknown bundle format `{}`", path.display(), meta.format)));
        }
        let checkpoints = CheckpointSet::load_dir(&dir.join(CHECKPOINT_SUBDIR))?;
        let autoencoder = if meta.variant.uses_autoencoder() {
            Some(AutoencoderModel::load(&dir.join(AUTOENCODER_FILE))?)
        } else {
            None
        };
        let svdd = SvddModel::load(&dir.join(DETECTOR_FILE))?;
        if svdd.preset_frr() != meta.preset_frr {
            return Err(Error::InvalidArgument("bundle and detector disagree on the preset FRR".into()));
        }
        Self::new(
            Arc::new(checkpoints),
            autoencoder,
            Standardizer::from_parts(meta.standardizer_mean, meta.standardizer_std)?,
            svdd,
            BundleSettings {
                variant: meta.variant,
                mode: meta.mode.parse()?,
                signal: meta.signal.parse()?,
                truncate: meta.truncate,
                spectrum: meta.spectrum.parse()?,
                config_hash: meta.config_hash,
                pool_ids: meta.pool_ids,
                calibration_scores: meta.calibration_scores,
            },
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleMeta {
    format: String,
    variant: Variant,
    mode: String,
    signal: String,
    truncate: Option<usize>,
    spectrum: String,
    preset_frr: f64,
    config_hash: String,
    pool_ids: Vec<usize>,
    calibration_scores: Vec<f64>,
    standardizer_mean: Vec<f64>,
    standardizer_std: Vec<f64>,
}

/// The online phase for one input.
pub fn run_online(bundle: &PipelineBundle, x: &Tensor) -> Result<DetectionVerdict> {
    bundle.detect(x).map(|(v, _)| v)
}

/// Writes one CSV row of stage latencies (microseconds) per input.
pub fn write_latencies(path: &Path, latencies: &[StageLatencies]) -> Result<()> {
    let mut out = String::from("index,synthesis_us,reduction_us,detection_us\n");
    for (i, l) in latencies.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{:.3},{:.3},{:.3}",
            l.synthesis.as_secs_f64() * 1e6,
            l.reduction.as_secs_f64() * 1e6,
            l.detection.as_secs_f64() * 1e6
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
