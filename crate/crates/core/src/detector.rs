//! One-class Deep-SVDD over spectrum signatures.
//!
//! A bias-free dense network maps each signature into a space where benign
//! inputs gather around a fixed center. The squared distance to the center is
//! the anomaly score; inputs scoring strictly above a nearest-rank quantile of
//! benign scores are rejected.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::checkpoint::{pack_f64, unpack_f64, Container};
use crate::error::{CheckpointError, Error, Result};
use crate::intensifier::autoencoder::parse_descriptor;
use crate::intensifier::Standardizer;
use crate::nn::{self, Layer, ModelSpec, Optimizer, OptimizerConfig, ParamSet, Task, Wrt};
use crate::parallel::{map_indexed, Parallelism};
use crate::rng::{seeded, seeded_indexed};
use crate::tensor::Tensor;

pub const SVDD_DESCRIPTOR: &str = "trait-svdd-v1";
pub const MIN_TRAINING_SPECTRA: usize = 32;
/// Center coordinates closer to zero than this are pushed out to it.
pub const CENTER_EPS: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SvddConfig {
    pub hidden: usize,
    pub output_dim: usize,
    pub epochs: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// z-score each input feature with statistics from the training spectra.
    pub standardize: bool,
    /// When set, this fraction of the benign spectra is held out of training
    /// and used only to calibrate the threshold.
    pub holdout_fraction: Option<f64>,
    pub parallelism: Parallelism,
}

impl Default for SvddConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            output_dim: 16,
            epochs: 100,
            lr: 1e-3,
            weight_decay: 1e-6,
            batch_size: 32,
            seed: 0,
            standardize: true,
            holdout_fraction: None,
            parallelism: Parallelism::AUTO,
        }
    }
}

impl SvddConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.output_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("svdd sizes must be positive".into()));
        }
        if let Some(f) = self.holdout_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("holdout fraction {f} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Benign,
    Adversarial,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Benign => "benign",
            Verdict::Adversarial => "adversarial",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionVerdict {
    pub verdict: Verdict,
    pub score: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvddModel {
    spec: ModelSpec,
    params: ParamSet,
    center: Vec<f32>,
    threshold: f64,
    preset_frr: f64,
    standardizer: Option<Standardizer>,
    config: SvddConfig,
    /// Training objective per epoch.
    objective: Vec<f64>,
}

fn check_frr(frr: f64) -> Result<()> {
    if !(0.0..1.0).contains(&frr) {
        return Err(Error::InvalidArgument(format!("preset FRR {frr} outside [0, 1)")));
    }
    Ok(())
}

/// Nearest-rank `(1 - frr)` quantile. At most `floor(frr * n)` scores lie
/// strictly above the result.
pub fn calibrate_threshold(scores: &[f64], preset_frr: f64) -> Result<f64> {
    check_frr(preset_frr)?;
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores to calibrate on".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::non_finite("calibration score"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rejected = (preset_frr * n as f64 + 1e-9).floor() as usize;
    Ok(sorted[n - rejected.min(n - 1) - 1])
}

/// Every output sits on the center and the objective has vanished.
fn collapsed(scores: &[f64]) -> bool {
    scores.iter().all(|&s| s.sqrt() <= 1e-9) && scores.iter().sum::<f64>() / (scores.len() as f64) < 1e-12
}

pub fn phi_spec(inputs: usize, hidden: usize, output_dim: usize) -> Result<ModelSpec> {
    ModelSpec::new(
        vec![inputs],
        vec![
            Layer::Dense {
                inputs,
                outputs: hidden,
                bias: false,
            },
            Layer::Relu,
            Layer::Dense {
                inputs: hidden,
                outputs: output_dim,
                bias: false,
            },
        ],
        Task::Regression,
    )
}

fn squared_distance(out: &[f32], center: &[f32]) -> f64 {
    out.iter()
        .zip(center)
        .map(|(&o, &c)| {
            let d = o as f64 - c as f64;
            d * d
        })
        .sum()
}

fn to_input(standardizer: Option<&Standardizer>, s: &[f64]) -> Result<Tensor> {
    let v = match standardizer {
        Some(st) => st.apply(s)?,
        None => s.to_vec(),
    };
    Tensor::new(vec![v.len()], v.into_iter().map(|x| x as f32).collect())
}

/// Sorted indices used for training and for threshold calibration. Without
/// a holdout fraction every index trains and the calibration set is empty,
/// meaning the training scores calibrate.
pub fn calibration_split(n: usize, holdout_fraction: Option<f64>, seed: u64) -> (Vec<usize>, Vec<usize>) {
    match holdout_fraction {
        None => ((0..n).collect(), Vec::new()),
        Some(f) => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut seeded(seed, "svdd-holdout"));
            let n_hold = ((n as f64 * f).round() as usize).clamp(1, n.saturating_sub(1).max(1));
            let (hold, keep) = idx.split_at(n_hold);
            let (mut keep, mut hold) = (keep.to_vec(), hold.to_vec());
            keep.sort_unstable();
            hold.sort_unstable();
            (keep, hold)
        }
    }
}

pub fn fit_svdd(spectra: &[Vec<f64>], preset_frr: f64, config: &SvddConfig) -> Result<SvddModel> {
    config.validate()?;
    check_frr(preset_frr)?;
    if spectra.len() < MIN_TRAINING_SPECTRA {
        return Err(Error::InsufficientBenign {
            needed: MIN_TRAINING_SPECTRA,
            found: spectra.len(),
        });
    }
    let dim = spectra[0].len();
    if dim == 0 || spectra.iter().any(|s| s.len() != dim) {
        return Err(Error::InvalidArgument("spectra differ in length".into()));
    }
    let (keep, hold) = calibration_split(spectra.len(), config.holdout_fraction, config.seed);
    let train: Vec<&Vec<f64>> = keep.iter().map(|&i| &spectra[i]).collect();
    let calib: Vec<&Vec<f64>> = hold.iter().map(|&i| &spectra[i]).collect();
    let standardizer = if config.standardize {
        Some(Standardizer::fit(&train)?)
    } else {
        None
    };
    let inputs: Vec<Tensor> = train
        .iter()
        .map(|s| to_input(standardizer.as_ref(), s))
        .collect::<Result<_>>()?;

    let spec = phi_spec(dim, config.hidden, config.output_dim)?;
    let mut params = ParamSet::init(&spec, crate::rng::derive_seed(config.seed, "svdd-init", 0));

    let outputs = map_indexed(&inputs, config.parallelism, |_, x| nn::forward(&spec, &params, x));
    let mut sum = vec![0.0f64; config.output_dim];
    for o in outputs {
        sum.iter_mut().zip(o?.data()).for_each(|(a, &b)| *a += b as f64);
    }
    let center: Vec<f32> = sum
        .iter()
        .map(|&s| {
            let c = (s / inputs.len() as f64) as f32;
            if c.abs() < CENTER_EPS {
                if c < 0.0 {
                    -CENTER_EPS
                } else {
                    CENTER_EPS
                }
            } else {
                c
            }
        })
        .collect();

    let mut optimizer = Optimizer::new(OptimizerConfig::adam(config.lr).with_weight_decay(config.weight_decay));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut objective = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut seeded_indexed(config.seed, "svdd-shuffle", epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = map_indexed(batch, config.parallelism, |_, &i| -> Result<(f64, ParamSet)> {
                let trace = nn::forward_trace(&spec, &params, &inputs[i])?;
                let out = trace.output();
                let d_out: Vec<f32> = out.iter().zip(&center).map(|(&o, &c)| 2.0 * (o - c)).collect();
                let g = nn::backward(&spec, &params, &trace, &d_out, Wrt::Params)?;
                Ok((squared_distance(out, &center), g.params.expect("parameter gradients requested")))
            });
            let mut acc: Vec<Vec<f32>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
            for r in results {
                let (loss, g) = r.map_err(|e| e.in_stage("svdd"))?;
                total += loss;
                for (a, t) in acc.iter_mut().zip(g.tensors()) {
                    a.iter_mut().zip(t.data()).for_each(|(x, y)| *x += y);
                }
            }
            let scale = 1.0 / batch.len() as f32;
            let grads = ParamSet::new(
                params
                    .iter()
                    .zip(acc)
                    .map(|((name, t), mut g)| {
                        g.iter_mut().for_each(|v| *v *= scale);
                        (name.to_string(), Tensor::from_parts_unchecked(t.shape().to_vec(), g))
                    })
                    .collect(),
            )?;
            optimizer
                .step(&mut params, &grads)
                .map_err(|_| Error::non_finite(format!("svdd update at epoch {}", epoch + 1)))?;
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::non_finite(format!("svdd objective at epoch {}", epoch + 1)));
        }
        objective.push(mean);
    }

    let mut model = SvddModel {
        spec,
        params,
        center,
        threshold: 0.0,
        preset_frr,
        standardizer,
        config: config.clone(),
        objective,
    };
    let train_scores = model.scores_of(&train)?;
    if collapsed(&train_scores) {
        return Err(Error::HypersphereCollapse);
    }
    let calibration = if calib.is_empty() {
        train_scores
    } else {
        model.scores_of(&calib)?
    };
    model.threshold = calibrate_threshold(&calibration, preset_frr)?;
    Ok(model)
}

impl SvddModel {
    /// Assembles a model from explicit parts, mainly for tests and tooling.
    pub fn from_parts(
        spec: ModelSpec,
        params: ParamSet,
        center: Vec<f32>,
        threshold: f64,
        preset_frr: f64,
    ) -> Result<Self> {
        params.check(&spec)?;
        if spec.param_layout().iter().any(|(n, _)| n.ends_with("bias")) {
            return Err(Error::InvalidArgument("svdd network must not have biases".into()));
        }
        if center.len() != spec.output_dim() {
            return Err(Error::InvalidArgument("center dimension differs from network output".into()));
        }
        if !(threshold >= 0.0) {
            return Err(Error::InvalidArgument(format!("threshold {threshold} must be non-negative")));
        }
        check_frr(preset_frr)?;
        Ok(Self {
            spec,
            params,
            center,
            threshold,
            preset_frr,
            standardizer: None,
            config: SvddConfig::default(),
            objective: Vec::new(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn center(&self) -> &[f32] {
        &self.center
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn preset_frr(&self) -> f64 {
        self.preset_frr
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_shape()[0]
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn config(&self) -> &SvddConfig {
        &self.config
    }

    /// Re-derives the threshold from new benign scores.
    pub fn recalibrated(mut self, scores: &[f64], preset_frr: f64) -> Result<Self> {
        self.threshold = calibrate_threshold(scores, preset_frr)?;
        self.preset_frr = preset_frr;
        Ok(self)
    }

    /// `|phi(s) - c|^2`.
    pub fn anomaly_score(&self, spectrum: &[f64]) -> Result<f64> {
        if spectrum.len() != self.input_dim() {
            return Err(Error::shape(
                "svdd",
                format!("expects {} features, got {}", self.input_dim(), spectrum.len()),
            ));
        }
        let x = to_input(self.standardizer.as_ref(), spectrum)?;
        let out = nn::forward(&self.spec, &self.params, &x)?;
        Ok(squared_distance(out.data(), &self.center))
    }

    fn scores_of(&self, spectra: &[&Vec<f64>]) -> Result<Vec<f64>> {
        map_indexed(spectra, self.config.parallelism, |_, s| self.anomaly_score(s))
            .into_iter()
            .collect()
    }

    pub fn classify(&self, spectrum: &[f64]) -> Result<DetectionVerdict> {
        let score = self.anomaly_score(spectrum)?;
        Ok(self.verdict_for(score))
    }

    pub fn verdict_for(&self, score: f64) -> DetectionVerdict {
        DetectionVerdict {
            verdict: if score > self.threshold {
                Verdict::Adversarial
            } else {
                Verdict::Benign
            },
            score,
            threshold: self.threshold,
        }
    }

    pub fn classify_batch(&self, spectra: &[Vec<f64>], par: Parallelism) -> Result<Vec<DetectionVerdict>> {
        map_indexed(spectra, par, |_, s| self.classify(s)).into_iter().collect()
    }

    fn descriptor(&self) -> String {
        let c = &self.config;
        format!(
            "{SVDD_DESCRIPTOR};inputs={};hidden={};output={};standardize={};epochs={};lr={};weight_decay={};batch={};seed={};holdout={}",
            self.input_dim(),
            c.hidden,
            c.output_dim,
            u8::from(self.standardizer.is_some()),
            c.epochs,
            c.lr,
            c.weight_decay,
            c.batch_size,
            c.seed,
            c.holdout_fraction.map_or("none".to_string(), |f| f.to_string()),
        )
    }

    pub fn to_container(&self) -> Container {
        let mut tensors: Vec<(String, Tensor)> = self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        tensors.push(("center".into(), Tensor::vector(self.center.clone())));
        tensors.push(("threshold".into(), pack_f64(&[self.threshold])));
        tensors.push(("preset_frr".into(), pack_f64(&[self.preset_frr])));
        tensors.push(("objective".into(), pack_f64(&self.objective)));
        if let Some(st) = &self.standardizer {
            tensors.push(("standardize.mean".into(), pack_f64(st.mean())));
            tensors.push(("standardize.std".into(), pack_f64(st.std())));
        }
        Container {
            descriptor: self.descriptor(),
            epoch: self.objective.len() as u32,
            tensors,
        }
    }

    pub fn from_container(c: &Container) -> std::result::Result<Self, CheckpointError> {
        let fields = parse_descriptor(&c.descriptor, SVDD_DESCRIPTOR)?;
        let get = |k: &str| -> std::result::Result<&str, CheckpointError> {
            fields
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| CheckpointError::Malformed(format!("descriptor lacks `{k}`")))
        };
        fn num<T: std::str::FromStr>(v: &str, k: &str) -> std::result::Result<T, CheckpointError> {
            v.parse().map_err(|_| CheckpointError::Malformed(format!("descriptor field `{k}={v}`")))
        }
        let inputs: usize = num(get("inputs")?, "inputs")?;
        let config = SvddConfig {
            hidden: num(get("hidden")?, "hidden")?,
            output_dim: num(get("output")?, "output")?,
            epochs: num(get("epochs")?, "epochs")?,
            lr: num(get("lr")?, "lr")?,
            weight_decay: num(get("weight_decay")?, "weight_decay")?,
            batch_size: num(get("batch")?, "batch")?,
            seed: num(get("seed")?, "seed")?,
            standardize: get("standardize")? == "1",
            holdout_fraction: match get("holdout")? {
                "none" => None,
                v => Some(num(v, "holdout")?),
            },
            parallelism: Parallelism::AUTO,
        };
        let spec = phi_spec(inputs, config.hidden, config.output_dim)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let mut entries = Vec::new();
        for (name, shape) in spec.param_layout() {
            let t = c.tensor(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    found: t.shape().to_vec(),
                    expected: shape,
                });
            }
            entries.push((name, t.clone()));
        }
        let center = c.tensor("center")?;
        if center.shape() != [config.output_dim] {
            return Err(CheckpointError::ShapeMismatch {
                name: "center".into(),
                found: center.shape().to_vec(),
                expected: vec![config.output_dim],
            });
        }
        let standardizer = if config.standardize {
            Some(
                Standardizer::from_parts(
                    unpack_f64(c.tensor("standardize.mean")?, inputs)?,
                    unpack_f64(c.tensor("standardize.std")?, inputs)?,
                )
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?,
            )
        } else {
            None
        };
        let threshold = unpack_f64(c.tensor("threshold")?, 1)?[0];
        let preset_frr = unpack_f64(c.tensor("preset_frr")?, 1)?[0];
        if !(threshold >= 0.0) || !(0.0..1.0).contains(&preset_frr) {
            return Err(CheckpointError::Malformed("threshold or preset FRR out of range".into()));
        }
        Ok(Self {
            params: ParamSet::new(entries).map_err(|e| CheckpointError::Malformed(e.to_string()))?,
            spec,
            center: center.data().to_vec(),
            threshold,
            preset_frr,
            standardizer,
            config,
            objective: unpack_f64(c.tensor("objective")?, c.epoch as usize)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        Self::from_container(&c).map_err(|source| Error::Checkpoint {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cluster(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded(seed, "cluster");
        (0..n)
            .map(|_| (0..dim).map(|j| 1.0 + 0.1 * j as f64 + rng.random_range(-0.05..0.05)).collect())
            .collect()
    }

    fn quick(seed: u64) -> SvddConfig {
        SvddConfig {
            hidden: 8,
            output_dim: 4,
            epochs: 30,
            seed,
            parallelism: Parallelism::SEQUENTIAL,
            ..SvddConfig::default()
        }
    }

    #[test]
    fn nearest_rank_hand_count() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = calibrate_threshold(&scores, 0.05).unwrap();
        assert_eq!(t, 95.0);
        assert_eq!(scores.iter().filter(|&&s| s > t).count(), 5);
        assert_eq!(calibrate_threshold(&scores, 0.0).unwrap(), 100.0);
        assert_eq!(calibrate_threshold(&[2.5; 10], 0.3).unwrap(), 2.5);
        assert!(calibrate_threshold(&[], 0.1).is_err());
        assert!(calibrate_threshold(&scores, 1.0).is_err());
    }

    #[test]
    fn strict_inequality_at_threshold() {
        let spec = phi_spec(2, 2, 2).unwrap();
        let mut p = ParamSet::zeros(&spec);
        p.get_mut("0.weight").unwrap().data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        p.get_mut("2.weight").unwrap().data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let m = SvddModel::from_parts(spec, p, vec![0.5, 0.25], 1.25, 0.05).unwrap();
        let s = m.anomaly_score(&[1.5, 0.75]).unwrap();
        assert_eq!(s, 1.25);
        assert_eq!(m.classify(&[1.5, 0.75]).unwrap().verdict, Verdict::Benign);
        assert_eq!(m.classify(&[1.5, 0.76]).unwrap().verdict, Verdict::Adversarial);
        assert_eq!(m.anomaly_score(&[0.5, 0.25]).unwrap(), 0.0);
        assert!(m.anomaly_score(&[1.0]).is_err());
    }

    #[test]
    fn no_bias_parameters() {
        let model = fit_svdd(&cluster(40, 5, 1), 0.05, &quick(1)).unwrap();
        assert!(model.params().iter().all(|(n, _)| !n.contains("bias")));
        assert_eq!(model.center().len(), 4);
    }

    #[test]
    fn zero_frr_rejects_no_training_example() {
        let data = cluster(40, 5, 2);
        let model = fit_svdd(&data, 0.0, &quick(2)).unwrap();
        assert!(data.iter().all(|s| model.classify(s).unwrap().verdict == Verdict::Benign));
    }

    #[test]
    fn seeded_runs_are_bitwise_equal() {
        let data = cluster(40, 5, 3);
        let a = fit_svdd(&data, 0.05, &quick(9)).unwrap();
        let b = fit_svdd(&data, 0.05, &SvddConfig { parallelism: Parallelism::threads(3), ..quick(9) }).unwrap();
        assert_eq!(a.to_container().encode(), b.to_container().encode());
    }

    #[test]
    fn save_load_round_trip() {
        let data = cluster(40, 5, 4);
        let model = fit_svdd(&data, 0.03, &SvddConfig { holdout_fraction: Some(0.25), ..quick(4) }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("svdd.trck");
        model.save(&path).unwrap();
        let back = SvddModel::load(&path).unwrap();
        assert_eq!(back.threshold(), model.threshold());
        for s in &data {
            assert_eq!(back.anomaly_score(s).unwrap(), model.anomaly_score(s).unwrap());
        }
        assert_eq!(back.to_container().encode(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn too_few_spectra() {
        assert!(matches!(
            fit_svdd(&cluster(31, 3, 1), 0.05, &quick(1)),
            Err(Error::InsufficientBenign { needed: 32, found: 31 })
        ));
    }

    #[test]
    fn collapse_predicate() {
        assert!(collapsed(&[0.0, 1e-20, 0.0]));
        assert!(!collapsed(&[0.0, 1e-6]));
    }

    #[test]
    fn zero_inputs_stay_off_the_center() {
        let data = vec![vec![0.0; 4]; 40];
        let cfg = SvddConfig { standardize: false, ..quick(1) };
        let model = fit_svdd(&data, 0.05, &cfg).unwrap();
        assert!((model.anomaly_score(&data[0]).unwrap() - 4.0 * 0.01).abs() < 1e-6);
    }
}
