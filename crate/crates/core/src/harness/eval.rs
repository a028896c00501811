//! Detection accuracy and online FRR over attack sets, ablations, and report
//! files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::{prepare, Offline, PipelineBundle, Workspace};
use super::{ExperimentConfig, Variant};
use crate::attacks::{adaptive_attack, run_attack, AdaptiveConfig, AttackMethod, AttackSpec, ImSource};
use crate::data::Example;
use crate::detector::calibrate_threshold;
use crate::error::{Error, Result, StageExt};
use crate::parallel::map_indexed;
use crate::rng::derive_seed;
use crate::train::CheckpointSet;

/// Adversarial inputs produced by one attack, each flagged by whether the
/// attack met its goal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialSet {
    pub attack: String,
    /// Perturbed inputs, carrying the source example's id and label.
    pub examples: Vec<Example>,
    pub success: Vec<bool>,
    /// Final raw trajectory distance, for the adaptive attack.
    pub trajectory_distance: Vec<Option<f64>>,
    /// Model queries spent over all attempts.
    pub queries: u64,
}

impl AdversarialSet {
    pub fn attempted(&self) -> usize {
        self.examples.len()
    }

    /// The successful subset, the only inputs detection accuracy counts.
    pub fn successful(&self) -> AdversarialSet {
        let keep: Vec<usize> = (0..self.examples.len()).filter(|&i| self.success[i]).collect();
        AdversarialSet {
            attack: self.attack.clone(),
            examples: keep.iter().map(|&i| self.examples[i].clone()).collect(),
            success: vec![true; keep.len()],
            trajectory_distance: keep.iter().map(|&i| self.trajectory_distance[i]).collect(),
            queries: self.queries,
        }
    }

    pub fn success_rate(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.success.iter().filter(|&&s| s).count() as f64 / self.examples.len() as f64
    }
}

/// The attack spec used against one source example.
pub fn attack_spec_for(config: &ExperimentConfig, method: AttackMethod, example_id: usize) -> AttackSpec {
    let mut spec = AttackSpec::new(method, config.attack_epsilon);
    if method != AttackMethod::Boundary {
        spec.steps = if method == AttackMethod::Fgsm { 1 } else { config.attack_steps };
    }
    spec.alpha = config.attack_alpha;
    spec.regression_tolerance = config.regression_tolerance;
    spec.seed = derive_seed(config.seeds.attack, &method.to_string(), example_id as u64);
    spec
}

pub fn adaptive_config(config: &ExperimentConfig) -> AdaptiveConfig {
    AdaptiveConfig {
        lambda: config.attack_lambda,
        tau: config.attack_tau,
        im_source: config.attack_im_source,
        inner_iterations: config.attack_inner_iterations,
    }
}

/// Runs every configured attack on `sources`. The result holds every
/// attempt; [`AdversarialSet::successful`] filters.
pub fn generate_adversarial(ws: &Workspace, sources: &[Example]) -> Result<Vec<AdversarialSet>> {
    let c = &ws.config;
    let mut surrogate: Option<CheckpointSet> = None;
    let mut sets = Vec::with_capacity(c.attack_methods.len());
    for &method in &c.attack_methods {
        let results: Vec<Result<(Example, bool, Option<f64>, usize)>> = if method == AttackMethod::Adaptive {
            let set: &CheckpointSet = match c.attack_im_source {
                ImSource::Defender => &ws.checkpoints,
                ImSource::Surrogate => {
                    if surrogate.is_none() {
                        surrogate = Some(ws.surrogate_checkpoints()?);
                    }
                    surrogate.as_ref().expect("surrogate just built")
                }
            };
            let cfg = adaptive_config(c);
            map_indexed(sources, c.parallelism, |_, ex| {
                let spec = attack_spec_for(c, method, ex.id);
                let out = adaptive_attack(set, &ex.x, &ex.target, &spec, &cfg, c.trajectory_mode)
                    .map_err(|e| e.for_example(ex.id))?;
                let adv = Example {
                    id: ex.id,
                    x: out.x_adv,
                    target: ex.target.clone(),
                };
                Ok((adv, out.success, Some(out.raw_distance), out.queries))
            })
        } else {
            let (spec, params) = (ws.checkpoints.spec(), ws.checkpoints.target_params());
            map_indexed(sources, c.parallelism, |_, ex| {
                let attack = attack_spec_for(c, method, ex.id);
                let out = run_attack(spec, params, &ex.x, &ex.target, &attack).map_err(|e| e.for_example(ex.id))?;
                let adv = Example {
                    id: ex.id,
                    x: out.x_adv,
                    target: ex.target.clone(),
                };
                Ok((adv, out.success, None, out.queries))
            })
        };
        let mut set = AdversarialSet {
            attack: method.to_string(),
            examples: Vec::with_capacity(sources.len()),
            success: Vec::with_capacity(sources.len()),
            trajectory_distance: Vec::with_capacity(sources.len()),
            queries: 0,
        };
        for r in results {
            let (adv, success, distance, queries) = r.stage("attack")?;
            set.examples.push(adv);
            set.success.push(success);
            set.trajectory_distance.push(distance);
            set.queries += queries as u64;
        }
        sets.push(set);
    }
    Ok(sets)
}

/// Detection outcome of one attack at one preset FRR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub attack: String,
    pub preset_frr: f64,
    pub threshold: f64,
    pub successful: usize,
    pub detected: usize,
    pub detection_accuracy: f64,
    pub holdout: usize,
    pub rejected: usize,
    pub online_frr: f64,
}

/// Deterministic work counters; wall-clock latencies go to a separate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub trajectory_steps: usize,
    pub inputs_scored: usize,
    /// Checkpoint forward passes spent synthesizing trajectories.
    pub checkpoint_forwards: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub preset_frr: f64,
    pub threshold: f64,
    /// Fraction of successful adversarial inputs flagged, over all attacks.
    pub detection_accuracy: f64,
    /// Fraction of held-out benign inputs flagged.
    pub online_frr: f64,
    pub adversarial: usize,
    pub detected: usize,
    pub holdout: usize,
    pub rejected: usize,
    /// One row per (attack, preset FRR).
    pub rows: Vec<AttackRow>,
    pub config_hash: String,
    pub stage_hashes: BTreeMap<String, String>,
    pub config: BTreeMap<String, String>,
    pub runtime: RuntimeStats,
}

fn rate(hits: usize, n: usize) -> f64 {
    hits as f64 / n as f64
}

fn count_above(scores: &[f64], threshold: f64) -> usize {
    scores.iter().filter(|&&s| s > threshold).count()
}

/// Scores every holdout and adversarial input and tallies verdicts at the
/// bundle's preset and at every preset in `config.frr_presets`.
pub fn evaluate_detection(
    bundle: &PipelineBundle,
    config: &ExperimentConfig,
    holdout: &[Example],
    adversarial: &[AdversarialSet],
) -> Result<EvalReport> {
    if holdout.is_empty() {
        return Err(Error::InvalidArgument("empty benign holdout".into()));
    }
    if adversarial.is_empty() || adversarial.iter().any(|a| a.examples.is_empty()) {
        return Err(Error::InvalidArgument("empty adversarial set".into()));
    }
    for a in adversarial {
        if let Some(i) = a.success.iter().position(|&s| !s) {
            return Err(Error::InvalidArgument(format!(
                "{} set holds an unsuccessful attack on example {}",
                a.attack, a.examples[i].id
            )));
        }
    }
    if bundle.config_hash() != config.hash() {
        return Err(Error::Config("bundle was fitted under a different config".into()));
    }
    let score_all = |examples: &[Example]| -> Result<Vec<f64>> {
        map_indexed(examples, config.parallelism, |_, ex| {
            bundle.score(&ex.x).map_err(|e| e.for_example(ex.id))
        })
        .into_iter()
        .collect()
    };
    let benign = score_all(holdout).stage("eval")?;
    let adv: Vec<Vec<f64>> = adversarial
        .iter()
        .map(|a| score_all(&a.examples).stage("eval"))
        .collect::<Result<_>>()?;

    let mut presets = config.frr_presets.clone();
    presets.sort_by(f64::total_cmp);
    presets.dedup();
    let mut rows = Vec::with_capacity(adversarial.len() * presets.len());
    for (set, scores) in adversarial.iter().zip(&adv) {
        for &p in &presets {
            let threshold = calibrate_threshold(bundle.calibration_scores(), p)?;
            let detected = count_above(scores, threshold);
            let rejected = count_above(&benign, threshold);
            rows.push(AttackRow {
                attack: set.attack.clone(),
                preset_frr: p,
                threshold,
                successful: scores.len(),
                detected,
                detection_accuracy: rate(detected, scores.len()),
                holdout: benign.len(),
                rejected,
                online_frr: rate(rejected, benign.len()),
            });
        }
    }

    let threshold = bundle.detector().threshold();
    let adversarial_n: usize = adv.iter().map(Vec::len).sum();
    let detected: usize = adv.iter().map(|s| count_above(s, threshold)).sum();
    let rejected = count_above(&benign, threshold);
    let inputs_scored = benign.len() + adversarial_n;
    Ok(EvalReport {
        variant: bundle.variant(),
        preset_frr: bundle.preset_frr(),
        threshold,
        detection_accuracy: rate(detected, adversarial_n),
        online_frr: rate(rejected, benign.len()),
        adversarial: adversarial_n,
        detected,
        holdout: benign.len(),
        rejected,
        rows,
        config_hash: config.hash(),
        stage_hashes: config.stage_hashes(),
        config: config.echo(),
        runtime: RuntimeStats {
            trajectory_steps: bundle.n_used(),
            inputs_scored,
            checkpoint_forwards: (inputs_scored * bundle.checkpoints().len()) as u64,
        },
    })
}

/// Full offline phase plus evaluation for each variant, sharing the
/// checkpoints, attacks and autoencoder between them.
pub fn run_ablations(config: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<EvalReport>> {
    let ws = prepare(config, None)?;
    let offline = Offline::new(&ws)?;
    let holdout = ws.benign_holdout()?;
    let adversarial: Vec<AdversarialSet> = generate_adversarial(&ws, &ws.attack_sources()?)?
        .iter()
        .map(AdversarialSet::successful)
        .collect();
    variants
        .iter()
        .map(|&v| {
            let bundle = offline.bundle(v)?;
            evaluate_detection(&bundle, &config.with_variant(v), &holdout, &adversarial)
        })
        .collect()
}

pub fn run_ablation(config: &ExperimentConfig, variant: Variant) -> Result<EvalReport> {
    Ok(run_ablations(config, &[variant])?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

pub const CSV_HEADER: &str =
    "variant,attack,preset_frr,threshold,successful,detected,detection_accuracy,holdout,rejected,online_frr";

pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    report.variant,
                    r.attack,
                    r.preset_frr,
                    r.threshold,
                    r.successful,
                    r.detected,
                    r.detection_accuracy,
                    r.holdout,
                    r.rejected,
                    r.online_frr
                );
            }
            Ok(out)
        }
    }
}

pub fn emit_report(report: &EvalReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = render_report(report, format)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_report(json: &str) -> Result<EvalReport> {
    Ok(serde_json::from_str(json)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        let row = |attack: &str, p: f64| AttackRow {
            attack: attack.into(),
            preset_frr: p,
            threshold: 0.123456789,
            successful: 7,
            detected: 6,
            detection_accuracy: 6.0 / 7.0,
            holdout: 9,
            rejected: 1,
            online_frr: 1.0 / 9.0,
        };
        let cfg = ExperimentConfig::default();
        EvalReport {
            variant: Variant::Full,
            preset_frr: 0.05,
            threshold: 0.1,
            detection_accuracy: 12.0 / 14.0,
            online_frr: 1.0 / 9.0,
            adversarial: 14,
            detected: 12,
            holdout: 9,
            rejected: 1,
            rows: vec![row("fgsm", 0.01), row("fgsm", 0.05), row("pgd", 0.01), row("pgd", 0.05)],
            config_hash: cfg.hash(),
            stage_hashes: cfg.stage_hashes(),
            config: cfg.echo(),
            runtime: RuntimeStats {
                trajectory_steps: 29,
                inputs_scored: 23,
                checkpoint_forwards: 690,
            },
        }
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let r = report();
        let first = render_report(&r, ReportFormat::Json).unwrap();
        let back = parse_report(&first).unwrap();
        assert_eq!(back, r);
        assert_eq!(render_report(&back, ReportFormat::Json).unwrap(), first);
    }

    #[test]
    fn csv_has_one_row_per_attack_and_preset() {
        let text = render_report(&report(), ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len() - 1, 2 * 2);
        let fields: Vec<&str> = lines[1].split(',').collect();
        let acc: f64 = fields[6].parse().unwrap();
        assert!((acc - 6.0 / 7.0).abs() < 1e-6);
    }

    #[test]
    fn successful_filter_keeps_flags_aligned() {
        let ex = |id| Example {
            id,
            x: crate::tensor::Tensor::new(vec![1], vec![0.5]).unwrap(),
            target: crate::data::Target::Class(0),
        };
        let set = AdversarialSet {
            attack: "pgd".into(),
            examples: vec![ex(0), ex(1), ex(2)],
            success: vec![true, false, true],
            trajectory_distance: vec![Some(0.1), Some(0.2), Some(0.3)],
            queries: 30,
        };
        let s = set.successful();
        assert_eq!(s.examples.iter().map(|e| e.id).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(s.trajectory_distance, vec![Some(0.1), Some(0.3)]);
        assert!((set.success_rate() - 2.0 / 3.0).abs() < 1e-12);
    }
}
