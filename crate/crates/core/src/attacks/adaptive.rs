//! Trajectory-regularized adaptive attack.
//!
//! Minimizes `L_adv(x') + lambda * D(x')` inside the L-infinity ball, where
//! `L_adv` is the negated attack loss on the deployed model and `D` is the
//! squared distance between the trajectory of `x'` and that of the clean
//! input. `D` is min-max normalized with statistics from a plain PGD run
//! under the same budget and seed. The gradient of `D` is backpropagated
//! through every intermediate model and through the reference model's
//! softmax.

use serde::{Deserialize, Serialize};

use super::{attack_loss, check_input, goal_met, input_gradient, random_start, signed_step, AttackMethod, AttackSpec};
use crate::data::Target;
use crate::error::{Error, Result};
use crate::nn::{self, softmax_f64, Loss, Task, Wrt, LOG_CLAMP};
use crate::tensor::Tensor;
use crate::train::CheckpointSet;
use crate::trajectory::{epoch_pairs, trajectory_values, SynthesisMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceMode {
    Raw,
    /// `(raw - min) / (max - min)` with statistics from the current run.
    MinMax { min: f64, max: f64 },
}

/// Squared Euclidean distance between two trajectories, optionally min-max
/// normalized.
pub fn trajectory_distance(a: &[f64], b: &[f64], mode: DistanceMode) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "trajectories of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let raw: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    match mode {
        DistanceMode::Raw => Ok(raw),
        DistanceMode::MinMax { min, max } => {
            if max == min {
                return Err(Error::DegenerateNormalization(max));
            }
            Ok((raw - min) / (max - min))
        }
    }
}

/// Min-max normalizes a batch of raw distances.
pub fn minmax_normalize(raw: &[f64]) -> Result<Vec<f64>> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raw.is_empty() || max == min {
        return Err(Error::DegenerateNormalization(max));
    }
    Ok(raw.iter().map(|r| (r - min) / (max - min)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImSource {
    /// The defender's own intermediate models.
    Defender,
    /// Intermediate models the attacker trained independently.
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub lambda: f64,
    /// Success threshold on the raw trajectory distance.
    pub tau: f64,
    pub im_source: ImSource,
    /// Step-halving attempts per outer step before the search stops.
    pub inner_iterations: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tau: 0.19,
            im_source: ImSource::Defender,
            inner_iterations: 5,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau {} must be positive", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveOutcome {
    /// Final accepted iterate; the best one found since acceptance is
    /// monotone.
    pub x_adv: Tensor,
    /// Misclassified and within `tau`.
    pub success: bool,
    pub misclassified: bool,
    pub raw_distance: f64,
    /// Present when the objective used min-max normalization.
    pub normalization: Option<(f64, f64)>,
    pub normalized_distance: Option<f64>,
    /// Combined objective at the start and after every accepted step.
    pub objective: Vec<f64>,
    pub queries: usize,
}

pub(crate) struct Evaluation {
    pub objective: f64,
    pub grad: Vec<f32>,
}

/// Combined objective and its exact input gradient at `x`.
pub(crate) fn evaluate(
    set: &CheckpointSet,
    x: &Tensor,
    loss: &Loss,
    ascend: bool,
    reference: &[f64],
    mode: SynthesisMode,
    lambda: f64,
    scale: DistanceMode,
) -> Result<Evaluation> {
    let spec = set.spec();
    let traces = set
        .checkpoints()
        .iter()
        .map(|c| nn::forward_trace(spec, &c.params, x))
        .collect::<Result<Vec<_>>>()?;
    let t_idx = set.target_epoch() as usize - 1;
    let mut dz: Vec<Vec<f64>> = traces.iter().map(|t| vec![0.0; t.output().len()]).collect();

    let (adv_value, adv_grad) = loss.value_and_grad(traces[t_idx].output())?;
    let sgn = if ascend { -1.0 } else { 1.0 };
    let mut objective = sgn * adv_value;
    dz[t_idx].iter_mut().zip(&adv_grad).for_each(|(d, &g)| *d += sgn * g as f64);

    let pairs = epoch_pairs(set, mode);
    let outputs: Vec<&[f32]> = traces.iter().map(|t| t.output()).collect();
    let probs: Option<Vec<Vec<f64>>> =
        (spec.task() == Task::Classification).then(|| outputs.iter().map(|o| softmax_f64(o)).collect());
    let mut values = Vec::with_capacity(pairs.len());
    for &(r, k) in &pairs {
        let (r, k) = (r as usize - 1, k as usize - 1);
        values.push(match &probs {
            Some(p) => nn::cross_entropy_soft(&p[r], &p[k])?,
            None => crate::trajectory::synthetic_loss(Task::Regression, outputs[r], outputs[k])?,
        });
    }
    let raw = trajectory_distance(&values, reference, DistanceMode::Raw)?;
    let (dist_term, coef) = match scale {
        DistanceMode::Raw => (raw, lambda),
        DistanceMode::MinMax { min, max } => ((raw - min) / (max - min), lambda / (max - min)),
    };
    objective += lambda * dist_term;

    if lambda > 0.0 {
        for (i, &(r, k)) in pairs.iter().enumerate() {
            let (r, k) = (r as usize - 1, k as usize - 1);
            let c = coef * 2.0 * (values[i] - reference[i]);
            match &probs {
                Some(p) => {
                    let (_, gk) = Loss::SoftCrossEntropy(p[r].clone()).value_and_grad(outputs[k])?;
                    dz[k].iter_mut().zip(&gk).for_each(|(d, &g)| *d += c * g as f64);
                    // d/dz_r through the reference softmax.
                    let a: Vec<f64> = p[k].iter().map(|&q| -q.max(LOG_CLAMP).ln()).collect();
                    let mean: f64 = p[r].iter().zip(&a).map(|(pr, aj)| pr * aj).sum();
                    for j in 0..a.len() {
                        dz[r][j] += c * p[r][j] * (a[j] - mean);
                    }
                }
                None => {
                    let n = outputs[r].len() as f64;
                    for j in 0..outputs[r].len() {
                        let d = 2.0 * (outputs[r][j] as f64 - outputs[k][j] as f64) / n;
                        dz[r][j] += c * d;
                        dz[k][j] -= c * d;
                    }
                }
            }
        }
    }
    if !objective.is_finite() {
        return Err(Error::non_finite("adaptive objective"));
    }

    let mut grad = vec![0.0f32; x.len()];
    for (e, c) in set.checkpoints().iter().enumerate() {
        if dz[e].iter().all(|&v| v == 0.0) {
            continue;
        }
        let d: Vec<f32> = dz[e].iter().map(|&v| v as f32).collect();
        let g = nn::backward(spec, &c.params, &traces[e], &d, Wrt::Input)?;
        let gi = g.input.expect("input gradient requested");
        grad.iter_mut().zip(gi.data()).for_each(|(a, b)| *a += b);
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("adaptive gradient"));
    }
    Ok(Evaluation {
        objective,
        grad,
    })
}

/// Plain signed-gradient iterates on the deployed model, as PGD would take
/// them. Returns every iterate, starting point included.
fn pgd_iterates(set: &CheckpointSet, x: &Tensor, loss: &Loss, ascend: bool, attack: &AttackSpec) -> Result<Vec<Vec<f32>>> {
    let origin = x.data();
    let mut cur = if attack.random_start() {
        random_start(origin, attack.epsilon, attack.seed)
    } else {
        origin.to_vec()
    };
    let mut out = vec![cur.clone()];
    for _ in 0..attack.steps {
        let t = Tensor::new(x.shape().to_vec(), cur)?;
        let g = input_gradient(set.spec(), set.target_params(), &t, loss)?;
        cur = signed_step(origin, t.data(), &g, attack.alpha(), attack.epsilon, ascend);
        out.push(cur.clone());
    }
    Ok(out)
}

/// Runs the adaptive attack against `set`, which holds either the defender's
/// intermediate models or the attacker's surrogates with the defender's
/// deployed model as target. With `lambda == 0` the iterates are exactly
/// those of PGD under the same seed.
pub fn adaptive_attack(
    set: &CheckpointSet,
    x: &Tensor,
    y: &Target,
    attack: &AttackSpec,
    cfg: &AdaptiveConfig,
    mode: SynthesisMode,
) -> Result<AdaptiveOutcome> {
    attack.validate()?;
    cfg.validate()?;
    check_input(x)?;
    if attack.method != AttackMethod::Adaptive && attack.method != AttackMethod::Pgd {
        return Err(Error::InvalidArgument(format!("adaptive attack given a {} spec", attack.method)));
    }
    let (loss, ascend) = attack_loss(y, attack.target.as_ref());
    let reference = trajectory_values(set, x, mode)?;
    let k = set.len();
    let shape = x.shape().to_vec();
    let distance_of = |v: &[f32]| -> Result<f64> {
        let t = Tensor::new(shape.clone(), v.to_vec())?;
        trajectory_distance(&trajectory_values(set, &t, mode)?, &reference, DistanceMode::Raw)
    };

    let plain = pgd_iterates(set, x, &loss, ascend, attack)?;
    let mut queries = plain.len();
    let finish = |cur: Vec<f32>, objective: Vec<f64>, normalization: Option<(f64, f64)>, queries: usize| -> Result<AdaptiveOutcome> {
        let x_adv = Tensor::new(shape.clone(), cur)?;
        let raw = distance_of(x_adv.data())?;
        let out = nn::forward(set.spec(), set.target_params(), &x_adv)?;
        let misclassified = goal_met(out.data(), y, attack.target.as_ref(), attack.regression_tolerance);
        Ok(AdaptiveOutcome {
            x_adv,
            success: misclassified && raw <= cfg.tau,
            misclassified,
            raw_distance: raw,
            normalized_distance: normalization.map(|(lo, hi)| (raw - lo) / (hi - lo)),
            normalization,
            objective,
            queries: queries + k,
        })
    };

    if cfg.lambda == 0.0 {
        let objective = Vec::new();
        let last = plain.into_iter().last().expect("at least the starting point");
        return finish(last, objective, None, queries);
    }

    let raws = plain.iter().map(|v| distance_of(v)).collect::<Result<Vec<_>>>()?;
    queries += raws.len() * k;
    let lo = raws.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (scale, normalization) = if hi - lo > 1e-12 * hi.abs().max(1.0) {
        (DistanceMode::MinMax { min: lo, max: hi }, Some((lo, hi)))
    } else {
        (DistanceMode::Raw, None)
    };

    let origin = x.data();
    let mut cur = plain[0].clone();
    let eval = |v: &[f32]| -> Result<Evaluation> {
        let t = Tensor::new(shape.clone(), v.to_vec())?;
        evaluate(set, &t, &loss, ascend, &reference, mode, cfg.lambda, scale)
    };
    let mut state = eval(&cur)?;
    queries += 2 * k;
    let mut history = vec![state.objective];
    'outer: for _ in 0..attack.steps {
        let mut alpha = attack.alpha();
        for _ in 0..cfg.inner_iterations.max(1) {
            let cand = signed_step(origin, &cur, &state.grad, alpha, attack.epsilon, false);
            let next = eval(&cand)?;
            queries += 2 * k;
            if next.objective < state.objective {
                cur = cand;
                state = next;
                history.push(state.objective);
                continue 'outer;
            }
            alpha /= 2.0;
        }
        break;
    }
    finish(cur, history, normalization, queries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::pgd_attack;
    use crate::nn::{ModelSpec, ParamSet};
    use crate::train::Checkpoint;
    use std::sync::Arc;

    fn set(k: usize, task: Task, outputs: usize) -> CheckpointSet {
        let spec = ModelSpec::mlp(3, &[5], outputs, task).unwrap();
        let cps = (1..=k)
            .map(|e| Checkpoint {
                epoch: e as u32,
                params: Arc::new(ParamSet::init(&spec, 100 + e as u64)),
            })
            .collect();
        CheckpointSet::new(spec, cps, k as u32).unwrap()
    }

    #[test]
    fn distance_arithmetic() {
        assert_eq!(trajectory_distance(&[1.0, 2.0], &[1.0, 2.0], DistanceMode::Raw).unwrap(), 0.0);
        assert_eq!(trajectory_distance(&[1.0, 2.0], &[0.0, 0.0], DistanceMode::Raw).unwrap(), 5.0);
        assert_eq!(minmax_normalize(&[2.0, 5.0, 8.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(trajectory_distance(&[1.0], &[1.0, 2.0], DistanceMode::Raw).is_err());
        assert!(matches!(
            trajectory_distance(&[1.0], &[0.0], DistanceMode::MinMax { min: 2.0, max: 2.0 }),
            Err(Error::DegenerateNormalization(_))
        ));
    }

    fn fd_check(set: &CheckpointSet, y: Target, mode: SynthesisMode) {
        let x = Tensor::vector(vec![0.4, 0.7, 0.2]);
        let reference: Vec<f64> = trajectory_values(set, &Tensor::vector(vec![0.3, 0.6, 0.25]), mode).unwrap();
        let (loss, ascend) = attack_loss(&y, None);
        let scale = DistanceMode::MinMax { min: 0.01, max: 0.5 };
        let ev = evaluate(set, &x, &loss, ascend, &reference, mode, 1.0, scale).unwrap();
        let h = 1e-2f32;
        for i in 0..3 {
            let mut p = x.data().to_vec();
            p[i] += h;
            let mut m = x.data().to_vec();
            m[i] -= h;
            let f = |v: Vec<f32>| evaluate(set, &Tensor::vector(v), &loss, ascend, &reference, mode, 1.0, scale).unwrap().objective;
            let fd = (f(p) - f(m)) / (2.0 * h as f64);
            let g = ev.grad[i] as f64;
            assert!((fd - g).abs() <= 2e-2 * fd.abs().max(g.abs()).max(1e-2), "coord {i}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        fd_check(&set(4, Task::Classification, 3), Target::Class(1), SynthesisMode::Anchored);
        fd_check(&set(4, Task::Classification, 3), Target::Class(0), SynthesisMode::Consecutive);
        fd_check(&set(3, Task::Regression, 1), Target::Value(vec![0.5]), SynthesisMode::Anchored);
    }

    #[test]
    fn zero_lambda_is_pgd() {
        let s = set(4, Task::Classification, 3);
        let x = Tensor::vector(vec![0.4, 0.7, 0.2]);
        let y = Target::Class(nn::forward(s.spec(), s.target_params(), &x).unwrap().argmax());
        let attack = AttackSpec::pgd(0.1, 10).with_seed(7);
        let cfg = AdaptiveConfig {
            lambda: 0.0,
            ..AdaptiveConfig::default()
        };
        let a = adaptive_attack(&s, &x, &y, &attack, &cfg, SynthesisMode::Anchored).unwrap();
        let b = pgd_attack(s.spec(), s.target_params(), &x, &y, &attack).unwrap();
        assert_eq!(a.x_adv, b.x_adv);
    }

    #[test]
    fn accepted_objective_never_rises() {
        let s = set(5, Task::Classification, 3);
        let x = Tensor::vector(vec![0.4, 0.7, 0.2]);
        let y = Target::Class(nn::forward(s.spec(), s.target_params(), &x).unwrap().argmax());
        let attack = AttackSpec {
            method: AttackMethod::Adaptive,
            ..AttackSpec::pgd(0.1, 20).with_seed(2)
        };
        let out = adaptive_attack(&s, &x, &y, &attack, &AdaptiveConfig::default(), SynthesisMode::Anchored).unwrap();
        assert!(out.objective.windows(2).all(|w| w[1] < w[0]));
        assert!(out.x_adv.max_abs_diff(&x) <= 0.1 + 1e-7);
    }
}
