//! Adversarial example generation: FGSM, BIM/PGD under an L-infinity
//! budget, the label-only boundary attack, and the trajectory-regularized
//! adaptive attack.

pub mod adaptive;
pub mod persist;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use adaptive::{adaptive_attack, trajectory_distance, AdaptiveConfig, AdaptiveOutcome, DistanceMode, ImSource};

use crate::data::Target;
use crate::error::{Error, Result};
use crate::nn::{self, Loss, ModelSpec, ParamSet, Wrt};
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Bim,
    Pgd,
    Boundary,
    Adaptive,
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Bim => "bim",
            AttackMethod::Pgd => "pgd",
            AttackMethod::Boundary => "boundary",
            AttackMethod::Adaptive => "adaptive",
        })
    }
}

impl FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackMethod::Fgsm),
            "bim" => Ok(AttackMethod::Bim),
            "pgd" => Ok(AttackMethod::Pgd),
            "boundary" => Ok(AttackMethod::Boundary),
            "adaptive" => Ok(AttackMethod::Adaptive),
            other => Err(Error::Config(format!("unknown attack method `{other}`"))),
        }
    }
}

pub const DEFAULT_STEPS: usize = 10;
pub const DEFAULT_REGRESSION_TOLERANCE: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub method: AttackMethod,
    /// L-infinity budget in feature units.
    pub epsilon: f32,
    /// Step size; `epsilon / 4` when unset.
    pub alpha: Option<f32>,
    pub steps: usize,
    /// Target label or value for a targeted attack.
    pub target: Option<Target>,
    pub seed: u64,
    /// Relative band a regression prediction must leave (untargeted) or
    /// enter (targeted) for the attack to count as successful.
    pub regression_tolerance: f64,
}

impl AttackSpec {
    pub fn new(method: AttackMethod, epsilon: f32) -> Self {
        Self {
            method,
            epsilon,
            alpha: None,
            steps: if method == AttackMethod::Boundary { 2000 } else { DEFAULT_STEPS },
            target: None,
            seed: 0,
            regression_tolerance: DEFAULT_REGRESSION_TOLERANCE,
        }
    }

    pub fn fgsm(epsilon: f32) -> Self {
        Self {
            steps: 1,
            ..Self::new(AttackMethod::Fgsm, epsilon)
        }
    }

    pub fn pgd(epsilon: f32, steps: usize) -> Self {
        Self {
            steps,
            ..Self::new(AttackMethod::Pgd, epsilon)
        }
    }

    pub fn bim(epsilon: f32, steps: usize) -> Self {
        Self {
            steps,
            ..Self::new(AttackMethod::Bim, epsilon)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_alpha(mut self, alpha: f32) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn alpha(&self) -> f32 {
        self.alpha.unwrap_or(self.epsilon / 4.0)
    }

    /// PGD starts from a random point in the ball; BIM and the one-step
    /// attack start from the input itself.
    pub fn random_start(&self) -> bool {
        matches!(self.method, AttackMethod::Pgd | AttackMethod::Adaptive)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon {} must be finite and non-negative", self.epsilon)));
        }
        if self.method != AttackMethod::Fgsm && self.method != AttackMethod::Boundary {
            if self.steps == 0 {
                return Err(Error::Config("iterative attacks need at least one step".into()));
            }
            if !(self.alpha() > 0.0) && self.epsilon > 0.0 {
                return Err(Error::Config(format!("step size {} must be positive", self.alpha())));
            }
        }
        if !(self.regression_tolerance >= 0.0) {
            return Err(Error::Config("regression tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Result of one attack run on one input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub x_adv: Tensor,
    pub success: bool,
    /// Model evaluations spent (forward passes, with or without gradients).
    pub queries: usize,
}

impl AttackOutcome {
    pub fn linf(&self, x: &Tensor) -> f32 {
        self.x_adv.max_abs_diff(x)
    }

    pub fn l2(&self, x: &Tensor) -> f64 {
        l2_distance(&self.x_adv, x)
    }
}

pub fn l2_distance(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `-1`, `0` or `1`; zero gradients leave the coordinate alone.
#[inline]
pub(crate) fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss whose input gradient the attack follows, and whether to ascend it.
pub(crate) fn attack_loss(y: &Target, target: Option<&Target>) -> (Loss, bool) {
    let to_loss = |t: &Target| match t {
        Target::Class(c) => Loss::CrossEntropy(*c),
        Target::Value(v) => Loss::Mse(v.clone()),
    };
    match target {
        Some(t) => (to_loss(t), false),
        None => (to_loss(y), true),
    }
}

pub(crate) fn input_gradient(spec: &ModelSpec, params: &ParamSet, x: &Tensor, loss: &Loss) -> Result<Vec<f32>> {
    let g = nn::gradients(spec, params, x, loss, Wrt::Input)?;
    let input = g.input.expect("input gradient requested").into_data();
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("input gradient"));
    }
    Ok(input)
}

/// One signed step followed by projection onto the ball around `origin` and
/// the unit box.
pub(crate) fn signed_step(origin: &[f32], current: &[f32], grad: &[f32], alpha: f32, eps: f32, ascend: bool) -> Vec<f32> {
    let dir = if ascend { 1.0 } else { -1.0 };
    origin
        .iter()
        .zip(current)
        .zip(grad)
        .map(|((&o, &c), &g)| project(o, c + alpha * (dir * sign(g)), eps))
        .collect()
}

#[inline]
pub(crate) fn project(origin: f32, v: f32, eps: f32) -> f32 {
    v.max(origin - eps).min(origin + eps).clamp(0.0, 1.0)
}

pub(crate) fn random_start(x: &[f32], eps: f32, seed: u64) -> Vec<f32> {
    let mut rng = seeded(seed, "pgd-start");
    x.iter()
        .map(|&o| {
            let u: f32 = if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 };
            project(o, o + u, eps)
        })
        .collect()
}

/// Whether `x_adv` meets the attack goal on the given model.
pub fn is_adversarial(spec: &ModelSpec, params: &ParamSet, x_adv: &Tensor, y: &Target, attack: &AttackSpec) -> Result<bool> {
    let out = nn::forward(spec, params, x_adv)?;
    Ok(goal_met(out.data(), y, attack.target.as_ref(), attack.regression_tolerance))
}

pub(crate) fn goal_met(out: &[f32], y: &Target, target: Option<&Target>, tol: f64) -> bool {
    let within = |v: &[f32]| {
        v.iter()
            .zip(out)
            .all(|(&t, &p)| (p as f64 - t as f64).abs() <= tol * (t as f64).abs().max(1e-6))
    };
    match (target, y) {
        (Some(Target::Class(t)), _) => crate::tensor::argmax(out) == *t,
        (Some(Target::Value(t)), _) => within(t),
        (None, Target::Class(c)) => crate::tensor::argmax(out) != *c,
        (None, Target::Value(v)) => !within(v),
    }
}

fn check_input(x: &Tensor) -> Result<()> {
    if x.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidArgument("attack input must lie in [0, 1]".into()));
    }
    Ok(())
}

/// One-step attack: `clip(x + eps * sign(grad))`.
pub fn fgsm(spec: &ModelSpec, params: &ParamSet, x: &Tensor, y: &Target, eps: f32) -> Result<Tensor> {
    check_input(x)?;
    let (loss, ascend) = attack_loss(y, None);
    let g = input_gradient(spec, params, x, &loss)?;
    let dir = if ascend { 1.0 } else { -1.0 };
    let data = x
        .data()
        .iter()
        .zip(&g)
        .map(|(&v, &gi)| (v + eps * (dir * sign(gi))).clamp(0.0, 1.0))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Iterative signed-gradient attack. BIM when `attack.method` is
/// [`AttackMethod::Bim`] (no random start). `observe` sees every iterate,
/// starting point included.
pub fn pgd_attack_observed(
    spec: &ModelSpec,
    params: &ParamSet,
    x: &Tensor,
    y: &Target,
    attack: &AttackSpec,
    observe: &mut dyn FnMut(usize, &[f32]),
) -> Result<AttackOutcome> {
    attack.validate()?;
    check_input(x)?;
    let (loss, ascend) = attack_loss(y, attack.target.as_ref());
    let (eps, alpha) = (attack.epsilon, attack.alpha());
    let origin = x.data();
    let mut cur = if attack.random_start() {
        random_start(origin, eps, attack.seed)
    } else {
        origin.to_vec()
    };
    observe(0, &cur);
    for step in 1..=attack.steps {
        let t = Tensor::new(x.shape().to_vec(), cur)?;
        let g = input_gradient(spec, params, &t, &loss)?;
        cur = signed_step(origin, t.data(), &g, alpha, eps, ascend);
        observe(step, &cur);
    }
    let x_adv = Tensor::new(x.shape().to_vec(), cur)?;
    let success = is_adversarial(spec, params, &x_adv, y, attack)?;
    Ok(AttackOutcome {
        x_adv,
        success,
        queries: attack.steps + 1,
    })
}

pub fn pgd_attack(spec: &ModelSpec, params: &ParamSet, x: &Tensor, y: &Target, attack: &AttackSpec) -> Result<AttackOutcome> {
    pgd_attack_observed(spec, params, x, y, attack, &mut |_, _| {})
}

pub const BOUNDARY_PROBES: usize = 500;
/// Consecutive rejections before both step sizes are halved.
pub const BOUNDARY_PATIENCE: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryOutcome {
    pub outcome: AttackOutcome,
    /// L2 distance to the input at the start and after every accepted step.
    pub distances: Vec<f64>,
    pub accepted: usize,
}

/// Label-only attack: start from a random misclassified probe and walk along
/// the decision boundary toward the input. Each step perturbs orthogonally on
/// the sphere around the input, then contracts toward it; a candidate is kept
/// only if it is still adversarial and no farther away.
pub fn boundary_attack(
    spec: &ModelSpec,
    params: &ParamSet,
    x: &Tensor,
    y: &Target,
    steps: usize,
    seed: u64,
) -> Result<BoundaryOutcome> {
    check_input(x)?;
    let attack = AttackSpec::new(AttackMethod::Boundary, 0.0);
    let mut queries = 0usize;
    let mut query = |v: &[f32]| -> Result<bool> {
        queries += 1;
        let t = Tensor::new(x.shape().to_vec(), v.to_vec())?;
        is_adversarial(spec, params, &t, y, &attack)
    };
    let mut rng = seeded(seed, "boundary");
    let origin = x.data();
    let mut start = None;
    for _ in 0..BOUNDARY_PROBES {
        let probe: Vec<f32> = (0..origin.len()).map(|_| rng.random::<f32>()).collect();
        if query(&probe)? {
            start = Some(probe);
            break;
        }
    }
    let Some(mut cur) = start else {
        return Ok(BoundaryOutcome {
            outcome: AttackOutcome {
                x_adv: x.clone(),
                success: false,
                queries,
            },
            distances: Vec::new(),
            accepted: 0,
        });
    };
    let dist = |v: &[f32]| -> f64 {
        v.iter()
            .zip(origin)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut d = dist(&cur);
    let mut distances = vec![d];
    let (mut orth, mut source) = (0.1f64, 0.05f64);
    let mut streak = 0usize;
    let mut accepted = 0usize;
    for _ in 0..steps {
        if d == 0.0 {
            break;
        }
        let diff: Vec<f64> = origin.iter().zip(&cur).map(|(&o, &c)| o as f64 - c as f64).collect();
        let mut eta: Vec<f64> = (0..diff.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let along = eta.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>() / (d * d);
        eta.iter_mut().zip(&diff).for_each(|(e, v)| *e -= along * v);
        let norm = eta.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        // Orthogonal move, pulled back onto the sphere of radius d.
        let mut cand: Vec<f64> = cur.iter().zip(&eta).map(|(&c, e)| c as f64 + orth * d * e / norm).collect();
        let r = cand.iter().zip(origin).map(|(c, &o)| (c - o as f64).powi(2)).sum::<f64>().sqrt();
        cand.iter_mut().zip(origin).for_each(|(c, &o)| *c = o as f64 + (*c - o as f64) * d / r);
        cand.iter_mut().zip(origin).for_each(|(c, &o)| *c += source * (o as f64 - *c));
        let cand: Vec<f32> = cand.into_iter().map(|v| (v as f32).clamp(0.0, 1.0)).collect();
        let cd = dist(&cand);
        if cd <= d && query(&cand)? {
            cur = cand;
            d = cd;
            distances.push(d);
            accepted += 1;
            streak = 0;
        } else {
            streak += 1;
            if streak >= BOUNDARY_PATIENCE {
                orth /= 2.0;
                source /= 2.0;
                streak = 0;
            }
        }
    }
    Ok(BoundaryOutcome {
        outcome: AttackOutcome {
            x_adv: Tensor::new(x.shape().to_vec(), cur)?,
            success: true,
            queries,
        },
        distances,
        accepted,
    })
}

/// Dispatches on `attack.method`. The adaptive attack needs the checkpoint
/// set and goes through [`adaptive_attack`] instead.
pub fn run_attack(spec: &ModelSpec, params: &ParamSet, x: &Tensor, y: &Target, attack: &AttackSpec) -> Result<AttackOutcome> {
    attack.validate()?;
    match attack.method {
        AttackMethod::Fgsm => {
            let x_adv = fgsm(spec, params, x, y, attack.epsilon)?;
            let success = is_adversarial(spec, params, &x_adv, y, attack)?;
            Ok(AttackOutcome { x_adv, success, queries: 2 })
        }
        AttackMethod::Bim | AttackMethod::Pgd => pgd_attack(spec, params, x, y, attack),
        AttackMethod::Boundary => Ok(boundary_attack(spec, params, x, y, attack.steps, attack.seed)?.outcome),
        AttackMethod::Adaptive => Err(Error::InvalidArgument(
            "the adaptive attack runs against a checkpoint set".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Task;

    fn linear() -> (ModelSpec, ParamSet) {
        let spec = ModelSpec::mlp(3, &[], 2, Task::Classification).unwrap();
        let mut p = ParamSet::zeros(&spec);
        p.get_mut("0.weight").unwrap().data_mut().copy_from_slice(&[1.0, -1.0, 0.5, -1.0, 1.0, -0.5]);
        (spec, p)
    }

    #[test]
    fn zero_budget_is_identity() {
        let (spec, p) = linear();
        let x = Tensor::vector(vec![0.3, 0.6, 0.2]);
        assert_eq!(fgsm(&spec, &p, &x, &Target::Class(0), 0.0).unwrap(), x);
    }

    #[test]
    fn saturated_signs_move_by_epsilon() {
        let (spec, p) = linear();
        let x = Tensor::vector(vec![0.3, 0.6, 0.2]);
        // Ascending CE for class 1 raises logit 0, so grad is +,-,+.
        let adv = fgsm(&spec, &p, &x, &Target::Class(1), 0.05).unwrap();
        let d: Vec<f32> = adv.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        for (di, s) in d.iter().zip([1.0f32, -1.0, 1.0]) {
            assert!((di - s * 0.05).abs() < 1e-6, "{d:?}");
        }
    }

    #[test]
    fn one_step_pgd_equals_fgsm() {
        let (spec, p) = linear();
        let x = Tensor::vector(vec![0.3, 0.99, 0.02]);
        let a = fgsm(&spec, &p, &x, &Target::Class(0), 0.1).unwrap();
        let spec_b = AttackSpec::bim(0.1, 1).with_alpha(0.1);
        let b = pgd_attack(&spec, &p, &x, &Target::Class(0), &spec_b).unwrap();
        assert_eq!(a, b.x_adv);
    }

    #[test]
    fn iterates_stay_in_ball() {
        let (spec, p) = linear();
        let x = Tensor::vector(vec![0.5, 0.01, 0.97]);
        let a = AttackSpec::pgd(16.0 / 255.0, 10).with_seed(3);
        let mut seen = 0;
        pgd_attack_observed(&spec, &p, &x, &Target::Class(0), &a, &mut |_, v| {
            seen += 1;
            for (vi, xi) in v.iter().zip(x.data()) {
                assert!((vi - xi).abs() <= a.epsilon + 1e-7);
                assert!((0.0..=1.0).contains(vi));
            }
        })
        .unwrap();
        assert_eq!(seen, 11);
    }

    #[test]
    fn boundary_distances_never_grow() {
        let (spec, p) = linear();
        let x = Tensor::vector(vec![0.7, 0.2, 0.5]);
        let y = Target::Class(0);
        assert_eq!(nn::forward(&spec, &p, &x).unwrap().argmax(), 0);
        let r = boundary_attack(&spec, &p, &x, &y, 300, 5).unwrap();
        assert!(r.outcome.success);
        assert!(r.distances.windows(2).all(|w| w[1] <= w[0]));
        let attack = AttackSpec::new(AttackMethod::Boundary, 0.0);
        assert!(is_adversarial(&spec, &p, &r.outcome.x_adv, &y, &attack).unwrap());
        let zero = boundary_attack(&spec, &p, &x, &y, 0, 5).unwrap();
        assert_eq!(zero.distances.len(), 1);
    }

    #[test]
    fn boundary_without_start_fails_explicitly() {
        let spec = ModelSpec::mlp(2, &[], 2, Task::Classification).unwrap();
        let mut p = ParamSet::zeros(&spec);
        p.get_mut("0.bias").unwrap().data_mut().copy_from_slice(&[5.0, 0.0]);
        let x = Tensor::vector(vec![0.5, 0.5]);
        let r = boundary_attack(&spec, &p, &x, &Target::Class(0), 10, 1).unwrap();
        assert!(!r.outcome.success);
        assert_eq!(r.outcome.x_adv, x);
    }

    #[test]
    fn regression_success_band() {
        let y = Target::Value(vec![1.0]);
        assert!(!goal_met(&[1.03], &y, None, 0.04));
        assert!(goal_met(&[1.05], &y, None, 0.04));
        assert!(goal_met(&[2.0], &y, Some(&Target::Value(vec![2.05])), 0.04));
    }

    #[test]
    fn spec_validation() {
        assert!(AttackSpec::fgsm(-0.1).validate().is_err());
        assert!(AttackSpec::pgd(0.1, 0).validate().is_err());
        assert!(AttackSpec::pgd(0.1, 3).validate().is_ok());
    }
}
