//! Softmax, cross-entropy and mean-squared error, with their gradients
//! with respect to the network output.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to predicted probabilities before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Max-shifted softmax evaluated in `f64`.
pub fn softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 1 {
        return Err(Error::InvalidArgument(format!(
            "softmax expects a vector, got shape {:?}",
            logits.shape()
        )));
    }
    let probs = softmax_f64(logits.data());
    Tensor::new(vec![probs.len()], probs.into_iter().map(|p| p as f32).collect())
}

/// `-sum_c p_c ln(max(q_c, 1e-12))`.
pub fn cross_entropy_soft(target: &[f64], predicted: &[f64]) -> Result<f64> {
    if target.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "cross-entropy over {} targets and {} predictions",
            target.len(),
            predicted.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::InvalidArgument("cross-entropy of empty vectors".into()));
    }
    Ok(-target
        .iter()
        .zip(predicted)
        .map(|(&p, &q)| if p == 0.0 { 0.0 } else { p * q.max(LOG_CLAMP).ln() })
        .sum::<f64>())
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .map(|&v| if v == 0.0 { 0.0 } else { v * v.max(LOG_CLAMP).ln() })
        .sum::<f64>()
}

pub fn mse_loss(target: &Tensor, predicted: &Tensor) -> Result<f64> {
    if target.shape() != predicted.shape() {
        return Err(Error::InvalidArgument(format!(
            "mse over shapes {:?} and {:?}",
            target.shape(),
            predicted.shape()
        )));
    }
    Ok(mse(target.data(), predicted.data()))
}

pub(crate) fn mse(target: &[f32], predicted: &[f32]) -> f64 {
    let sum: f64 = target
        .iter()
        .zip(predicted)
        .map(|(&t, &p)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum();
    sum / target.len() as f64
}

/// Loss attached to a network output for gradient computation.
#[derive(Debug, Clone, PartialEq)]
pub enum Loss {
    /// Cross-entropy against a hard label.
    CrossEntropy(usize),
    /// Cross-entropy against a target probability vector.
    SoftCrossEntropy(Vec<f64>),
    Mse(Vec<f32>),
}

impl Loss {
    /// Loss value and its gradient with respect to the output (logits for the
    /// cross-entropy variants).
    pub fn value_and_grad(&self, output: &[f32]) -> Result<(f64, Vec<f32>)> {
        match self {
            Loss::CrossEntropy(label) => {
                if *label >= output.len() {
                    return Err(Error::InvalidArgument(format!(
                        "label {label} out of range for {} classes",
                        output.len()
                    )));
                }
                let mut target = vec![0.0; output.len()];
                target[*label] = 1.0;
                soft_ce_value_and_grad(&target, output)
            }
            Loss::SoftCrossEntropy(target) => {
                if target.len() != output.len() {
                    return Err(Error::InvalidArgument(format!(
                        "soft target of length {} for {} outputs",
                        target.len(),
                        output.len()
                    )));
                }
                soft_ce_value_and_grad(target, output)
            }
            Loss::Mse(target) => {
                if target.len() != output.len() {
                    return Err(Error::InvalidArgument(format!(
                        "mse target of length {} for {} outputs",
                        target.len(),
                        output.len()
                    )));
                }
                let n = output.len() as f64;
                let grad = output
                    .iter()
                    .zip(target)
                    .map(|(&o, &t)| (2.0 * (o as f64 - t as f64) / n) as f32)
                    .collect();
                Ok((mse(target, output), grad))
            }
        }
    }
}

/// Gradient of `-sum_c p_c ln q_c` with `q = softmax(z)`. Clamped terms are
/// locally constant and contribute nothing.
fn soft_ce_value_and_grad(target: &[f64], logits: &[f32]) -> Result<(f64, Vec<f32>)> {
    let q = softmax_f64(logits);
    let value = cross_entropy_soft(target, &q)?;
    let active: Vec<bool> = q.iter().map(|&v| v >= LOG_CLAMP).collect();
    let mass: f64 = target
        .iter()
        .zip(&active)
        .filter(|(_, &a)| a)
        .map(|(&p, _)| p)
        .sum();
    let grad = q
        .iter()
        .zip(target)
        .zip(&active)
        .map(|((&qj, &pj), &a)| (qj * mass - if a { pj } else { 0.0 }) as f32)
        .collect();
    Ok((value, grad))
}
