//! SGD and Adam parameter updates.

use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl OptimizerConfig {
    pub fn sgd(lr: f32) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adam(lr: f32) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(lr)
        }
    }

    pub fn with_weight_decay(mut self, wd: f32) -> Self {
        self.weight_decay = wd;
        self
    }
}

/// Optimizer with its moment state. Weight decay is applied as an L2 term
/// added to the gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        if params.len() != grads.len()
            || params.tensors().zip(grads.tensors()).any(|(p, g)| p.shape() != g.shape())
        {
            return Err(Error::InvalidArgument(
                "gradient layout does not match parameters".into(),
            ));
        }
        let c = self.config;
        self.step += 1;
        if c.kind == OptimizerKind::Adam && self.first.is_empty() {
            self.first = params.tensors().map(|t| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        // Bias corrections in f64 so early steps are exact to f32 precision.
        let bc1 = 1.0 - (c.beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (c.beta2 as f64).powi(self.step as i32);
        for (idx, (p, g)) in params.tensors_mut().zip(grads.tensors()).enumerate() {
            let data = p.data_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for (w, &gv) in data.iter_mut().zip(g.data()) {
                        *w -= c.lr * (gv + c.weight_decay * *w);
                    }
                }
                OptimizerKind::Adam => {
                    let m = &mut self.first[idx];
                    let v = &mut self.second[idx];
                    for j in 0..data.len() {
                        let gv = g.data()[j] + c.weight_decay * data[j];
                        m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gv;
                        v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gv * gv;
                        let m_hat = m[j] as f64 / bc1;
                        let v_hat = v[j] as f64 / bc2;
                        data[j] -= (c.lr as f64 * m_hat / (v_hat.sqrt() + c.eps as f64)) as f32;
                    }
                }
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("optimizer update"));
            }
        }
        Ok(())
    }
}
