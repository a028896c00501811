use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::spec::{Layer, ModelSpec};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
            }
        }
        Ok(Self { entries })
    }

    /// All-zero parameters laid out for `spec`.
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            entries: spec
                .param_layout()
                .into_iter()
                .map(|(name, shape)| {
                    let t = Tensor::zeros(&shape);
                    (name, t)
                })
                .collect(),
        }
    }

    /// Seeded initialization: Kaiming-uniform for layers feeding a ReLU,
    /// Glorot-uniform otherwise, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = seeded(seed, "param-init");
        let mut params = Self::zeros(spec);
        let layers = spec.layers();
        let mut cursor = 0;
        for (i, layer) in layers.iter().enumerate() {
            let feeds_relu = matches!(layers.get(i + 1), Some(Layer::Relu));
            match *layer {
                Layer::Dense { inputs, outputs, bias } => {
                    fill_weight(&mut params.entries[cursor].1, inputs, outputs, feeds_relu, &mut rng);
                    cursor += 1 + usize::from(bias);
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    let fan_out = out_channels * kernel * kernel;
                    fill_weight(&mut params.entries[cursor].1, fan_in, fan_out, feeds_relu, &mut rng);
                    cursor += 2;
                }
                Layer::Lstm { inputs, hidden } => {
                    fill_weight(&mut params.entries[cursor].1, inputs, hidden, false, &mut rng);
                    fill_weight(&mut params.entries[cursor + 1].1, hidden, hidden, false, &mut rng);
                    cursor += 3;
                }
                Layer::Relu | Layer::Flatten => {}
            }
        }
        params
    }

    /// Checks names and shapes against `spec`.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let layout = spec.param_layout();
        if layout.len() != self.entries.len() {
            return Err(Error::shape(
                "params",
                format!("expected {} tensors, got {}", layout.len(), self.entries.len()),
            ));
        }
        for ((name, shape), (have_name, tensor)) in layout.iter().zip(&self.entries) {
            if name != have_name || shape.as_slice() != tensor.shape() {
                return Err(Error::shape(
                    name.clone(),
                    format!("expected {name} {shape:?}, got {have_name} {:?}", tensor.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub(crate) fn tensor_at(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    pub fn into_entries(self) -> Vec<(String, Tensor)> {
        self.entries
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

fn fill_weight(t: &mut Tensor, fan_in: usize, fan_out: usize, relu: bool, rng: &mut ChaCha8Rng) {
    let bound = if relu {
        (6.0 / fan_in as f64).sqrt()
    } else {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    } as f32;
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
}
