//! Model architecture descriptors and their text form.
//!
//! The text form is what checkpoint files carry, e.g.
//! `task=classification;input=2;dense(2,16);relu;dense(16,4)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    /// Valid (unpadded) 2-D convolution over `(channels, height, width)`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Unidirectional LSTM over `(steps, inputs)`, emitting the final hidden state.
    Lstm { inputs: usize, hidden: usize },
    Relu,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Lstm { .. } => "lstm",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
        }
    }

    /// Parameter tensor suffixes and shapes, in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            Layer::Dense {
                inputs,
                outputs,
                bias,
            } => {
                let mut v = vec![("weight", vec![outputs, inputs])];
                if bias {
                    v.push(("bias", vec![outputs]));
                }
                v
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                ("weight", vec![out_channels, in_channels, kernel, kernel]),
                ("bias", vec![out_channels]),
            ],
            Layer::Lstm { inputs, hidden } => vec![
                ("w_ih", vec![4 * hidden, inputs]),
                ("w_hh", vec![4 * hidden, hidden]),
                ("bias", vec![4 * hidden]),
            ],
            Layer::Relu | Layer::Flatten => Vec::new(),
        }
    }

    fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let name = format!("layer {index} ({})", self.kind());
        match *self {
            Layer::Dense { inputs, outputs, .. } => {
                if input != [inputs] {
                    return Err(Error::shape(
                        name,
                        format!("expects input [{inputs}], got {input:?}"),
                    ));
                }
                Ok(vec![outputs])
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(Error::shape(
                        name,
                        format!("expects [{in_channels}, h, w], got {input:?}"),
                    ));
                }
                if kernel == 0 || stride == 0 || input[1] < kernel || input[2] < kernel {
                    return Err(Error::shape(
                        name,
                        format!("kernel {kernel} / stride {stride} incompatible with {input:?}"),
                    ));
                }
                Ok(vec![
                    out_channels,
                    (input[1] - kernel) / stride + 1,
                    (input[2] - kernel) / stride + 1,
                ])
            }
            Layer::Lstm { inputs, hidden } => {
                if input.len() != 2 || input[1] != inputs {
                    return Err(Error::shape(
                        name,
                        format!("expects [steps, {inputs}], got {input:?}"),
                    ));
                }
                Ok(vec![hidden])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Dense {
                inputs,
                outputs,
                bias: true,
            } => write!(f, "dense({inputs},{outputs})"),
            Layer::Dense {
                inputs,
                outputs,
                bias: false,
            } => write!(f, "dense({inputs},{outputs},nobias)"),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => write!(f, "conv2d({in_channels},{out_channels},{kernel},{stride})"),
            Layer::Lstm { inputs, hidden } => write!(f, "lstm({inputs},{hidden})"),
            Layer::Relu => f.write_str("relu"),
            Layer::Flatten => f.write_str("flatten"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    task: Task,
    output_dim: usize,
}

impl ModelSpec {
    /// Validates that consecutive layers chain and that the network ends in a
    /// vector output.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, task: Task) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::shape("input", format!("invalid input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::shape("model", "no layers"));
        }
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(i, &shape)?;
        }
        if shape.len() != 1 {
            return Err(Error::shape(
                "output",
                format!("final activation must be a vector, got {shape:?}"),
            ));
        }
        Ok(Self {
            input_shape,
            layers,
            task,
            output_dim: shape[0],
        })
    }

    /// Dense ReLU network `inputs -> hidden... -> outputs`.
    pub fn mlp(inputs: usize, hidden: &[usize], outputs: usize, task: Task) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = inputs;
        for &h in hidden {
            layers.push(Layer::Dense {
                inputs: width,
                outputs: h,
                bias: true,
            });
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::Dense {
            inputs: width,
            outputs,
            bias: true,
        });
        Self::new(vec![inputs], layers, task)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Activation shapes: entry `i` is the input to layer `i`, the last entry
    /// is the network output.
    pub fn activation_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(i, shapes.last().unwrap())
                .expect("validated at construction");
            shapes.push(next);
        }
        shapes
    }

    /// `(name, shape)` of every parameter tensor in canonical order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| {
                layer
                    .param_shapes()
                    .into_iter()
                    .map(move |(suffix, shape)| (format!("{i}.{suffix}"), shape))
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.input_shape.iter().map(|d| d.to_string()).collect();
        write!(f, "task={};input={}", self.task, dims.join("x"))?;
        for layer in &self.layers {
            write!(f, ";{layer}")?;
        }
        Ok(())
    }
}

fn parse_args(text: &str, expected: &[usize]) -> Result<(Vec<usize>, bool)> {
    let mut nums = Vec::new();
    let mut nobias = false;
    for part in text.split(',').map(str::trim) {
        if part == "nobias" {
            nobias = true;
        } else {
            nums.push(
                part.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad layer argument `{part}`")))?,
            );
        }
    }
    if !expected.contains(&nums.len()) {
        return Err(Error::Config(format!("wrong argument count in `({text})`")));
    }
    Ok((nums, nobias))
}

fn parse_layer(token: &str) -> Result<Layer> {
    let token = token.trim();
    match token {
        "relu" => return Ok(Layer::Relu),
        "flatten" => return Ok(Layer::Flatten),
        _ => {}
    }
    let (kind, rest) = token
        .split_once('(')
        .ok_or_else(|| Error::Config(format!("unknown layer `{token}`")))?;
    let args = rest
        .strip_suffix(')')
        .ok_or_else(|| Error::Config(format!("unterminated layer `{token}`")))?;
    match kind {
        "dense" => {
            let (n, nobias) = parse_args(args, &[2])?;
            Ok(Layer::Dense {
                inputs: n[0],
                outputs: n[1],
                bias: !nobias,
            })
        }
        "conv2d" => {
            let (n, _) = parse_args(args, &[3, 4])?;
            Ok(Layer::Conv2d {
                in_channels: n[0],
                out_channels: n[1],
                kernel: n[2],
                stride: n.get(3).copied().unwrap_or(1),
            })
        }
        "lstm" => {
            let (n, _) = parse_args(args, &[2])?;
            Ok(Layer::Lstm {
                inputs: n[0],
                hidden: n[1],
            })
        }
        _ => Err(Error::Config(format!("unknown layer kind `{kind}`"))),
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut task = None;
        let mut input = None;
        let mut layers = Vec::new();
        for token in s.split(';').map(str::trim).filter(|t| !t.is_empty()) {
            if let Some(v) = token.strip_prefix("task=") {
                task = Some(match v {
                    "classification" => Task::Classification,
                    "regression" => Task::Regression,
                    _ => return Err(Error::Config(format!("unknown task `{v}`"))),
                });
            } else if let Some(v) = token.strip_prefix("input=") {
                let dims = v
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Config(format!("bad input shape `{v}`")))?;
                input = Some(dims);
            } else {
                layers.push(parse_layer(token)?);
            }
        }
        let task = task.ok_or_else(|| Error::Config("model descriptor lacks task=".into()))?;
        let input = input.ok_or_else(|| Error::Config("model descriptor lacks input=".into()))?;
        ModelSpec::new(input, layers, task)
    }
}
