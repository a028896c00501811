//! Minimal differentiable network substrate: dense, convolutional and
//! recurrent layers evaluated one example at a time, with reverse-mode
//! gradients with respect to parameters and inputs.
//!
//! Forward passes are pure functions of `(spec, params, x)`; concurrent
//! evaluation on shared parameters is safe.

pub mod loss;
pub mod lstm;
pub mod optim;
mod params;
mod spec;

pub use loss::{cross_entropy_soft, entropy, mse_loss, softmax, softmax_f64, Loss, LOG_CLAMP};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::ParamSet;
pub use spec::{Layer, ModelSpec, Task};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use lstm::{LstmGrads, LstmTrace, LstmWeights};

/// What to differentiate with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    Params,
    Input,
    Both,
}

impl Wrt {
    fn params(self) -> bool {
        matches!(self, Wrt::Params | Wrt::Both)
    }

    fn input(self) -> bool {
        matches!(self, Wrt::Input | Wrt::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// Loss value at the evaluation point (zero when the bundle came from an
    /// externally supplied output gradient).
    pub loss: f64,
    /// Same names and shapes as the model parameters.
    pub params: Option<ParamSet>,
    pub input: Option<Tensor>,
}

/// Intermediate state retained by [`forward_trace`] for [`backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[i]` is the input of layer `i`; the last entry is the output.
    activations: Vec<Vec<f32>>,
    recurrent: Vec<Option<LstmTrace>>,
}

impl Trace {
    pub fn output(&self) -> &[f32] {
        self.activations.last().expect("at least one layer")
    }
}

fn layer_name(i: usize, layer: &Layer) -> String {
    format!("layer {i} ({})", layer.kind())
}

fn check_input(spec: &ModelSpec, params: &ParamSet, x: &Tensor) -> Result<()> {
    if x.shape() != spec.input_shape() {
        return Err(Error::shape(
            "input",
            format!("expected {:?}, got {:?}", spec.input_shape(), x.shape()),
        ));
    }
    params.check(spec)
}

/// Network output: logits for classification, predictions for regression.
pub fn forward(spec: &ModelSpec, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
    let trace = forward_trace(spec, params, x)?;
    let out = trace.activations.into_iter().next_back().unwrap();
    Ok(Tensor::from_parts_unchecked(vec![out.len()], out))
}

pub fn forward_trace(spec: &ModelSpec, params: &ParamSet, x: &Tensor) -> Result<Trace> {
    check_input(spec, params, x)?;
    let shapes = spec.activation_shapes();
    let mut activations = Vec::with_capacity(spec.layers().len() + 1);
    let mut recurrent = Vec::with_capacity(spec.layers().len());
    activations.push(x.data().to_vec());
    let mut cursor = 0;
    for (i, layer) in spec.layers().iter().enumerate() {
        let input = activations.last().unwrap();
        let in_shape = &shapes[i];
        let mut rec = None;
        let out = match *layer {
            Layer::Dense { inputs, outputs, bias } => {
                let w = params.tensor_at(cursor).data();
                let b = bias.then(|| params.tensor_at(cursor + 1).data());
                cursor += 1 + usize::from(bias);
                dense_forward(w, b, input, inputs, outputs)
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let w = params.tensor_at(cursor).data();
                let b = params.tensor_at(cursor + 1).data();
                cursor += 2;
                let geom = ConvGeom::new(in_channels, out_channels, kernel, stride, in_shape);
                conv_forward(&geom, w, b, input)
            }
            Layer::Lstm { inputs, hidden } => {
                let weights = LstmWeights {
                    w_ih: params.tensor_at(cursor).data(),
                    w_hh: params.tensor_at(cursor + 1).data(),
                    bias: params.tensor_at(cursor + 2).data(),
                    inputs,
                    hidden,
                };
                cursor += 3;
                let t = lstm::forward(weights, input, in_shape[0]);
                let out = t.last_output().to_vec();
                rec = Some(t);
                out
            }
            Layer::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
            Layer::Flatten => input.clone(),
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(layer_name(i, layer)));
        }
        activations.push(out);
        recurrent.push(rec);
    }
    Ok(Trace {
        activations,
        recurrent,
    })
}

/// Reverse pass from an arbitrary gradient on the network output.
pub fn backward(
    spec: &ModelSpec,
    params: &ParamSet,
    trace: &Trace,
    d_output: &[f32],
    wrt: Wrt,
) -> Result<GradientBundle> {
    if d_output.len() != spec.output_dim() {
        return Err(Error::shape(
            "output",
            format!("gradient of length {} for output {}", d_output.len(), spec.output_dim()),
        ));
    }
    let shapes = spec.activation_shapes();
    let mut grads: Option<Vec<Vec<f32>>> =
        wrt.params().then(|| params.tensors().map(|t| vec![0.0; t.len()]).collect());
    // First parameter index of each layer.
    let mut starts = Vec::with_capacity(spec.layers().len());
    let mut cursor = 0;
    for layer in spec.layers() {
        starts.push(cursor);
        cursor += layer.param_shapes().len();
    }

    let mut delta = d_output.to_vec();
    for (i, layer) in spec.layers().iter().enumerate().rev() {
        // Nothing upstream needs this layer's input gradient.
        let need_input = i > 0 || wrt.input();
        let input = &trace.activations[i];
        let p = starts[i];
        let next = match *layer {
            Layer::Dense { inputs, outputs, bias } => {
                let w = params.tensor_at(p).data();
                if let Some(g) = grads.as_mut() {
                    let gw = &mut g[p];
                    for o in 0..outputs {
                        let d = delta[o];
                        let row = &mut gw[o * inputs..(o + 1) * inputs];
                        for (gv, &xv) in row.iter_mut().zip(input) {
                            *gv += d * xv;
                        }
                    }
                    if bias {
                        g[p + 1].iter_mut().zip(&delta).for_each(|(gb, &d)| *gb += d);
                    }
                }
                if need_input {
                    let mut dx = vec![0.0f32; inputs];
                    for o in 0..outputs {
                        let d = delta[o];
                        for (dv, &wv) in dx.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
                            *dv += d * wv;
                        }
                    }
                    dx
                } else {
                    Vec::new()
                }
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let geom = ConvGeom::new(in_channels, out_channels, kernel, stride, &shapes[i]);
                let w = params.tensor_at(p).data();
                let (gw, gb) = match grads.as_mut() {
                    Some(g) => {
                        let (a, b) = g.split_at_mut(p + 1);
                        (Some(&mut a[p]), Some(&mut b[0]))
                    }
                    None => (None, None),
                };
                conv_backward(&geom, w, input, &delta, gw, gb, need_input)
            }
            Layer::Lstm { inputs, hidden } => {
                let weights = LstmWeights {
                    w_ih: params.tensor_at(p).data(),
                    w_hh: params.tensor_at(p + 1).data(),
                    bias: params.tensor_at(p + 2).data(),
                    inputs,
                    hidden,
                };
                let rec = trace.recurrent[i].as_ref().expect("lstm trace recorded");
                let steps = rec.steps();
                let mut d_out = vec![0.0; steps * hidden];
                d_out[(steps - 1) * hidden..].copy_from_slice(&delta);
                let mut scratch;
                let lstm_grads = match grads.as_mut() {
                    Some(g) => {
                        let (_, rest) = g.split_at_mut(p);
                        let (a, rest) = rest.split_at_mut(1);
                        let (b, c) = rest.split_at_mut(1);
                        LstmGrads {
                            w_ih: &mut a[0],
                            w_hh: &mut b[0],
                            bias: &mut c[0],
                        }
                    }
                    None => {
                        scratch = [
                            vec![0.0; 4 * hidden * inputs],
                            vec![0.0; 4 * hidden * hidden],
                            vec![0.0; 4 * hidden],
                        ];
                        let [a, b, c] = &mut scratch;
                        LstmGrads {
                            w_ih: a,
                            w_hh: b,
                            bias: c,
                        }
                    }
                };
                lstm::backward(weights, rec, &d_out, lstm_grads)
            }
            Layer::Relu => delta
                .iter()
                .zip(input)
                .map(|(&d, &x)| if x > 0.0 { d } else { 0.0 })
                .collect(),
            Layer::Flatten => delta.clone(),
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("gradient at {}", layer_name(i, layer))));
        }
        delta = next;
    }

    let params_grad = match grads {
        Some(g) => {
            let mut entries = Vec::with_capacity(g.len());
            for ((name, t), data) in params.iter().zip(g) {
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::non_finite(format!("gradient of {name}")));
                }
                entries.push((name.to_string(), Tensor::from_parts_unchecked(t.shape().to_vec(), data)));
            }
            Some(ParamSet::new(entries)?)
        }
        None => None,
    };
    let input = if wrt.input() {
        Some(Tensor::from_parts_unchecked(spec.input_shape().to_vec(), delta))
    } else {
        None
    };
    Ok(GradientBundle {
        loss: 0.0,
        params: params_grad,
        input,
    })
}

/// Loss value and reverse-mode gradients at `x`.
pub fn gradients(
    spec: &ModelSpec,
    params: &ParamSet,
    x: &Tensor,
    loss: &Loss,
    wrt: Wrt,
) -> Result<GradientBundle> {
    let trace = forward_trace(spec, params, x)?;
    let (value, d_out) = loss.value_and_grad(trace.output())?;
    if !value.is_finite() {
        return Err(Error::non_finite("loss"));
    }
    let mut bundle = backward(spec, params, &trace, &d_out, wrt)?;
    bundle.loss = value;
    Ok(bundle)
}

fn dense_forward(w: &[f32], b: Option<&[f32]>, x: &[f32], inputs: usize, outputs: usize) -> Vec<f32> {
    (0..outputs)
        .map(|o| {
            let acc: f32 = w[o * inputs..(o + 1) * inputs]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum();
            acc + b.map_or(0.0, |b| b[o])
        })
        .collect()
}

struct ConvGeom {
    c_in: usize,
    c_out: usize,
    k: usize,
    s: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(c_in: usize, c_out: usize, k: usize, s: usize, in_shape: &[usize]) -> Self {
        let (h, w) = (in_shape[1], in_shape[2]);
        Self {
            c_in,
            c_out,
            k,
            s,
            h,
            w,
            oh: (h - k) / s + 1,
            ow: (w - k) / s + 1,
        }
    }
}

fn conv_forward(g: &ConvGeom, w: &[f32], b: &[f32], x: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; g.c_out * g.oh * g.ow];
    for oc in 0..g.c_out {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut acc = b[oc];
                for c in 0..g.c_in {
                    for ky in 0..g.k {
                        let xrow = (c * g.h + oy * g.s + ky) * g.w + ox * g.s;
                        let wrow = ((oc * g.c_in + c) * g.k + ky) * g.k;
                        for kx in 0..g.k {
                            acc += w[wrow + kx] * x[xrow + kx];
                        }
                    }
                }
                out[(oc * g.oh + oy) * g.ow + ox] = acc;
            }
        }
    }
    out
}

fn conv_backward(
    g: &ConvGeom,
    w: &[f32],
    x: &[f32],
    delta: &[f32],
    mut gw: Option<&mut Vec<f32>>,
    mut gb: Option<&mut Vec<f32>>,
    need_input: bool,
) -> Vec<f32> {
    let mut dx = if need_input { vec![0.0; x.len()] } else { Vec::new() };
    for oc in 0..g.c_out {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let d = delta[(oc * g.oh + oy) * g.ow + ox];
                if let Some(gb) = gb.as_deref_mut() {
                    gb[oc] += d;
                }
                for c in 0..g.c_in {
                    for ky in 0..g.k {
                        let xrow = (c * g.h + oy * g.s + ky) * g.w + ox * g.s;
                        let wrow = ((oc * g.c_in + c) * g.k + ky) * g.k;
                        for kx in 0..g.k {
                            if let Some(gw) = gw.as_deref_mut() {
                                gw[wrow + kx] += d * x[xrow + kx];
                            }
                            if need_input {
                                dx[xrow + kx] += d * w[wrow + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_spec(n: usize, bias: bool) -> ModelSpec {
        ModelSpec::new(
            vec![n],
            vec![Layer::Dense {
                inputs: n,
                outputs: n,
                bias,
            }],
            Task::Regression,
        )
        .unwrap()
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let spec = dense_spec(2, true);
        let mut p = ParamSet::zeros(&spec);
        p.get_mut("0.weight").unwrap().data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let y = forward(&spec, &p, &Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = ModelSpec::mlp(3, &[5], 4, Task::Classification).unwrap();
        let p = ParamSet::zeros(&spec);
        let y = forward(&spec, &p, &Tensor::vector(vec![0.3, -2.0, 7.0])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_mlp_matches_matrix_chain() {
        // W1 = [[1,2],[-1,1]], b1 = [0.5,-3]; relu; W2 = [[2,-1]], b2 = [1]
        // x = [1,1]: h = relu([3.5, -3]) = [3.5, 0]; y = 7 + 1 = 8
        let spec = ModelSpec::mlp(2, &[2], 1, Task::Regression).unwrap();
        let mut p = ParamSet::zeros(&spec);
        p.get_mut("0.weight").unwrap().data_mut().copy_from_slice(&[1.0, 2.0, -1.0, 1.0]);
        p.get_mut("0.bias").unwrap().data_mut().copy_from_slice(&[0.5, -3.0]);
        p.get_mut("2.weight").unwrap().data_mut().copy_from_slice(&[2.0, -1.0]);
        p.get_mut("2.bias").unwrap().data_mut().copy_from_slice(&[1.0]);
        let y = forward(&spec, &p, &Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[8.0]);
    }

    #[test]
    fn wrong_input_shape_is_structured_error() {
        let spec = dense_spec(2, true);
        let p = ParamSet::zeros(&spec);
        let err = forward(&spec, &p, &Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::Shape { ref layer, .. } if layer == "input"));
    }

    #[test]
    fn scalar_linear_model_hand_gradients() {
        // f(x) = w x, MSE against 0: dL/dw = 2 w x^2, dL/dx = 2 w^2 x.
        let spec = dense_spec(1, false);
        let mut p = ParamSet::zeros(&spec);
        let (w, x) = (1.5f32, -0.75f32);
        p.get_mut("0.weight").unwrap().data_mut()[0] = w;
        let g = gradients(&spec, &p, &Tensor::vector(vec![x]), &Loss::Mse(vec![0.0]), Wrt::Both).unwrap();
        let gw = g.params.unwrap().get("0.weight").unwrap().data()[0];
        let gx = g.input.unwrap().data()[0];
        assert!((gw - 2.0 * w * x * x).abs() < 1e-6);
        assert!((gx - 2.0 * w * w * x).abs() < 1e-6);
    }

    #[test]
    fn zero_final_layer_gives_zero_input_gradient() {
        let spec = ModelSpec::mlp(3, &[4], 2, Task::Classification).unwrap();
        let mut p = ParamSet::init(&spec, 3);
        p.get_mut("2.weight").unwrap().data_mut().fill(0.0);
        let g = gradients(&spec, &p, &Tensor::vector(vec![0.1, 0.2, 0.3]), &Loss::CrossEntropy(1), Wrt::Input)
            .unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.params.is_none());
    }
}
