//! Two-layer bidirectional LSTM autoencoder over standardized signals.
//!
//! Encoder: two stacked bidirectional LSTM layers; the final forward and
//! backward states of the top layer are concatenated and projected to the
//! `m`-dimensional bottleneck. Decoder: the bottleneck vector repeated at every
//! step feeds one LSTM, followed by a per-step dense readout. Dropout sits
//! between the encoder layers and before the bottleneck and is only active
//! while training.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::standardize::Standardizer;
use crate::checkpoint::{pack_f64, unpack_f64, Container};
use crate::error::{CheckpointError, Error, Result};
use crate::nn::lstm::{self, LstmGrads, LstmTrace, LstmWeights};
use crate::nn::{Optimizer, OptimizerConfig, ParamSet};
use crate::parallel::{map_indexed, Parallelism};
use crate::rng::{seeded, seeded_indexed};
use crate::tensor::Tensor;
use crate::trajectory::Signal;

pub const AE_DESCRIPTOR: &str = "trait-ae-v1";
pub const MIN_TRAINING_SIGNALS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderConfig {
    /// Bottleneck width `m`.
    pub bottleneck: usize,
    /// Units per direction in every LSTM.
    pub hidden: usize,
    pub dropout: f32,
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            bottleneck: 8,
            hidden: 32,
            dropout: 0.2,
            epochs: 150,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
            parallelism: Parallelism::AUTO,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bottleneck < 2 {
            return Err(Error::Config(format!("bottleneck must be at least 2, got {}", self.bottleneck)));
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden size and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be non-negative", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dims {
    steps: usize,
    channels: usize,
    hidden: usize,
    m: usize,
}

// Parameter order; each LSTM occupies three consecutive slots.
const E1F: usize = 0;
const E1B: usize = 3;
const E2F: usize = 6;
const E2B: usize = 9;
const BOTT_W: usize = 12;
const BOTT_B: usize = 13;
const DEC: usize = 14;
const OUT_W: usize = 17;
const OUT_B: usize = 18;

fn layout(d: Dims) -> Vec<(String, Vec<usize>)> {
    let h = d.hidden;
    let lstm = |p: &str, inputs: usize| {
        vec![
            (format!("{p}.w_ih"), vec![4 * h, inputs]),
            (format!("{p}.w_hh"), vec![4 * h, h]),
            (format!("{p}.bias"), vec![4 * h]),
        ]
    };
    let mut out = Vec::new();
    out.extend(lstm("enc1_fwd", d.channels));
    out.extend(lstm("enc1_bwd", d.channels));
    out.extend(lstm("enc2_fwd", 2 * h));
    out.extend(lstm("enc2_bwd", 2 * h));
    out.push(("bottleneck.weight".into(), vec![d.m, 2 * h]));
    out.push(("bottleneck.bias".into(), vec![d.m]));
    out.extend(lstm("dec", d.m));
    out.push(("readout.weight".into(), vec![d.channels, h]));
    out.push(("readout.bias".into(), vec![d.channels]));
    out
}

fn init_params(d: Dims, seed: u64) -> ParamSet {
    let mut rng = seeded(seed, "ae-init");
    let entries = layout(d)
        .into_iter()
        .map(|(name, shape)| {
            let len: usize = shape.iter().product();
            let data = if name.ends_with("bias") {
                let mut b = vec![0.0f32; len];
                if !name.starts_with("bottleneck") && !name.starts_with("readout") {
                    // Forget gate starts open.
                    b[d.hidden..2 * d.hidden].fill(1.0);
                }
                b
            } else {
                let (fan_out, fan_in) = (shape[0], shape[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                (0..len).map(|_| rng.random_range(-limit..=limit)).collect()
            };
            (name, Tensor::from_parts_unchecked(shape, data))
        })
        .collect();
    ParamSet::new(entries).expect("layout names are unique")
}

fn lstm_at(p: &ParamSet, i: usize, inputs: usize, hidden: usize) -> LstmWeights<'_> {
    LstmWeights {
        w_ih: p.tensor_at(i).data(),
        w_hh: p.tensor_at(i + 1).data(),
        bias: p.tensor_at(i + 2).data(),
        inputs,
        hidden,
    }
}

fn reversed(xs: &[f32], width: usize) -> Vec<f32> {
    xs.chunks(width).rev().flatten().copied().collect()
}

fn dense(w: &[f32], b: &[f32], x: &[f32]) -> Vec<f32> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| bias + w[o * n..(o + 1) * n].iter().zip(x).map(|(a, c)| a * c).sum::<f32>())
        .collect()
}

struct Pass {
    l1f: LstmTrace,
    l1b: LstmTrace,
    mask1: Option<Vec<f32>>,
    l2f: LstmTrace,
    l2b: LstmTrace,
    /// Concatenated final states after dropout.
    cat: Vec<f32>,
    mask2: Option<Vec<f32>>,
    z: Vec<f32>,
    dec: LstmTrace,
    recon: Vec<f32>,
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, p: f32) -> Vec<f32> {
    let keep = 1.0 / (1.0 - p);
    (0..len).map(|_| if rng.random::<f32>() < p { 0.0 } else { keep }).collect()
}

fn run(params: &ParamSet, d: Dims, x: &[f32], mut dropout: Option<(&mut ChaCha8Rng, f32)>) -> Pass {
    let (l, h, c) = (d.steps, d.hidden, d.channels);
    let l1f = lstm::forward(lstm_at(params, E1F, c, h), x, l);
    let l1b = lstm::forward(lstm_at(params, E1B, c, h), &reversed(x, c), l);
    let mut h1 = Vec::with_capacity(l * 2 * h);
    for t in 0..l {
        h1.extend_from_slice(l1f.output_at(t));
        h1.extend_from_slice(l1b.output_at(l - 1 - t));
    }
    let mask1 = dropout.as_mut().map(|(rng, p)| dropout_mask(rng, h1.len(), *p));
    if let Some(m) = &mask1 {
        h1.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
    let l2f = lstm::forward(lstm_at(params, E2F, 2 * h, h), &h1, l);
    let l2b = lstm::forward(lstm_at(params, E2B, 2 * h, h), &reversed(&h1, 2 * h), l);
    let mut cat = [l2f.last_output(), l2b.last_output()].concat();
    let mask2 = dropout.as_mut().map(|(rng, p)| dropout_mask(rng, cat.len(), *p));
    if let Some(m) = &mask2 {
        cat.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
    let z = dense(params.tensor_at(BOTT_W).data(), params.tensor_at(BOTT_B).data(), &cat);
    let dec_in: Vec<f32> = (0..l).flat_map(|_| z.iter().copied()).collect();
    let dec = lstm::forward(lstm_at(params, DEC, d.m, h), &dec_in, l);
    let mut recon = Vec::with_capacity(l * c);
    for t in 0..l {
        recon.extend(dense(params.tensor_at(OUT_W).data(), params.tensor_at(OUT_B).data(), dec.output_at(t)));
    }
    Pass {
        l1f,
        l1b,
        mask1,
        l2f,
        l2b,
        cat,
        mask2,
        z,
        dec,
        recon,
    }
}

fn take_lstm_grads(g: &mut [Vec<f32>], i: usize) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    (
        std::mem::take(&mut g[i]),
        std::mem::take(&mut g[i + 1]),
        std::mem::take(&mut g[i + 2]),
    )
}

fn lstm_backward(
    params: &ParamSet,
    grads: &mut [Vec<f32>],
    i: usize,
    inputs: usize,
    hidden: usize,
    trace: &LstmTrace,
    d_out: &[f32],
) -> Vec<f32> {
    let (mut a, mut b, mut c) = take_lstm_grads(grads, i);
    let d_in = lstm::backward(
        lstm_at(params, i, inputs, hidden),
        trace,
        d_out,
        LstmGrads {
            w_ih: &mut a,
            w_hh: &mut b,
            bias: &mut c,
        },
    );
    grads[i] = a;
    grads[i + 1] = b;
    grads[i + 2] = c;
    d_in
}

/// Mean squared reconstruction error and its parameter gradient.
fn loss_and_grads(params: &ParamSet, d: Dims, x: &[f32], pass: &Pass) -> (f64, Vec<Vec<f32>>) {
    let (l, h, c) = (d.steps, d.hidden, d.channels);
    let n = (l * c) as f64;
    let loss = pass
        .recon
        .iter()
        .zip(x)
        .map(|(&r, &t)| (r as f64 - t as f64).powi(2))
        .sum::<f64>()
        / n;
    let dy: Vec<f32> = pass.recon.iter().zip(x).map(|(&r, &t)| (2.0 * (r as f64 - t as f64) / n) as f32).collect();
    let mut grads: Vec<Vec<f32>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();

    let w_out = params.tensor_at(OUT_W).data();
    let mut d_dec = vec![0.0f32; l * h];
    for t in 0..l {
        let hd = pass.dec.output_at(t);
        for o in 0..c {
            let g = dy[t * c + o];
            grads[OUT_B][o] += g;
            for j in 0..h {
                grads[OUT_W][o * h + j] += g * hd[j];
                d_dec[t * h + j] += g * w_out[o * h + j];
            }
        }
    }
    let d_dec_in = lstm_backward(params, &mut grads, DEC, d.m, h, &pass.dec, &d_dec);
    let mut dz = vec![0.0f32; d.m];
    for t in 0..l {
        dz.iter_mut().zip(&d_dec_in[t * d.m..(t + 1) * d.m]).for_each(|(a, b)| *a += b);
    }
    let w_b = params.tensor_at(BOTT_W).data();
    let mut dcat = vec![0.0f32; 2 * h];
    for (o, &g) in dz.iter().enumerate() {
        grads[BOTT_B][o] += g;
        for j in 0..2 * h {
            grads[BOTT_W][o * 2 * h + j] += g * pass.cat[j];
            dcat[j] += g * w_b[o * 2 * h + j];
        }
    }
    if let Some(m) = &pass.mask2 {
        dcat.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
    let mut d2f = vec![0.0f32; l * h];
    d2f[(l - 1) * h..].copy_from_slice(&dcat[..h]);
    let mut d2b = vec![0.0f32; l * h];
    d2b[(l - 1) * h..].copy_from_slice(&dcat[h..]);
    let dh1_f = lstm_backward(params, &mut grads, E2F, 2 * h, h, &pass.l2f, &d2f);
    let dh1_b = lstm_backward(params, &mut grads, E2B, 2 * h, h, &pass.l2b, &d2b);
    let mut dh1 = dh1_f;
    for t in 0..l {
        let src = &dh1_b[(l - 1 - t) * 2 * h..(l - t) * 2 * h];
        dh1[t * 2 * h..(t + 1) * 2 * h].iter_mut().zip(src).for_each(|(a, b)| *a += b);
    }
    if let Some(m) = &pass.mask1 {
        dh1.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
    let mut d1f = vec![0.0f32; l * h];
    let mut d1b = vec![0.0f32; l * h];
    for t in 0..l {
        d1f[t * h..(t + 1) * h].copy_from_slice(&dh1[t * 2 * h..t * 2 * h + h]);
        d1b[(l - 1 - t) * h..(l - t) * h].copy_from_slice(&dh1[t * 2 * h + h..(t + 1) * 2 * h]);
    }
    lstm_backward(params, &mut grads, E1F, c, h, &pass.l1f, &d1f);
    lstm_backward(params, &mut grads, E1B, c, h, &pass.l1b, &d1b);
    (loss, grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    dims: Dims,
    params: ParamSet,
    standardizer: Standardizer,
    seed: u64,
    /// Mean training reconstruction loss per epoch, dropout active.
    loss_history: Vec<f64>,
}

pub fn fit_autoencoder<S: Signal + Sync>(signals: &[S], config: &AutoencoderConfig) -> Result<AutoencoderModel> {
    config.validate()?;
    if signals.len() < MIN_TRAINING_SIGNALS {
        return Err(Error::InsufficientBenign {
            needed: MIN_TRAINING_SIGNALS,
            found: signals.len(),
        });
    }
    let (steps, channels) = (signals[0].steps(), signals[0].channels());
    if steps == 0 || signals.iter().any(|s| s.steps() != steps || s.channels() != channels) {
        return Err(Error::InvalidArgument("autoencoder inputs differ in shape".into()));
    }
    let dims = Dims {
        steps,
        channels,
        hidden: config.hidden,
        m: config.bottleneck,
    };
    let rows: Vec<&[f64]> = signals.iter().map(|s| s.signal()).collect();
    let standardizer = Standardizer::fit(&rows)?;
    let data: Vec<Vec<f32>> = rows
        .iter()
        .map(|r| Ok(standardizer.apply(r)?.into_iter().map(|v| v as f32).collect()))
        .collect::<Result<_>>()?;

    let mut params = init_params(dims, config.seed);
    let mut optimizer = Optimizer::new(OptimizerConfig::adam(config.lr));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut seeded_indexed(config.seed, "ae-shuffle", epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = map_indexed(batch, config.parallelism, |_, &i| {
                let mut rng = seeded_indexed(config.seed, "ae-dropout", ((epoch as u64) << 32) | i as u64);
                let drop = (config.dropout > 0.0).then_some((&mut rng, config.dropout));
                let pass = run(&params, dims, &data[i], drop);
                loss_and_grads(&params, dims, &data[i], &pass)
            });
            let mut sum: Vec<Vec<f32>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
            for (loss, g) in results {
                if !loss.is_finite() {
                    return Err(Error::non_finite(format!("autoencoder loss at epoch {}", epoch + 1)));
                }
                total += loss;
                for (a, b) in sum.iter_mut().zip(g) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
            let scale = 1.0 / batch.len() as f32;
            let grads = ParamSet::new(
                params
                    .iter()
                    .zip(sum)
                    .map(|((name, t), mut g)| {
                        g.iter_mut().for_each(|v| *v *= scale);
                        (name.to_string(), Tensor::from_parts_unchecked(t.shape().to_vec(), g))
                    })
                    .collect(),
            )?;
            optimizer
                .step(&mut params, &grads)
                .map_err(|_| Error::non_finite(format!("autoencoder update at epoch {}", epoch + 1)))?;
        }
        loss_history.push(total / data.len() as f64);
    }
    Ok(AutoencoderModel {
        dims,
        params,
        standardizer,
        seed: config.seed,
        loss_history,
    })
}

impl AutoencoderModel {
    pub fn bottleneck(&self) -> usize {
        self.dims.m
    }

    pub fn hidden(&self) -> usize {
        self.dims.hidden
    }

    /// Input length `L`.
    pub fn steps(&self) -> usize {
        self.dims.steps
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    fn prepare<S: Signal + ?Sized>(&self, s: &S) -> Result<Vec<f32>> {
        if s.steps() != self.dims.steps || s.channels() != self.dims.channels {
            return Err(Error::shape(
                "autoencoder",
                format!(
                    "expects {}x{} input, got {}x{}",
                    self.dims.steps,
                    self.dims.channels,
                    s.steps(),
                    s.channels()
                ),
            ));
        }
        Ok(self.standardizer.apply(s.signal())?.into_iter().map(|v| v as f32).collect())
    }

    /// Bottleneck vector of a raw (unstandardized) signal.
    pub fn embed<S: Signal + ?Sized>(&self, s: &S) -> Result<Vec<f64>> {
        let x = self.prepare(s)?;
        let z = run(&self.params, self.dims, &x, None).z;
        finite(z, "embedding")
    }

    /// Bottleneck vector of a signal already passed through
    /// [`standardizer`](Self::standardizer), step-major.
    pub fn embed_standardized(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dims.steps * self.dims.channels {
            return Err(Error::shape(
                "autoencoder",
                format!("expects {} standardized values, got {}", self.dims.steps * self.dims.channels, z.len()),
            ));
        }
        let x: Vec<f32> = z.iter().map(|&v| v as f32).collect();
        finite(run(&self.params, self.dims, &x, None).z, "embedding")
    }

    /// Bottleneck projection applied at every step of the top encoder layer,
    /// `steps` rows of `m` values.
    pub fn embed_sequence<S: Signal + ?Sized>(&self, s: &S) -> Result<Vec<Vec<f64>>> {
        let x = self.prepare(s)?;
        let pass = run(&self.params, self.dims, &x, None);
        let (l, h) = (self.dims.steps, self.dims.hidden);
        (0..l)
            .map(|t| {
                let cat = [pass.l2f.output_at(t), pass.l2b.output_at(l - 1 - t)].concat();
                let z = dense(self.params.tensor_at(BOTT_W).data(), self.params.tensor_at(BOTT_B).data(), &cat);
                debug_assert_eq!(cat.len(), 2 * h);
                finite(z, "sequence embedding")
            })
            .collect()
    }

    /// Reconstruction of a raw signal in standardized units.
    pub fn reconstruct<S: Signal + ?Sized>(&self, s: &S) -> Result<Vec<f64>> {
        let x = self.prepare(s)?;
        finite(run(&self.params, self.dims, &x, None).recon, "reconstruction")
    }

    /// Mean reconstruction error over `signals` with dropout disabled.
    pub fn reconstruction_loss<S: Signal>(&self, signals: &[S]) -> Result<f64> {
        if signals.is_empty() {
            return Err(Error::InvalidArgument("no signals".into()));
        }
        let mut total = 0.0;
        for s in signals {
            let x = self.prepare(s)?;
            let pass = run(&self.params, self.dims, &x, None);
            total += loss_and_grads(&self.params, self.dims, &x, &pass).0;
        }
        Ok(total / signals.len() as f64)
    }

    fn descriptor(&self) -> String {
        format!(
            "{AE_DESCRIPTOR};m={};hidden={};steps={};channels={};seed={}",
            self.dims.m, self.dims.hidden, self.dims.steps, self.dims.channels, self.seed
        )
    }

    pub fn to_container(&self) -> Container {
        let mut tensors: Vec<(String, Tensor)> =
            self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        tensors.push(("standardize.mean".into(), pack_f64(self.standardizer.mean())));
        tensors.push(("standardize.std".into(), pack_f64(self.standardizer.std())));
        tensors.push(("loss_history".into(), pack_f64(&self.loss_history)));
        Container {
            descriptor: self.descriptor(),
            epoch: self.loss_history.len() as u32,
            tensors,
        }
    }

    pub fn from_container(c: &Container) -> std::result::Result<Self, CheckpointError> {
        let fields = parse_descriptor(&c.descriptor, AE_DESCRIPTOR)?;
        let get = |k: &str| -> std::result::Result<u64, CheckpointError> {
            fields
                .iter()
                .find(|(key, _)| key == k)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| CheckpointError::Malformed(format!("descriptor lacks `{k}`")))
        };
        let dims = Dims {
            m: get("m")? as usize,
            hidden: get("hidden")? as usize,
            steps: get("steps")? as usize,
            channels: get("channels")? as usize,
        };
        let mut entries = Vec::new();
        for (name, shape) in layout(dims) {
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
        let width = dims.steps * dims.channels;
        let stat = |name: &str| unpack_f64(c.tensor(name)?, width);
        let standardizer = Standardizer::from_parts(stat("standardize.mean")?, stat("standardize.std")?)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let loss_history = unpack_f64(c.tensor("loss_history")?, c.epoch as usize)?;
        Ok(Self {
            dims,
            params: ParamSet::new(entries).map_err(|e| CheckpointError::Malformed(e.to_string()))?,
            standardizer,
            seed: get("seed")?,
            loss_history,
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

fn finite(v: Vec<f32>, what: &str) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v.into_iter().map(|x| x as f64).collect())
    } else {
        Err(Error::non_finite(what.to_string()))
    }
}

/// Splits `name;k=v;k=v` and checks the leading name.
pub(crate) fn parse_descriptor(text: &str, expected: &str) -> std::result::Result<Vec<(String, String)>, CheckpointError> {
    let mut parts = text.split(';');
    let head = parts.next().unwrap_or_default();
    if head != expected {
        return Err(CheckpointError::Malformed(format!("descriptor `{head}`, expected `{expected}`")));
    }
    parts
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CheckpointError::Malformed(format!("descriptor field `{p}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Task;
    use crate::trajectory::{LossTrajectory, SynthesisMode};

    fn suite(n: usize, len: usize, seed: u64) -> Vec<LossTrajectory> {
        let mut rng = seeded(seed, "ae-suite");
        (0..n)
            .map(|i| {
                let a: f64 = rng.random_range(0.5..2.0);
                let r: f64 = rng.random_range(0.05..0.3);
                let v = (0..len).map(|k| a * (-r * k as f64).exp() + 0.01 * rng.random::<f64>()).collect();
                LossTrajectory::new(v, i, SynthesisMode::Anchored, Task::Classification).unwrap()
            })
            .collect()
    }

    fn small_config(epochs: usize) -> AutoencoderConfig {
        AutoencoderConfig {
            bottleneck: 4,
            hidden: 6,
            epochs,
            lr: 5e-3,
            batch_size: 8,
            seed: 3,
            parallelism: Parallelism::SEQUENTIAL,
            ..AutoencoderConfig::default()
        }
    }

    #[test]
    fn zero_epochs_is_seeded_init() {
        let data = suite(32, 9, 1);
        let a = fit_autoencoder(&data, &small_config(0)).unwrap();
        let b = fit_autoencoder(&data, &small_config(0)).unwrap();
        assert_eq!(a, b);
        assert!(a.loss_history().is_empty());
        let dims = Dims { steps: 9, channels: 1, hidden: 6, m: 4 };
        assert_eq!(a.params, init_params(dims, 3));
    }

    #[test]
    fn embedding_shape_and_purity() {
        let data = suite(32, 9, 1);
        let model = fit_autoencoder(&data, &small_config(2)).unwrap();
        let e1 = model.embed(&data[0]).unwrap();
        assert_eq!(e1.len(), 4);
        assert_eq!(e1, model.embed(&data[0]).unwrap());
        let seq = model.embed_sequence(&data[0]).unwrap();
        assert_eq!(seq.len(), 9);
        assert!(seq.iter().all(|r| r.len() == 4));
    }

    #[test]
    fn zero_encoder_embeds_to_zero() {
        let data = suite(32, 5, 2);
        let mut model = fit_autoencoder(&data, &small_config(0)).unwrap();
        for t in model.params_mut().tensors_mut() {
            t.data_mut().fill(0.0);
        }
        assert!(model.embed(&data[4]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_mismatch_rejected() {
        let data = suite(32, 5, 2);
        let model = fit_autoencoder(&data, &small_config(0)).unwrap();
        let other = suite(1, 6, 2);
        assert!(matches!(model.embed(&other[0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn too_few_signals_rejected() {
        let data = suite(31, 5, 2);
        assert!(matches!(
            fit_autoencoder(&data, &small_config(1)),
            Err(Error::InsufficientBenign { needed: 32, found: 31 })
        ));
    }

    #[test]
    fn training_reduces_loss() {
        let data = suite(48, 10, 5);
        let model = fit_autoencoder(&data, &small_config(40)).unwrap();
        let h = model.loss_history();
        assert!(h[h.len() - 1] < 0.5 * h[0], "{:?}", h);
    }

    #[test]
    fn save_load_round_trip() {
        let data = suite(32, 7, 8);
        let model = fit_autoencoder(&data, &small_config(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.trck");
        model.save(&path).unwrap();
        let back = AutoencoderModel::load(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(std::fs::read(&path).unwrap(), back.to_container().encode());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let dims = Dims { steps: 4, channels: 2, hidden: 3, m: 2 };
        let params = init_params(dims, 17);
        let x: Vec<f32> = (0..8).map(|i| ((i as f32) * 0.7).sin()).collect();
        let masked = |p: &ParamSet| {
            let mut rng = seeded(5, "mask");
            run(p, dims, &x, Some((&mut rng, 0.2)))
        };
        let (_, grads) = loss_and_grads(&params, dims, &x, &masked(&params));
        let loss_at = |p: &ParamSet| {
            let pass = masked(p);
            pass.recon.iter().zip(&x).map(|(&r, &t)| (r as f64 - t as f64).powi(2)).sum::<f64>() / 8.0
        };
        let step = 1e-2f32;
        for (ti, g) in grads.iter().enumerate() {
            for j in [0, g.len() / 2, g.len() - 1] {
                let mut plus = params.clone();
                plus.tensors_mut().nth(ti).unwrap().data_mut()[j] += step;
                let mut minus = params.clone();
                minus.tensors_mut().nth(ti).unwrap().data_mut()[j] -= step;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step as f64);
                let err = (fd - g[j] as f64).abs() / fd.abs().max(g[j].abs() as f64).max(1e-3);
                assert!(err < 2e-2, "tensor {ti} index {j}: fd {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn parallel_training_matches_sequential() {
        let data = suite(32, 6, 4);
        let seq = fit_autoencoder(&data, &small_config(2)).unwrap();
        let mut cfg = small_config(2);
        cfg.parallelism = Parallelism::threads(3);
        assert_eq!(fit_autoencoder(&data, &cfg).unwrap(), seq);
    }
}
