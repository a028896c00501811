//! Discriminability intensifier: standardization, recurrent compression and
//! FFT magnitude spectra.

pub mod autoencoder;
pub mod fft;
pub mod standardize;

use std::fmt;
use std::str::FromStr;

pub use autoencoder::{fit_autoencoder, AutoencoderConfig, AutoencoderModel, AE_DESCRIPTOR};
pub use fft::{fft, fft_real, ifft, spectrum};
pub use standardize::{Standardizer, STD_FLOOR};

use crate::error::{Error, Result};
use crate::trajectory::Signal;

/// What the FFT is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectrumMode {
    /// The `m`-dimensional embedding vector.
    #[default]
    Vector,
    /// Per-step bottleneck projections, transformed along time and averaged
    /// over the `m` dimensions.
    Sequence,
}

impl fmt::Display for SpectrumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpectrumMode::Vector => "vector",
            SpectrumMode::Sequence => "sequence",
        })
    }
}

impl FromStr for SpectrumMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vector" => Ok(SpectrumMode::Vector),
            "sequence" => Ok(SpectrumMode::Sequence),
            other => Err(Error::Config(format!("unknown spectrum mode `{other}`"))),
        }
    }
}

/// Length of the signature produced for a model in the given mode.
pub fn signature_len(model: &AutoencoderModel, mode: SpectrumMode) -> usize {
    match mode {
        SpectrumMode::Vector => model.bottleneck() / 2 + 1,
        SpectrumMode::Sequence => model.steps() / 2 + 1,
    }
}

/// Embeds a raw signal and returns its spectrum signature.
pub fn signature<S: Signal + ?Sized>(model: &AutoencoderModel, s: &S, mode: SpectrumMode) -> Result<Vec<f64>> {
    match mode {
        SpectrumMode::Vector => spectrum(&model.embed(s)?),
        SpectrumMode::Sequence => {
            let rows = model.embed_sequence(s)?;
            let m = model.bottleneck();
            let mut avg = vec![0.0; rows.len() / 2 + 1];
            for j in 0..m {
                let series: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                avg.iter_mut().zip(spectrum(&series)?).for_each(|(a, b)| *a += b);
            }
            avg.iter_mut().for_each(|a| *a /= m as f64);
            Ok(avg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Task;
    use crate::parallel::Parallelism;
    use crate::trajectory::{LossTrajectory, SynthesisMode};

    #[test]
    fn signature_lengths() {
        let data: Vec<LossTrajectory> = (0..32)
            .map(|i| {
                let v = (0..7).map(|k| ((i * 7 + k) as f64 * 0.37).sin().abs()).collect();
                LossTrajectory::new(v, i, SynthesisMode::Anchored, Task::Classification).unwrap()
            })
            .collect();
        let cfg = AutoencoderConfig {
            bottleneck: 5,
            hidden: 4,
            epochs: 1,
            parallelism: Parallelism::SEQUENTIAL,
            ..AutoencoderConfig::default()
        };
        let model = fit_autoencoder(&data, &cfg).unwrap();
        for mode in [SpectrumMode::Vector, SpectrumMode::Sequence] {
            let s = signature(&model, &data[0], mode).unwrap();
            assert_eq!(s.len(), signature_len(&model, mode));
            assert!(s.iter().all(|&v| v >= 0.0));
        }
    }
}
