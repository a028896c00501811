//! Adversarial-example detection from training-trajectory imprints.
//!
//! A model is trained while every per-epoch intermediate model is kept. For an
//! incoming input, each intermediate model's softmax is scored against the
//! deployed model's softmax, giving a per-epoch synthetic-loss trajectory. The
//! trajectory is compressed by a recurrent autoencoder, turned into an FFT
//! magnitude spectrum, and scored by a one-class Deep-SVDD calibrated to a
//! preset false-rejection rate.
//!
//! Module map:
//!
//! - [`nn`]: tensors, layers, losses, reverse-mode gradients, optimizers
//! - [`train`], [`checkpoint`], [`data`]: per-epoch checkpointed training
//! - [`attacks`]: FGSM, BIM/PGD, boundary and trajectory-regularized attacks
//! - [`trajectory`]: synthetic-loss trajectories and softmax imprints
//! - [`intensifier`]: standardization, recurrent autoencoder, FFT spectra
//! - [`detector`]: Deep-SVDD with nearest-rank threshold calibration
//! - [`harness`]: offline/online phases, evaluation, ablations, reports

pub mod attacks;
pub mod checkpoint;
pub mod data;
pub mod detector;
pub mod error;
pub mod harness;
pub mod intensifier;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod trajectory;

pub use error::{CheckpointError, Error, Result};
pub use tensor::Tensor;
