//! Offline and online phases, detection evaluation, ablations and reports.

pub mod config;
pub mod eval;
pub mod pipeline;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, Seeds, SignalKind};
pub use eval::{
    adaptive_config, attack_spec_for, emit_report, evaluate_detection, generate_adversarial, parse_report,
    render_report, run_ablation, run_ablations, AdversarialSet, AttackRow, EvalReport, ReportFormat, RuntimeStats,
    CSV_HEADER,
};
pub use pipeline::{
    prepare, run_offline, run_online, write_latencies, ExtractedSignal, Offline, PipelineBundle, StageLatencies,
    Workspace, BUNDLE_FILE,
};

use crate::error::{Error, Result};

/// Which intensifier stages run between the trajectory and the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Autoencoder embedding, then FFT magnitude.
    #[default]
    Full,
    /// FFT magnitude of the standardized trajectory.
    NoNoiseReduction,
    /// Autoencoder embedding without the FFT.
    NoFft,
    /// Standardized trajectory straight into the detector.
    Neither,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoNoiseReduction, Variant::NoFft, Variant::Neither];

    pub fn uses_autoencoder(self) -> bool {
        matches!(self, Variant::Full | Variant::NoFft)
    }

    pub fn uses_fft(self) -> bool {
        matches!(self, Variant::Full | Variant::NoNoiseReduction)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoNoiseReduction => "no-noise-reduction",
            Variant::NoFft => "no-fft",
            Variant::Neither => "neither",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no-noise-reduction" | "no-nr" => Ok(Variant::NoNoiseReduction),
            "no-fft" => Ok(Variant::NoFft),
            "neither" => Ok(Variant::Neither),
            other => Err(Error::Config(format!("unknown ablation variant `{other}`"))),
        }
    }
}
