//! On-disk adversarial batches: `adv_manifest.json` plus one dataset-layout
//! CSV per example.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AttackSpec;
use crate::data::{read_examples_csv, write_examples_csv, Example};
use crate::error::{Error, Result};

pub const ADV_MANIFEST: &str = "adv_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvEntry {
    pub example_id: usize,
    pub seed: u64,
    pub success: bool,
    pub linf: f64,
    pub l2: f64,
    /// Raw trajectory distance, when the attack measured one.
    pub trajectory_distance: Option<f64>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvManifest {
    pub attack: AttackSpec,
    pub feature_shape: Vec<usize>,
    pub entries: Vec<AdvEntry>,
}

pub fn example_file_name(id: usize) -> String {
    format!("adv_{id:05}.csv")
}

/// Writes the manifest and one CSV per example. `examples[i]` carries the
/// perturbed input and the original label of `entries[i]`.
pub fn save_adversarial(dir: &Path, manifest: &AdvManifest, examples: &[Example]) -> Result<()> {
    if manifest.entries.len() != examples.len() {
        return Err(Error::InvalidArgument("manifest and examples differ in length".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, ex) in manifest.entries.iter().zip(examples) {
        write_examples_csv(&dir.join(&entry.file), std::slice::from_ref(ex))?;
    }
    let path = dir.join(ADV_MANIFEST);
    let text = serde_json::to_string_pretty(manifest)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_adversarial(dir: &Path) -> Result<(AdvManifest, Vec<Example>)> {
    let path = dir.join(ADV_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: AdvManifest = serde_json::from_str(&text)?;
    let mut examples = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let mut rows = read_examples_csv(&dir.join(&entry.file), &manifest.feature_shape)?;
        if rows.len() != 1 {
            return Err(Error::Dataset(format!("{} should hold one example", entry.file)));
        }
        let mut ex = rows.remove(0);
        ex.id = entry.example_id;
        examples.push(ex);
    }
    Ok((manifest, examples))
}
