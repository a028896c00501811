//! Dataset synthesis and ingestion.
//!
//! Dataset ids:
//!
//! - `blobs-K[-D]`: K Gaussian class blobs in D dimensions (default D = 8)
//! - `moons`, `rings`: two-class 2-D toy problems
//! - `sine-forecast`: multichannel noisy sinusoids; windows of three steps
//!   predict the next value of channel 0
//! - `idx-file:<images>[,<labels>]`: MNIST-style IDX pair; when the labels
//!   path is omitted, `images` in the file name is replaced with `labels`
//! - `csv-file:<path>`: `label,f1,...,fd` rows, header optional
//!
//! Features are scaled to `[0, 1]`, the scale attack budgets are expressed in.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Task;
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Class(usize),
    Value(Vec<f32>),
}

impl Target {
    pub fn class(&self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(*c),
            Target::Value(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Position within its split.
    pub id: usize,
    pub x: Tensor,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        Self {
            train: 2000,
            val: 1200,
            test: 1200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub id: String,
    pub task: Task,
    pub feature_shape: Vec<usize>,
    /// Class count for classification, target width for regression.
    pub output_dim: usize,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl DatasetHandle {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn from_pool(
        id: &str,
        task: Task,
        feature_shape: Vec<usize>,
        output_dim: usize,
        mut pool: Vec<(Vec<f32>, Target)>,
        sizes: DatasetSizes,
    ) -> Result<Self> {
        let total = sizes.train + sizes.val + sizes.test;
        if pool.len() < total || total == 0 {
            return Err(Error::Dataset(format!(
                "{id}: {} examples available, {total} requested",
                pool.len()
            )));
        }
        pool.truncate(total);
        let make = |range: std::ops::Range<usize>| -> Result<Vec<Example>> {
            pool[range]
                .iter()
                .enumerate()
                .map(|(i, (x, t))| {
                    Ok(Example {
                        id: i,
                        x: Tensor::new(feature_shape.clone(), x.clone())?,
                        target: t.clone(),
                    })
                })
                .collect()
        };
        let train = make(0..sizes.train)?;
        let val = make(sizes.train..sizes.train + sizes.val)?;
        let test = make(sizes.train + sizes.val..total)?;
        Ok(Self {
            id: id.to_string(),
            task,
            feature_shape,
            output_dim,
            train,
            val,
            test,
        })
    }
}

pub fn load_or_synthesize_dataset(id: &str, seed: u64) -> Result<DatasetHandle> {
    load_or_synthesize_dataset_sized(id, seed, DatasetSizes::default())
}

/// Synthetic ids honour `sizes` exactly; file-backed ids are shuffled and
/// split 60/20/20 and ignore `sizes`.
pub fn load_or_synthesize_dataset_sized(id: &str, seed: u64, sizes: DatasetSizes) -> Result<DatasetHandle> {
    if let Some(rest) = id.strip_prefix("idx-file:") {
        return load_idx(id, rest, seed);
    }
    if let Some(path) = id.strip_prefix("csv-file:") {
        return load_csv(id, Path::new(path), seed);
    }
    let total = sizes.train + sizes.val + sizes.test;
    if let Some(rest) = id.strip_prefix("blobs-") {
        let mut parts = rest.split('-');
        let k: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .filter(|&k| k >= 2)
            .ok_or_else(|| Error::Dataset(format!("bad class count in `{id}`")))?;
        let d: usize = match parts.next() {
            Some(v) => v
                .parse()
                .ok()
                .filter(|&d| d >= 1)
                .ok_or_else(|| Error::Dataset(format!("bad dimension in `{id}`")))?,
            None => 8,
        };
        let pool = blobs(k, d, total, seed);
        return DatasetHandle::from_pool(id, Task::Classification, vec![d], k, pool, sizes);
    }
    match id {
        "moons" => DatasetHandle::from_pool(id, Task::Classification, vec![2], 2, moons(total, seed), sizes),
        "rings" => DatasetHandle::from_pool(id, Task::Classification, vec![2], 2, rings(total, seed), sizes),
        "sine-forecast" => {
            DatasetHandle::from_pool(id, Task::Regression, vec![3, SINE_CHANNELS], 1, sine_forecast(total, seed), sizes)
        }
        _ => Err(Error::Dataset(format!("unknown dataset id `{id}`"))),
    }
}

/// Per-feature min-max scaling to `[0, 1]` over the whole pool.
fn minmax_scale(pool: &mut [(Vec<f32>, Target)]) {
    let d = pool[0].0.len();
    for j in 0..d {
        let (lo, hi) = pool.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), (x, _)| {
            (lo.min(x[j]), hi.max(x[j]))
        });
        let span = if hi > lo { hi - lo } else { 1.0 };
        for (x, _) in pool.iter_mut() {
            x[j] = ((x[j] - lo) / span).clamp(0.0, 1.0);
        }
    }
}

/// Cluster spread relative to the distance between class centers.
const BLOB_STD: f64 = 1.0;
const BLOB_CENTER_RANGE: f64 = 2.0;

fn blobs(k: usize, d: usize, n: usize, seed: u64) -> Vec<(Vec<f32>, Target)> {
    let mut rng = seeded(seed, "blobs");
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-BLOB_CENTER_RANGE..BLOB_CENTER_RANGE)).collect())
        .collect();
    let noise = Normal::new(0.0, BLOB_STD).unwrap();
    let mut pool: Vec<(Vec<f32>, Target)> = (0..n)
        .map(|_| {
            let c = rng.random_range(0..k);
            let x = centers[c].iter().map(|&m| (m + noise.sample(&mut rng)) as f32).collect();
            (x, Target::Class(c))
        })
        .collect();
    minmax_scale(&mut pool);
    pool
}

fn moons(n: usize, seed: u64) -> Vec<(Vec<f32>, Target)> {
    let mut rng = seeded(seed, "moons");
    let noise = Normal::new(0.0, 0.15).unwrap();
    let mut pool: Vec<(Vec<f32>, Target)> = (0..n)
        .map(|_| {
            let c = rng.random_range(0..2usize);
            let t = rng.random_range(0.0..std::f64::consts::PI);
            let (x, y) = if c == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            (
                vec![(x + noise.sample(&mut rng)) as f32, (y + noise.sample(&mut rng)) as f32],
                Target::Class(c),
            )
        })
        .collect();
    minmax_scale(&mut pool);
    pool
}

fn rings(n: usize, seed: u64) -> Vec<(Vec<f32>, Target)> {
    let mut rng = seeded(seed, "rings");
    let noise = Normal::new(0.0, 0.08).unwrap();
    let mut pool: Vec<(Vec<f32>, Target)> = (0..n)
        .map(|_| {
            let c = rng.random_range(0..2usize);
            let r = if c == 0 { 0.5 } else { 1.0 };
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            (
                vec![
                    (r * a.cos() + noise.sample(&mut rng)) as f32,
                    (r * a.sin() + noise.sample(&mut rng)) as f32,
                ],
                Target::Class(c),
            )
        })
        .collect();
    minmax_scale(&mut pool);
    pool
}

pub const SINE_CHANNELS: usize = 4;

fn sine_forecast(n: usize, seed: u64) -> Vec<(Vec<f32>, Target)> {
    let mut rng = seeded(seed, "sine-forecast");
    let noise = Normal::new(0.0, 0.05).unwrap();
    let len = n + 3;
    let freqs: Vec<f64> = (0..SINE_CHANNELS).map(|_| rng.random_range(0.05..0.3)).collect();
    let phases: Vec<f64> = (0..SINE_CHANNELS).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let mut series: Vec<Vec<f64>> = (0..len)
        .map(|t| {
            (0..SINE_CHANNELS)
                .map(|c| (freqs[c] * t as f64 + phases[c]).sin() + noise.sample(&mut rng))
                .collect()
        })
        .collect();
    // Channel 0 also depends on channel 1 so the extra inputs carry signal.
    for row in series.iter_mut() {
        row[0] = 0.7 * row[0] + 0.3 * row[1];
    }
    for c in 0..SINE_CHANNELS {
        let lo = series.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
        let hi = series.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
        for r in series.iter_mut() {
            r[c] = (r[c] - lo) / (hi - lo);
        }
    }
    let mut pool: Vec<(Vec<f32>, Target)> = (0..n)
        .map(|t| {
            let x = series[t..t + 3].iter().flatten().map(|&v| v as f32).collect();
            (x, Target::Value(vec![series[t + 3][0] as f32]))
        })
        .collect();
    // Windows are shuffled so the splits cover the whole series.
    pool.shuffle(&mut rng);
    pool
}

fn file_split(id: &str, task: Task, shape: Vec<usize>, out: usize, mut pool: Vec<(Vec<f32>, Target)>, seed: u64) -> Result<DatasetHandle> {
    if pool.len() < 3 {
        return Err(Error::Dataset(format!("{id}: need at least 3 examples")));
    }
    pool.shuffle(&mut seeded(seed, "file-split"));
    let n = pool.len();
    let train = n * 6 / 10;
    let val = (n - train) / 2;
    let sizes = DatasetSizes {
        train,
        val,
        test: n - train - val,
    };
    DatasetHandle::from_pool(id, task, shape, out, pool, sizes)
}

fn read_idx(path: &Path, expected_magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(Error::Dataset(format!("{}: too short for an IDX header", path.display())));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if magic != expected_magic {
        return Err(Error::Dataset(format!(
            "{}: IDX magic {magic:#010x}, expected {expected_magic:#010x}",
            path.display()
        )));
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Dataset(format!("{}: truncated IDX header", path.display())));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let len: usize = dims.iter().product();
    if bytes.len() != header + len {
        return Err(Error::Dataset(format!(
            "{}: IDX payload holds {} bytes, header implies {len}",
            path.display(),
            bytes.len() - header
        )));
    }
    Ok((dims, bytes[header..].to_vec()))
}

fn load_idx(id: &str, spec: &str, seed: u64) -> Result<DatasetHandle> {
    let (images, labels) = match spec.split_once(',') {
        Some((a, b)) => (a.to_string(), b.to_string()),
        None => {
            let l = spec.replacen("images", "labels", 1);
            if l == spec {
                return Err(Error::Dataset(format!("{id}: cannot infer labels file")));
            }
            (spec.to_string(), l)
        }
    };
    let (idims, pixels) = read_idx(Path::new(&images), 0x0000_0803)?;
    let (ldims, labels) = read_idx(Path::new(&labels), 0x0000_0801)?;
    if idims[0] != ldims[0] {
        return Err(Error::Dataset(format!("{id}: {} images but {} labels", idims[0], ldims[0])));
    }
    let (h, w) = (idims[1], idims[2]);
    let classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let pool = pixels
        .chunks_exact(h * w)
        .zip(&labels)
        .map(|(px, &l)| (px.iter().map(|&p| p as f32 / 255.0).collect(), Target::Class(l as usize)))
        .collect();
    file_split(id, Task::Classification, vec![1, h, w], classes.max(2), pool, seed)
}

/// Parses `label,f1,...,fd` rows. Integer labels make a classification set,
/// anything else a regression set. Features already inside `[0, 1]` are kept
/// as-is, otherwise every column is min-max scaled.
pub fn parse_csv(text: &str) -> Result<(Task, usize, Vec<(Vec<f32>, Target)>)> {
    let mut rows: Vec<(f64, Vec<f32>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() >= 2 => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Dataset(format!("line {}: non-finite value", lineno + 1)));
                }
                rows.push((v[0], v[1..].iter().map(|&x| x as f32).collect()));
            }
            Ok(_) => return Err(Error::Dataset(format!("line {}: need a label and features", lineno + 1))),
            Err(_) if rows.is_empty() && lineno == 0 => continue, // header
            Err(_) => return Err(Error::Dataset(format!("line {}: malformed number", lineno + 1))),
        }
    }
    let d = rows.first().map(|r| r.1.len()).ok_or_else(|| Error::Dataset("empty CSV".into()))?;
    if rows.iter().any(|r| r.1.len() != d) {
        return Err(Error::Dataset("ragged CSV rows".into()));
    }
    let classification = rows.iter().all(|(l, _)| *l >= 0.0 && l.fract() == 0.0);
    let (task, out) = if classification {
        let k = rows.iter().map(|(l, _)| *l as usize).max().unwrap() + 1;
        (Task::Classification, k.max(2))
    } else {
        (Task::Regression, 1)
    };
    let in_unit = rows.iter().all(|(_, x)| x.iter().all(|&v| (0.0..=1.0).contains(&v)));
    let mut pool: Vec<(Vec<f32>, Target)> = rows
        .into_iter()
        .map(|(l, x)| {
            let t = if classification {
                Target::Class(l as usize)
            } else {
                Target::Value(vec![l as f32])
            };
            (x, t)
        })
        .collect();
    if !in_unit {
        minmax_scale(&mut pool);
    }
    Ok((task, out, pool))
}

fn load_csv(id: &str, path: &Path, seed: u64) -> Result<DatasetHandle> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (task, out, pool) = parse_csv(&text)?;
    let d = pool[0].0.len();
    file_split(id, task, vec![d], out, pool, seed)
}

/// Writes examples in the CSV layout accepted by `csv-file:` (features
/// flattened, nine significant digits).
pub fn write_examples_csv(path: &Path, examples: &[Example]) -> Result<()> {
    let mut out = String::new();
    if let Some(first) = examples.first() {
        out.push_str("label");
        for j in 1..=first.x.len() {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
    }
    for ex in examples {
        match &ex.target {
            Target::Class(c) => out.push_str(&c.to_string()),
            Target::Value(v) => out.push_str(&format!("{:.8e}", v[0])),
        }
        for v in ex.x.data() {
            out.push_str(&format!(",{v:.8e}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads rows written by [`write_examples_csv`], reshaping features to
/// `feature_shape`. No rescaling is applied.
pub fn read_examples_csv(path: &Path, feature_shape: &[usize]) -> Result<Vec<Example>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let nums: Vec<f32> = fields
            .iter()
            .map(|f| f.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Dataset(format!("{}: malformed row", path.display())))?;
        let target = if fields[0].contains(['e', '.']) {
            Target::Value(vec![nums[0]])
        } else {
            Target::Class(nums[0] as usize)
        };
        let x = Tensor::new(feature_shape.to_vec(), nums[1..].to_vec())?;
        out.push(Example {
            id: out.len(),
            x,
            target,
        });
    }
    Ok(out)
}
