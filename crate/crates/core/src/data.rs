//! Synthetic datasets, CSV ingestion and seeded minibatch iteration.
//!
//! All randomness comes from `ChaCha8Rng` (a counter-based stream cipher
//! generator, portable across platforms). Epoch shuffles use the plan's seed
//! as key and the epoch index as stream id, so epoch `e` of a run never depends
//! on how many numbers earlier epochs consumed.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::Batch;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    width: usize,
    targets: Vec<f64>,
    pub name: String,
    pub seed: u64,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, width: usize, targets: Vec<f64>, name: impl Into<String>, seed: u64) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument("dataset must hold at least one sample".into()));
        }
        crate::error::ensure_len("dataset inputs", targets.len() * width, inputs.len())?;
        crate::error::ensure_finite("dataset", &inputs)?;
        crate::error::ensure_finite("dataset targets", &targets)?;
        Ok(Self {
            inputs,
            width,
            targets,
            name: name.into(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn select(&self, indices: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(indices.len() * self.width);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Batch::new(inputs, self.width, targets).expect("indices are nonempty and in range")
    }

    pub fn as_batch(&self) -> Batch {
        Batch::new(self.inputs.clone(), self.width, self.targets.clone()).expect("dataset is nonempty")
    }

    /// Seeded split into `(train, validation)`; the validation part gets
    /// `round(val_fraction * N)` samples, at least one of each side.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("val_fraction must lie in (0, 1), got {val_fraction}")));
        }
        if self.len() < 2 {
            return Err(Error::InvalidArgument("need at least two samples to split".into()));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let n_val = ((self.len() as f64 * val_fraction).round() as usize).clamp(1, self.len() - 1);
        let (val_idx, train_idx) = idx.split_at(n_val);
        let part = |ix: &[usize], suffix: &str| {
            let b = self.select(ix);
            Dataset {
                inputs: (0..b.len()).flat_map(|i| b.row(i).to_vec()).collect(),
                width: self.width,
                targets: b.targets().to_vec(),
                name: format!("{}{suffix}", self.name),
                seed: self.seed,
            }
        };
        Ok((part(train_idx, ":train"), part(val_idx, ":val")))
    }

    /// Writes `x0..x{d-1},label` rows; reals with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let header: Vec<String> = (0..self.width).map(|j| format!("x{j}")).chain(["label".to_string()]).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.len() {
            for x in self.row(i) {
                out.push_str(&format_real(*x));
                out.push(',');
            }
            out.push_str(&format!("{}\n", self.targets[i]));
        }
        write_atomic(path, out.as_bytes())
    }
}

/// Real-number format used in every CSV this crate emits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Two interleaving unit half-circles, `n / 2` points each; label 0 for the
/// upper arc centred at the origin, 1 for the lower arc centred at `(1, 0.5)`.
pub fn make_two_moons(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("two_moons needs an even n >= 2, got {n}")));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut targets = Vec::with_capacity(n);
    for label in 0..2 {
        for i in 0..half {
            let t = if half > 1 {
                std::f64::consts::PI * i as f64 / (half - 1) as f64
            } else {
                0.0
            };
            let (x, y) = if label == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            inputs.push(x + noise_std * nx);
            inputs.push(y + noise_std * ny);
            targets.push(label as f64);
        }
    }
    Dataset::new(inputs, 2, targets, "two_moons", seed)
}

/// Centres of [`make_gaussian_blobs`]: evenly spaced on a circle of radius 4.
pub fn blob_centers(centers: usize) -> Vec<[f64; 2]> {
    (0..centers)
        .map(|c| {
            let a = 2.0 * std::f64::consts::PI * c as f64 / centers as f64;
            [4.0 * a.cos(), 4.0 * a.sin()]
        })
        .collect()
}

/// Isotropic 2-D Gaussian clusters, one label per centre. When `n` is not a
/// multiple of `centers` the first `n % centers` clusters get one extra point.
pub fn make_gaussian_blobs(n: usize, centers: usize, std: f64, seed: u64) -> Result<Dataset> {
    if centers < 2 {
        return Err(Error::InvalidArgument(format!("gaussian_blobs needs >= 2 centers, got {centers}")));
    }
    if n < centers {
        return Err(Error::InvalidArgument(format!("need n >= centers, got n = {n}")));
    }
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::InvalidArgument(format!("std must be >= 0, got {std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut targets = Vec::with_capacity(n);
    for (c, center) in blob_centers(centers).iter().enumerate() {
        let count = n / centers + usize::from(c < n % centers);
        for _ in 0..count {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            inputs.push(center[0] + std * nx);
            inputs.push(center[1] + std * ny);
            targets.push(c as f64);
        }
    }
    Dataset::new(inputs, 2, targets, "gaussian_blobs", seed)
}

/// Reads a headed, comma-separated numeric file. Every column other than
/// `label_column` becomes a feature, in file order.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let parse_err = |line: u64, column: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column: column.to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(1, "", format!("{other:?}")),
        })?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| parse_err(1, label_column, "label column not found in header".into()))?;
    let width = headers.len() - 1;

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(parse_err(
                line,
                "",
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        for (j, cell) in record.iter().enumerate() {
            let name = &headers[j];
            let value: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, name, format!("`{cell}` is not a number")))?;
            if !value.is_finite() {
                return Err(parse_err(line, name, format!("non-finite value `{cell}`")));
            }
            if j == label_idx {
                targets.push(value);
            } else {
                inputs.push(value);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::EmptyDataset { path: path.to_path_buf() });
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(inputs, width, targets, name, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return Err(Error::InvalidArgument(format!(
                "batch_size must lie in [1, {dataset_len}], got {}",
                self.batch_size
            )));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, dataset_len: usize) -> usize {
        if self.drop_last {
            dataset_len / self.batch_size
        } else {
            dataset_len.div_ceil(self.batch_size)
        }
    }
}

/// Permutation of `0..n` used for `epoch`.
pub fn epoch_permutation(n: usize, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Minibatches for one epoch, in order.
pub fn batches(dataset: &Dataset, plan: &BatchPlan, epoch: u64) -> Result<Vec<Batch>> {
    plan.validate(dataset.len())?;
    let perm = epoch_permutation(dataset.len(), plan.shuffle_seed, epoch);
    Ok(perm
        .chunks(plan.batch_size)
        .filter(|c| !plan.drop_last || c.len() == plan.batch_size)
        .map(|c| dataset.select(c))
        .collect())
}
