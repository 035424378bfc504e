//! Labeled vector datasets: synthetic blobs, the binary file format,
//! stratified splitting, and run configuration parsing.
//!
//! Dataset file layout (all little-endian):
//!
//! | offset        | type        | field                         |
//! |---------------|-------------|-------------------------------|
//! | 0             | `[u8; 4]`   | magic `PNND`                  |
//! | 4             | `u32`       | format version (1)            |
//! | 8             | `u32`       | N, number of samples          |
//! | 12            | `u32`       | D, sample dimension           |
//! | 16            | `u32`       | C, class count                |
//! | 20            | `f64 × N·D` | samples, row-major            |
//! | 20 + 8·N·D    | `u32 × N`   | labels, each `< C`            |

pub mod config;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::rng::{domain, substream};
use crate::vecspace::DenseMatrix;

pub use config::{apply_setting_str, parse_config, parse_config_file};

pub const DATASET_MAGIC: &[u8; 4] = b"PNND";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: DenseMatrix,
    labels: Vec<u32>,
    class_count: u32,
}

impl LabeledDataset {
    pub fn new(samples: DenseMatrix, labels: Vec<u32>, class_count: u32) -> Result<Self> {
        if samples.rows() == 0 || samples.cols() == 0 {
            return Err(Error::FormatViolation("dataset must be non-empty".into()));
        }
        if labels.len() != samples.rows() {
            return Err(Error::FormatViolation(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::FormatViolation(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if !samples.is_finite() {
            return Err(Error::FormatViolation("non-finite sample value".into()));
        }
        Ok(Self {
            samples,
            labels,
            class_count,
        })
    }

    /// Flattened 8-bit grayscale images, rescaled to `[0, 1]`.
    pub fn from_grayscale(rows: &[Vec<u8>], labels: Vec<u32>, class_count: u32) -> Result<Self> {
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|&p| f64::from(p) / 255.0).collect())
            .collect();
        let samples = DenseMatrix::from_rows(&scaled)
            .map_err(|e| Error::FormatViolation(format!("ragged image rows: {e}")))?;
        Self::new(samples, labels, class_count)
    }

    pub fn samples(&self) -> &DenseMatrix {
        &self.samples
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_count(&self) -> u32 {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.samples.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_count,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.u32(self.len() as u32);
        w.u32(self.dim() as u32);
        w.u32(self.class_count);
        for &v in self.samples.as_slice() {
            w.f64(v);
        }
        for &l in &self.labels {
            w.u32(l);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != DATASET_MAGIC {
            return Err(Error::FormatViolation("bad dataset magic".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::FormatViolation(format!(
                "unsupported dataset version {version}"
            )));
        }
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let c = r.u32()?;
        let expected = n
            .checked_mul(d)
            .and_then(|nd| nd.checked_mul(8))
            .and_then(|b| b.checked_add(4 * n));
        if expected != Some(r.remaining()) {
            return Err(Error::FormatViolation(format!(
                "payload is {} bytes, header implies {:?}",
                r.remaining(),
                expected
            )));
        }
        let samples: Vec<f64> = (0..n * d).map(|_| r.f64()).collect::<Result<_>>()?;
        let labels: Vec<u32> = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
        r.expect_end()?;
        Self::new(DenseMatrix::from_vec(n, d, samples)?, labels, c)
    }
}

pub fn save_dataset(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset.to_bytes())?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    LabeledDataset::from_bytes(&std::fs::read(path)?)
}

/// Gaussian clusters with centers drawn uniformly from `[−s, s]^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub class_count: u32,
    pub per_class: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub within_class_std: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    /// The 8-class, 500-per-class, 32-dimensional experiment dataset.
    fn default() -> Self {
        Self {
            class_count: 8,
            per_class: 500,
            dim: 32,
            center_scale: 1.0,
            within_class_std: 1.0,
            seed: 0,
        }
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.per_class == 0 || self.dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "blob counts must be positive: {self:?}"
            )));
        }
        if !(self.center_scale > 0.0 && self.within_class_std > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "blob scales must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Class centers, one row per class.
    pub fn centers(&self) -> DenseMatrix {
        let mut rng = substream(self.seed, &[domain::BLOBS, 0]);
        let s = self.center_scale;
        let data = (0..self.class_count as usize * self.dim)
            .map(|_| rng.random_range(-s..=s))
            .collect();
        DenseMatrix::from_vec(self.class_count as usize, self.dim, data).expect("shape")
    }
}

/// Samples are ordered class by class.
pub fn gen_blobs(spec: &BlobSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let centers = spec.centers();
    let mut rng = substream(spec.seed, &[domain::BLOBS, 1]);
    let n = spec.class_count as usize * spec.per_class;
    let mut samples = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.class_count {
        for _ in 0..spec.per_class {
            for &m in centers.row(c as usize) {
                samples.push(m + spec.within_class_std * rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(
        DenseMatrix::from_vec(n, spec.dim, samples)?,
        labels,
        spec.class_count,
    )
}

/// Stratified split. Each class contributes `round(n_c · train_fraction)`
/// items to the train side; both sides keep the original sample order.
pub fn split(
    dataset: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::RangeError {
            key: "train_fraction".into(),
            value: train_fraction.to_string(),
            expected: "0 < fraction < 1",
        });
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..dataset.class_count() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == c)
            .collect();
        if members.is_empty() {
            continue;
        }
        let n_train = (members.len() as f64 * train_fraction).round() as usize;
        if n_train >= members.len() {
            return Err(Error::ClassTooSmall {
                class: c,
                count: members.len(),
            });
        }
        members.shuffle(&mut substream(seed, &[domain::SPLIT, u64::from(c)]));
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}
