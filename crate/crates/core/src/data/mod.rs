//! Labeled datasets in the unit box.
//!
//! Labels are 1-based (`1..=class_count`). Features live either as `f64`
//! rows or, for data read from 8-bit sources, as raw bytes where the
//! feature value is `byte / 255`. Keeping the bytes around lets the
//! separation scan work in exact integer units and keeps CIFAR-10 at
//! 150 MB instead of 1.2 GB.

mod cache;
mod cifar;
mod idx;
mod synth;

use std::borrow::Cow;

pub use cache::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use cifar::{cifar10_batch_names, load_cifar10_binary};
pub use idx::{load_mnist_dir, load_mnist_idx};
pub use synth::{gen_blobs, gen_spiral, Spiral, SpiralParams, SpiralTransform};

use crate::error::{Error, Result};
use crate::math::RandomStream;

#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Real(Vec<f64>),
    Byte(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Features,
    dim: usize,
    labels: Vec<u32>,
    class_count: u32,
    name: String,
}

impl Dataset {
    pub fn from_real(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<u32>,
        class_count: u32,
        name: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self {
            features: Features::Real(features),
            dim,
            labels,
            class_count,
            name: name.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn from_bytes(
        pixels: Vec<u8>,
        dim: usize,
        labels: Vec<u32>,
        class_count: u32,
        name: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self {
            features: Features::Byte(pixels),
            dim,
            labels,
            class_count,
            name: name.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(
        rows: &[Vec<f64>],
        labels: Vec<u32>,
        class_count: u32,
        name: impl Into<String>,
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        Self::from_real(flat, dim, labels, class_count, name)
    }

    fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 {
            return Err(Error::invalid("dataset must contain at least one example"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if self.class_count == 0 {
            return Err(Error::invalid("class_count must be at least 1"));
        }
        let stored = match &self.features {
            Features::Real(v) => v.len(),
            Features::Byte(v) => v.len(),
        };
        if stored != n * self.dim {
            return Err(Error::invalid(format!(
                "feature matrix has {stored} values, expected {n} x {}",
                self.dim
            )));
        }
        if let Some(bad) = self
            .labels
            .iter()
            .find(|&&l| l == 0 || l > self.class_count)
        {
            return Err(Error::invalid(format!(
                "label {bad} outside 1..={}",
                self.class_count
            )));
        }
        if let Features::Real(v) = &self.features {
            if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::invalid(format!(
                    "feature value {bad} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> u32 {
        self.class_count
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    /// Raw pixel bytes, when the dataset came from an 8-bit source.
    pub fn bytes(&self) -> Option<&[u8]> {
        match &self.features {
            Features::Byte(b) => Some(b),
            Features::Real(_) => None,
        }
    }

    pub fn row(&self, i: usize) -> Cow<'_, [f64]> {
        let range = i * self.dim..(i + 1) * self.dim;
        match &self.features {
            Features::Real(v) => Cow::Borrowed(&v[range]),
            Features::Byte(b) => Cow::Owned(b[range].iter().map(|&p| byte_value(p)).collect()),
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = Cow<'_, [f64]>> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// Converts byte storage to `f64` storage.
    pub fn to_real(&self) -> Dataset {
        match &self.features {
            Features::Real(_) => self.clone(),
            Features::Byte(b) => Dataset {
                features: Features::Real(b.iter().map(|&p| byte_value(p)).collect()),
                dim: self.dim,
                labels: self.labels.clone(),
                class_count: self.class_count,
                name: self.name.clone(),
            },
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same features, new labels.
    pub fn with_labels(&self, labels: Vec<u32>) -> Result<Dataset> {
        let ds = Dataset {
            features: self.features.clone(),
            dim: self.dim,
            labels,
            class_count: self.class_count,
            name: self.name.clone(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Rows in the order given by `indices` (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!(
                "row index {bad} out of range for {} rows",
                self.len()
            )));
        }
        let d = self.dim;
        let features = match &self.features {
            Features::Real(v) => Features::Real(
                indices
                    .iter()
                    .flat_map(|&i| v[i * d..(i + 1) * d].iter().copied())
                    .collect(),
            ),
            Features::Byte(b) => Features::Byte(
                indices
                    .iter()
                    .flat_map(|&i| b[i * d..(i + 1) * d].iter().copied())
                    .collect(),
            ),
        };
        let ds = Dataset {
            features,
            dim: d,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            name: self.name.clone(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Appends `other` below `self`. Byte storage survives only if both are bytes.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let features = match (&self.features, &other.features) {
            (Features::Byte(a), Features::Byte(b)) => {
                Features::Byte(a.iter().chain(b).copied().collect())
            }
            _ => {
                let mut v = Vec::with_capacity((self.len() + other.len()) * self.dim);
                for r in self.rows().chain(other.rows()) {
                    v.extend_from_slice(&r);
                }
                Features::Real(v)
            }
        };
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let ds = Dataset {
            features,
            dim: self.dim,
            labels,
            class_count: self.class_count.max(other.class_count),
            name: format!("{}+{}", self.name, other.name),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Per-class counts, index 0 = class 1.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count as usize];
        for &l in &self.labels {
            counts[(l - 1) as usize] += 1;
        }
        counts
    }
}

#[inline]
pub(crate) fn byte_value(p: u8) -> f64 {
    f64::from(p) / 255.0
}

/// Draws `n` rows without replacement. With `stratified`, per-class counts
/// follow the class proportions (largest-remainder rounding, so each class
/// is within one of its exact share).
pub fn subsample(ds: &Dataset, n: usize, seed: u64, stratified: bool) -> Result<Dataset> {
    if n == 0 || n > ds.len() {
        return Err(Error::invalid(format!(
            "subsample size {n} must be in 1..={}",
            ds.len()
        )));
    }
    let mut rng = RandomStream::new(seed);
    let mut picked = if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count() as usize];
        for (i, &l) in ds.labels().iter().enumerate() {
            by_class[(l - 1) as usize].push(i);
        }
        let total = ds.len() as f64;
        let exact: Vec<f64> = by_class
            .iter()
            .map(|c| n as f64 * c.len() as f64 / total)
            .collect();
        let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut remaining = n - quota.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..quota.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for c in order {
            if remaining == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                remaining -= 1;
            }
        }
        let mut picked = Vec::with_capacity(n);
        for (members, q) in by_class.iter_mut().zip(quota) {
            rng.shuffle(members);
            picked.extend_from_slice(&members[..q]);
        }
        rng.shuffle(&mut picked);
        picked
    } else {
        let mut all: Vec<usize> = (0..ds.len()).collect();
        rng.shuffle(&mut all);
        all.truncate(n);
        all
    };
    picked.shrink_to_fit();
    ds.select(&picked)
}

/// First `n_first` rows and the remainder, both non-empty.
pub fn split(ds: &Dataset, n_first: usize) -> Result<(Dataset, Dataset)> {
    if n_first == 0 || n_first >= ds.len() {
        return Err(Error::invalid(format!(
            "split point {n_first} must be in 1..{}",
            ds.len()
        )));
    }
    let head: Vec<usize> = (0..n_first).collect();
    let tail: Vec<usize> = (n_first..ds.len()).collect();
    Ok((ds.select(&head)?, ds.select(&tail)?))
}

/// Replaces every label with an i.i.d. uniform draw from `1..=C`.
pub fn random_relabel(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let mut rng = RandomStream::new(seed);
    let c = ds.class_count() as usize;
    let labels = (0..ds.len()).map(|_| rng.below(c) as u32 + 1).collect();
    ds.with_labels(labels)
}
