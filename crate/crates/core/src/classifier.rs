//! Distance-to-class classifier with margin certificates.
//!
//! `score(x)_i = dist(x, X_i) / r` where `X_i` is the stored sample of class
//! `i`; the prediction is the class with the smallest score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dims, Error, Result};
use crate::math::{dist_unchecked, Metric};

#[derive(Debug, Clone)]
pub struct DistanceClassifier {
    dim: usize,
    r: f64,
    metric: Metric,
    /// Row-major points of each class, class `i + 1` at index `i`.
    class_points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub predicted: u32,
    pub margin: f64,
    pub certified_radius: f64,
}

impl DistanceClassifier {
    /// `class_points[i]` holds the reference points of class `i + 1`.
    pub fn new(class_points: Vec<Vec<Vec<f64>>>, r: f64, metric: Metric) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!("r must be > 0, got {r}")));
        }
        if class_points.is_empty() {
            return Err(Error::invalid("at least one class is required"));
        }
        let dim = class_points
            .iter()
            .flatten()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("classifier has no points"))?;
        let mut flat = Vec::with_capacity(class_points.len());
        for (i, pts) in class_points.into_iter().enumerate() {
            if pts.is_empty() {
                return Err(Error::invalid(format!("class {} has no points", i + 1)));
            }
            let mut rows = Vec::with_capacity(pts.len() * dim);
            for p in pts {
                check_dims(dim, p.len())?;
                rows.extend(p);
            }
            flat.push(rows);
        }
        Ok(Self {
            dim,
            r,
            metric,
            class_points: flat,
        })
    }

    /// Uses every row of `ds` as a reference point of its class.
    pub fn from_dataset(ds: &Dataset, r: f64, metric: Metric) -> Result<Self> {
        let mut classes = vec![Vec::new(); ds.class_count() as usize];
        for (i, row) in ds.rows().enumerate() {
            classes[(ds.label(i) - 1) as usize].push(row.into_owned());
        }
        Self::new(classes, r, metric)
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn class_count(&self) -> u32 {
        self.class_points.len() as u32
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unscaled distance from `x` to each class sample.
    pub fn class_distances(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.dim, x.len())?;
        Ok(self
            .class_points
            .iter()
            .map(|rows| {
                rows.chunks_exact(self.dim)
                    .map(|p| dist_unchecked(self.metric, x, p))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect())
    }

    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut d = self.class_distances(x)?;
        for v in &mut d {
            *v /= self.r;
        }
        Ok(d)
    }

    pub fn predict(&self, x: &[f64]) -> Result<u32> {
        Ok(argmin(&self.class_distances(x)?) as u32 + 1)
    }

    /// `(dist(x, X_2) - dist(x, X_1)) / 2r`; class 1 is the positive class.
    pub fn binary_score(&self, x: &[f64]) -> Result<f64> {
        if self.class_points.len() != 2 {
            return Err(Error::invalid(format!(
                "binary score needs exactly 2 classes, classifier has {}",
                self.class_points.len()
            )));
        }
        let d = self.class_distances(x)?;
        Ok((d[1] - d[0]) / (2.0 * self.r))
    }

    pub fn certify(&self, x: &[f64]) -> Result<Certificate> {
        let d = self.class_distances(x)?;
        let y = argmin(&d);
        let runner_up = d
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let margin = runner_up - d[y];
        Ok(Certificate {
            predicted: y as u32 + 1,
            margin,
            certified_radius: (margin / 2.0).max(0.0),
        })
    }

    pub fn certify_all(&self, ds: &Dataset) -> Result<Vec<Certificate>> {
        check_dims(self.dim, ds.dim())?;
        (0..ds.len())
            .into_par_iter()
            .map(|i| self.certify(&ds.row(i)))
            .collect()
    }

    /// Fraction of points predicted correctly with certified radius `>= radius`.
    pub fn astuteness(&self, test: &Dataset, radius: f64) -> Result<f64> {
        if !(radius >= 0.0) {
            return Err(Error::invalid(format!("radius must be >= 0, got {radius}")));
        }
        let certs = self.certify_all(test)?;
        let good = certs
            .iter()
            .zip(test.labels())
            .filter(|(c, &y)| c.predicted == y && c.certified_radius >= radius)
            .count();
        Ok(good as f64 / test.len() as f64)
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}
