use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::math::RandomStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralParams {
    pub n_per_class: usize,
    pub x_range_max: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SpiralParams {
    fn default() -> Self {
        Self {
            n_per_class: 500,
            x_range_max: 4.33 * PI,
            noise: 0.75,
            seed: 0,
        }
    }
}

/// Isotropic map from the unit square back to raw spiral coordinates:
/// `raw = origin + span * unit`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpiralTransform {
    pub origin: [f64; 2],
    pub span: f64,
}

impl SpiralTransform {
    pub fn to_raw(&self, unit: &[f64]) -> [f64; 2] {
        [
            self.origin[0] + self.span * unit[0],
            self.origin[1] + self.span * unit[1],
        ]
    }

    /// Converts a distance measured in raw units to unit-square units.
    pub fn raw_to_unit_distance(&self, d: f64) -> f64 {
        d / self.span
    }
}

#[derive(Debug, Clone)]
pub struct Spiral {
    pub dataset: Dataset,
    pub transform: SpiralTransform,
}

/// Raw spiral point before rescaling. Class 1 (positive) mirrors the
/// negative arm across the horizontal axis.
pub fn spiral_point(x: f64, u1: f64, u2: f64, positive: bool) -> [f64; 2] {
    let sign = if positive { -1.0 } else { 1.0 };
    [-x * x.cos() + u1, sign * x * x.sin() + u2]
}

/// Two interleaved spiral arms; label 1 = positive arm, label 2 = negative
/// arm. Noise is `Uniform[0, noise]` on each coordinate.
pub fn gen_spiral(p: &SpiralParams) -> Result<Spiral> {
    if p.n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    if !(p.noise >= 0.0) || !(p.x_range_max >= 0.0) {
        return Err(Error::invalid("noise and x_range_max must be >= 0"));
    }
    let mut rng = RandomStream::new(p.seed);
    let mut raw = Vec::with_capacity(2 * p.n_per_class);
    let mut labels = Vec::with_capacity(2 * p.n_per_class);
    for (label, positive) in [(1u32, true), (2u32, false)] {
        for _ in 0..p.n_per_class {
            let x = rng.uniform(0.0, p.x_range_max);
            let u1 = rng.uniform(0.0, p.noise);
            let u2 = rng.uniform(0.0, p.noise);
            raw.push(spiral_point(x, u1, u2, positive));
            labels.push(label);
        }
    }
    let lo = [
        raw.iter().map(|r| r[0]).fold(f64::INFINITY, f64::min),
        raw.iter().map(|r| r[1]).fold(f64::INFINITY, f64::min),
    ];
    let hi = [
        raw.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max),
        raw.iter().map(|r| r[1]).fold(f64::NEG_INFINITY, f64::max),
    ];
    let mut span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if span <= 0.0 {
        span = 1.0;
    }
    let transform = SpiralTransform { origin: lo, span };
    let feats: Vec<f64> = raw
        .iter()
        .flat_map(|r| {
            [
                ((r[0] - lo[0]) / span).clamp(0.0, 1.0),
                ((r[1] - lo[1]) / span).clamp(0.0, 1.0),
            ]
        })
        .collect();
    let name = format!(
        "spiral(origin=[{:?},{:?}],span={:?})",
        lo[0], lo[1], span
    );
    let dataset = Dataset::from_real(feats, 2, labels, 2, name)?;
    Ok(Spiral { dataset, transform })
}

/// Uniform cube noise of half-width `spread` around each center, clipped to
/// the unit box. Center `k` gets label `k + 1`.
pub fn gen_blobs(
    centers: &[Vec<f64>],
    spread: f64,
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    if centers.len() < 2 {
        return Err(Error::invalid("gen_blobs needs at least two centers"));
    }
    if n_per_class == 0 || !(spread >= 0.0) {
        return Err(Error::invalid("n_per_class >= 1 and spread >= 0 required"));
    }
    let dim = centers[0].len();
    let mut rng = RandomStream::new(seed);
    let mut feats = Vec::with_capacity(centers.len() * n_per_class * dim);
    let mut labels = Vec::with_capacity(centers.len() * n_per_class);
    for (k, c) in centers.iter().enumerate() {
        if c.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.len(),
            });
        }
        for _ in 0..n_per_class {
            for &ci in c {
                let v = ci + rng.uniform(-spread, spread);
                feats.push(v.clamp(0.0, 1.0));
            }
            labels.push(k as u32 + 1);
        }
    }
    Dataset::from_real(feats, dim, labels, centers.len() as u32, "blobs")
}
