//! Exact nearest different-class distances (Train-Train / Test-Train
//! separation), histograms, outlier flags and the random-label baseline.
//!
//! The scan is exact. For Linf it prunes with the per-query running best:
//! a candidate is abandoned as soon as one coordinate gap reaches the best
//! distance found so far. Coordinates are visited in order of decreasing
//! reference variance (Linf is permutation invariant) so border pixels that
//! are blank everywhere come last, and a small random sample of candidates
//! seeds a tight initial bound. Byte-backed datasets are compared in
//! integer units of 1/255.
//!
//! Ties between equally distant neighbours resolve to the lowest reference
//! index regardless of scan order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{random_relabel, Dataset};
use crate::error::{Error, Result};
use crate::math::{self, Metric, RandomStream};

const SEED_SAMPLES: usize = 24;
const SEED_STREAM_KEY: u64 = 0x5e9a_1ab0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeparationMode {
    TrainTrain,
    TestTrain,
}

impl std::str::FromStr for SeparationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train-train" => Ok(SeparationMode::TrainTrain),
            "test-train" => Ok(SeparationMode::TestTrain),
            other => Err(Error::invalid(format!("unknown separation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationRecord {
    pub query_index: usize,
    pub query_label: u32,
    pub nn_index: usize,
    pub nn_label: u32,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub mode: SeparationMode,
    pub metric: Metric,
    /// Minimum over `records`; `None` when no query had a different-class neighbour.
    pub min: Option<f64>,
    pub mean: Option<f64>,
    /// Number of queries scanned.
    pub n: usize,
    pub records: Vec<SeparationRecord>,
    /// Queries whose class is the only class among the references.
    #[serde(default)]
    pub unmatched: Vec<usize>,
}

impl SeparationReport {
    fn from_outcomes(
        mode: SeparationMode,
        metric: Metric,
        outcomes: Vec<std::result::Result<SeparationRecord, usize>>,
    ) -> Self {
        let n = outcomes.len();
        let mut records = Vec::with_capacity(n);
        let mut unmatched = Vec::new();
        for o in outcomes {
            match o {
                Ok(r) => records.push(r),
                Err(q) => unmatched.push(q),
            }
        }
        let min = records.iter().map(|r| r.distance).reduce(f64::min);
        let mean = if records.is_empty() {
            None
        } else {
            Some(records.iter().map(|r| r.distance).sum::<f64>() / records.len() as f64)
        };
        Self {
            mode,
            metric,
            min,
            mean,
            n,
            records,
            unmatched,
        }
    }

    /// Largest `r` for which the scanned data is r-separated (half the minimum).
    pub fn separation_radius(&self) -> Option<f64> {
        self.min.map(|m| m / 2.0)
    }
}

fn check_inputs(queries: &Dataset, references: &Dataset) -> Result<()> {
    if queries.dim() != references.dim() {
        return Err(Error::DimensionMismatch {
            expected: references.dim(),
            found: queries.dim(),
        });
    }
    Ok(())
}

fn mode_for(exclude_identical_index: bool) -> SeparationMode {
    if exclude_identical_index {
        SeparationMode::TrainTrain
    } else {
        SeparationMode::TestTrain
    }
}

/// Exact nearest different-class neighbour of every query among `references`.
///
/// With `exclude_identical_index`, reference `i` is never a candidate for
/// query `i` (Train-Train mode with `queries == references`).
pub fn cross_class_nn(
    queries: &Dataset,
    references: &Dataset,
    metric: Metric,
    exclude_identical_index: bool,
) -> Result<SeparationReport> {
    check_inputs(queries, references)?;
    let outcomes = match (queries.bytes(), references.bytes()) {
        (Some(qb), Some(rb)) => {
            let index = ByteIndex::build(references, rb, metric);
            (0..queries.len())
                .into_par_iter()
                .map(|qi| {
                    let d = queries.dim();
                    index.query(qi, queries.label(qi), &qb[qi * d..(qi + 1) * d], exclude_identical_index)
                })
                .collect()
        }
        _ => {
            let index = RealIndex::build(references, metric);
            (0..queries.len())
                .into_par_iter()
                .map(|qi| index.query(qi, queries.label(qi), &queries.row(qi), exclude_identical_index))
                .collect()
        }
    };
    Ok(SeparationReport::from_outcomes(
        mode_for(exclude_identical_index),
        metric,
        outcomes,
    ))
}

/// Unpruned O(n·m·d) scan in reference index order; the test oracle for
/// [`cross_class_nn`].
pub fn brute_force_nn(
    queries: &Dataset,
    references: &Dataset,
    metric: Metric,
    exclude_identical_index: bool,
) -> Result<SeparationReport> {
    check_inputs(queries, references)?;
    let d = queries.dim();
    let outcomes = (0..queries.len())
        .map(|qi| {
            let y = queries.label(qi);
            let mut best: Option<(f64, usize)> = None;
            match (queries.bytes(), references.bytes()) {
                (Some(qb), Some(rb)) => {
                    let q = &qb[qi * d..(qi + 1) * d];
                    let mut best_key: Option<(u64, usize)> = None;
                    for j in 0..references.len() {
                        if references.label(j) == y || (exclude_identical_index && j == qi) {
                            continue;
                        }
                        let r = &rb[j * d..(j + 1) * d];
                        let key = match metric {
                            Metric::Linf => u64::from(math::linf_u8(q, r)),
                            Metric::L2 => math::l2_sq_u8(q, r),
                        };
                        if best_key.is_none_or(|(k, _)| key < k) {
                            best_key = Some((key, j));
                        }
                    }
                    best = best_key.map(|(k, j)| (byte_key_distance(k, metric), j));
                }
                _ => {
                    let q = queries.row(qi);
                    for j in 0..references.len() {
                        if references.label(j) == y || (exclude_identical_index && j == qi) {
                            continue;
                        }
                        let dist = math::dist_unchecked(metric, &q, &references.row(j));
                        if best.is_none_or(|(b, _)| dist < b) {
                            best = Some((dist, j));
                        }
                    }
                }
            }
            match best {
                Some((distance, j)) => Ok(SeparationRecord {
                    query_index: qi,
                    query_label: y,
                    nn_index: j,
                    nn_label: references.label(j),
                    distance,
                }),
                None => Err(qi),
            }
        })
        .collect();
    Ok(SeparationReport::from_outcomes(
        mode_for(exclude_identical_index),
        metric,
        outcomes,
    ))
}

fn byte_key_distance(key: u64, metric: Metric) -> f64 {
    match metric {
        Metric::Linf => key as f64 / 255.0,
        Metric::L2 => (key as f64).sqrt() / 255.0,
    }
}

/// References of one class, rows stored contiguously in scan order.
struct ClassBlock<T> {
    label: u32,
    indices: Vec<usize>,
    rows: Vec<T>,
}

fn group_by_class<T: Copy>(
    references: &Dataset,
    row_of: impl Fn(usize, &mut Vec<T>),
) -> Vec<ClassBlock<T>> {
    let mut blocks: Vec<ClassBlock<T>> = (1..=references.class_count())
        .map(|label| ClassBlock {
            label,
            indices: Vec::new(),
            rows: Vec::new(),
        })
        .collect();
    for j in 0..references.len() {
        let b = &mut blocks[(references.label(j) - 1) as usize];
        b.indices.push(j);
        row_of(j, &mut b.rows);
    }
    blocks.retain(|b| !b.indices.is_empty());
    blocks
}

/// Deterministic per-query sample of candidate positions across the
/// different-class blocks.
fn seed_positions(qi: usize, sizes: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let total: usize = sizes.iter().map(|s| s.1).sum();
    let mut rng = RandomStream::derive(SEED_STREAM_KEY, qi as u64);
    (0..SEED_SAMPLES.min(total))
        .map(|_| {
            let mut pos = rng.below(total);
            for &(b, len) in sizes {
                if pos < len {
                    return (b, pos);
                }
                pos -= len;
            }
            unreachable!("position within total")
        })
        .collect()
}

struct ByteIndex {
    dim: usize,
    metric: Metric,
    order: Option<Vec<usize>>,
    blocks: Vec<ClassBlock<u8>>,
}

impl ByteIndex {
    fn build(references: &Dataset, bytes: &[u8], metric: Metric) -> Self {
        let dim = references.dim();
        let order = (metric == Metric::Linf).then(|| variance_order_bytes(bytes, dim));
        let blocks = group_by_class(references, |j, out| {
            let row = &bytes[j * dim..(j + 1) * dim];
            match &order {
                Some(o) => out.extend(o.iter().map(|&c| row[c])),
                None => out.extend_from_slice(row),
            }
        });
        Self {
            dim,
            metric,
            order,
            blocks,
        }
    }

    fn key(&self, q: &[u8], r: &[u8], bound: u64) -> Option<u64> {
        match self.metric {
            Metric::Linf => {
                let bound = bound.min(256) as u16;
                math::linf_u8_early_exit(q, r, bound).within().map(u64::from)
            }
            Metric::L2 => {
                let k = math::l2_sq_u8(q, r);
                (k < bound).then_some(k)
            }
        }
    }

    fn query(
        &self,
        qi: usize,
        label: u32,
        raw: &[u8],
        exclude_identical_index: bool,
    ) -> std::result::Result<SeparationRecord, usize> {
        let d = self.dim;
        let q: Vec<u8> = match &self.order {
            Some(o) => o.iter().map(|&c| raw[c]).collect(),
            None => raw.to_vec(),
        };
        let others: Vec<(usize, usize)> = self
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.label != label)
            .map(|(bi, b)| (bi, b.indices.len()))
            .collect();
        if others.is_empty() {
            return Err(qi);
        }
        let skip = |j: usize| exclude_identical_index && j == qi;

        let mut best_key = u64::MAX;
        let mut best_idx = usize::MAX;
        for (bi, pos) in seed_positions(qi, &others) {
            let b = &self.blocks[bi];
            let j = b.indices[pos];
            if skip(j) {
                continue;
            }
            if let Some(k) = self.key(&q, &b.rows[pos * d..(pos + 1) * d], u64::MAX) {
                if k < best_key || (k == best_key && j < best_idx) {
                    best_key = k;
                    best_idx = j;
                }
            }
        }
        for &(bi, _) in &others {
            let b = &self.blocks[bi];
            for (pos, &j) in b.indices.iter().enumerate() {
                if skip(j) {
                    continue;
                }
                let bound = if j < best_idx {
                    best_key.saturating_add(1)
                } else {
                    best_key
                };
                if let Some(k) = self.key(&q, &b.rows[pos * d..(pos + 1) * d], bound) {
                    if k < best_key || (k == best_key && j < best_idx) {
                        best_key = k;
                        best_idx = j;
                    }
                }
            }
        }
        if best_idx == usize::MAX {
            return Err(qi);
        }
        Ok(SeparationRecord {
            query_index: qi,
            query_label: label,
            nn_index: best_idx,
            nn_label: self.label_of(best_idx),
            distance: byte_key_distance(best_key, self.metric),
        })
    }

    fn label_of(&self, j: usize) -> u32 {
        self.blocks
            .iter()
            .find(|b| b.indices.binary_search(&j).is_ok())
            .map(|b| b.label)
            .expect("reference index belongs to a block")
    }
}

struct RealIndex {
    dim: usize,
    metric: Metric,
    order: Option<Vec<usize>>,
    blocks: Vec<ClassBlock<f64>>,
}

impl RealIndex {
    fn build(references: &Dataset, metric: Metric) -> Self {
        let dim = references.dim();
        let order = (metric == Metric::Linf).then(|| variance_order_real(references));
        let blocks = group_by_class(references, |j, out| {
            let row = references.row(j);
            match &order {
                Some(o) => out.extend(o.iter().map(|&c| row[c])),
                None => out.extend_from_slice(&row),
            }
        });
        Self {
            dim,
            metric,
            order,
            blocks,
        }
    }

    fn key(&self, q: &[f64], r: &[f64], bound: f64) -> Option<f64> {
        match self.metric {
            Metric::Linf => math::linf_early_exit_unchecked(q, r, bound).within(),
            Metric::L2 => {
                let k = math::dist_unchecked(Metric::L2, q, r);
                (k < bound).then_some(k)
            }
        }
    }

    fn query(
        &self,
        qi: usize,
        label: u32,
        raw: &[f64],
        exclude_identical_index: bool,
    ) -> std::result::Result<SeparationRecord, usize> {
        let d = self.dim;
        let q: Vec<f64> = match &self.order {
            Some(o) => o.iter().map(|&c| raw[c]).collect(),
            None => raw.to_vec(),
        };
        let others: Vec<(usize, usize)> = self
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.label != label)
            .map(|(bi, b)| (bi, b.indices.len()))
            .collect();
        if others.is_empty() {
            return Err(qi);
        }
        let skip = |j: usize| exclude_identical_index && j == qi;

        let mut best = f64::INFINITY;
        let mut best_idx = usize::MAX;
        for (bi, pos) in seed_positions(qi, &others) {
            let b = &self.blocks[bi];
            let j = b.indices[pos];
            if skip(j) {
                continue;
            }
            if let Some(k) = self.key(&q, &b.rows[pos * d..(pos + 1) * d], f64::INFINITY) {
                if k < best || (k == best && j < best_idx) {
                    best = k;
                    best_idx = j;
                }
            }
        }
        for &(bi, _) in &others {
            let b = &self.blocks[bi];
            for (pos, &j) in b.indices.iter().enumerate() {
                if skip(j) {
                    continue;
                }
                let bound = if j < best_idx { best.next_up() } else { best };
                if let Some(k) = self.key(&q, &b.rows[pos * d..(pos + 1) * d], bound) {
                    if k < best || (k == best && j < best_idx) {
                        best = k;
                        best_idx = j;
                    }
                }
            }
        }
        if best_idx == usize::MAX {
            return Err(qi);
        }
        let nn_label = self
            .blocks
            .iter()
            .find(|b| b.indices.binary_search(&best_idx).is_ok())
            .map(|b| b.label)
            .expect("reference index belongs to a block");
        Ok(SeparationRecord {
            query_index: qi,
            query_label: label,
            nn_index: best_idx,
            nn_label,
            distance: best,
        })
    }
}

fn variance_order_bytes(bytes: &[u8], dim: usize) -> Vec<usize> {
    let n = (bytes.len() / dim).max(1) as f64;
    let mut sum = vec![0u64; dim];
    let mut sq = vec![0u64; dim];
    for row in bytes.chunks_exact(dim) {
        for (c, &v) in row.iter().enumerate() {
            sum[c] += u64::from(v);
            sq[c] += u64::from(v) * u64::from(v);
        }
    }
    let var: Vec<f64> = (0..dim)
        .map(|c| sq[c] as f64 / n - (sum[c] as f64 / n).powi(2))
        .collect();
    order_by_desc(&var)
}

fn variance_order_real(ds: &Dataset) -> Vec<usize> {
    let dim = ds.dim();
    let n = ds.len() as f64;
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for row in ds.rows() {
        for (c, &v) in row.iter().enumerate() {
            sum[c] += v;
            sq[c] += v * v;
        }
    }
    let var: Vec<f64> = (0..dim)
        .map(|c| sq[c] / n - (sum[c] / n).powi(2))
        .collect();
    order_by_desc(&var)
}

fn order_by_desc(var: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..var.len()).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    order
}

/// Counts per bin; the bin of `v` is `floor(v / bin_width)`. Only non-empty
/// bins are listed, in increasing order.
pub fn histogram(report: &SeparationReport, bin_width: f64) -> Result<Vec<(f64, usize)>> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::invalid(format!("bin width must be > 0, got {bin_width}")));
    }
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for r in &report.records {
        *bins.entry((r.distance / bin_width).floor() as i64).or_default() += 1;
    }
    Ok(bins
        .into_iter()
        .map(|(k, c)| (k as f64 * bin_width, c))
        .collect())
}

/// Records at distance `<= threshold`, nearest first.
pub fn flag_outliers(report: &SeparationReport, threshold: f64) -> Result<Vec<SeparationRecord>> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid(format!("threshold must be >= 0, got {threshold}")));
    }
    let mut out: Vec<SeparationRecord> = report
        .records
        .iter()
        .filter(|r| r.distance <= threshold)
        .cloned()
        .collect();
    out.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.query_index.cmp(&b.query_index))
    });
    Ok(out)
}

/// Train-Train separation with the original labels and after replacing
/// every label by a uniform random draw.
pub fn separation_with_random_labels(
    ds: &Dataset,
    metric: Metric,
    seed: u64,
) -> Result<(SeparationReport, SeparationReport)> {
    let original = cross_class_nn(ds, ds, metric, true)?;
    let shuffled = random_relabel(ds, seed)?;
    let randomized = cross_class_nn(&shuffled, &shuffled, metric, true)?;
    Ok((original, randomized))
}

/// Test-Train separation after randomly relabelling both sets. The test set
/// uses the stream one past `seed` so the two labelings are independent.
pub fn test_train_with_random_labels(
    train: &Dataset,
    test: &Dataset,
    metric: Metric,
    seed: u64,
) -> Result<SeparationReport> {
    let train_r = random_relabel(train, seed)?;
    let test_r = random_relabel(test, seed.wrapping_add(1))?;
    cross_class_nn(&test_r, &train_r, metric, false)
}

/// Greedy thinning to an r-separated subset: rows are visited in index
/// order and kept only if every kept row of another class is at distance
/// `>= 2r`.
pub fn prune_to_separation(ds: &Dataset, r: f64, metric: Metric) -> Result<Dataset> {
    if !(r >= 0.0) {
        return Err(Error::invalid(format!("radius must be >= 0, got {r}")));
    }
    let rows: Vec<Vec<f64>> = ds.rows().map(|r| r.into_owned()).collect();
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..ds.len() {
        let ok = kept.iter().all(|&j| {
            ds.label(j) == ds.label(i) || math::dist_unchecked(metric, &rows[i], &rows[j]) >= 2.0 * r
        });
        if ok {
            kept.push(i);
        }
    }
    ds.select(&kept)
}
