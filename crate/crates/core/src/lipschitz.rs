//! Empirical local Lipschitz constant
//! `max_{x' in B_inf(x, eps)} ||f(x) - f(x')||_1 / ||x - x'||_inf`
//! of evaluation-mode logits, found by projected signed ascent.
//!
//! Each step moves along `sign(J(x')^T sign(f(x') - f(x)))`, the ascent
//! direction of the numerator; since the denominator is at most `eps`
//! inside the ball, driving the numerator up pushes iterates towards the
//! boundary where the ratio is largest for near-linear pieces. The best
//! ratio over all iterates, including the start, is reported.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dims, Error, Result};
use crate::math::{clip_in_place, dist_unchecked, project_ball_in_place, Metric, RandomStream};
use crate::nn::Network;

const MAX_REDRAWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl LipschitzConfig {
    /// 10 steps of size `epsilon / 5`.
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            steps: 10,
            step_size: epsilon / 5.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.step_size >= 0.0) {
            return Err(Error::invalid("step size must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub per_example: Vec<f64>,
    pub mean: f64,
}

fn draw_start(x: &[f64], eps: f64, rng: &mut RandomStream) -> Result<Vec<f64>> {
    for _ in 0..MAX_REDRAWS {
        let p: Vec<f64> = x
            .iter()
            .map(|&v| (v + rng.uniform(-eps, eps)).clamp(0.0, 1.0))
            .collect();
        if p != x {
            return Ok(p);
        }
    }
    Err(Error::invalid("could not draw a starting point distinct from x"))
}

fn ratio(fx: &[f64], fp: &[f64], x: &[f64], p: &[f64]) -> f64 {
    let num: f64 = fx.iter().zip(fp).map(|(a, b)| (a - b).abs()).sum();
    num / dist_unchecked(Metric::Linf, x, p)
}

pub fn local_lipschitz_at(net: &Network, x: &[f64], cfg: &LipschitzConfig) -> Result<f64> {
    local_lipschitz_with_rng(net, x, cfg, &mut RandomStream::new(cfg.seed))
}

pub fn local_lipschitz_with_rng(
    net: &Network,
    x: &[f64],
    cfg: &LipschitzConfig,
    rng: &mut RandomStream,
) -> Result<f64> {
    cfg.validate()?;
    check_dims(net.input_dim(), x.len())?;
    let fx = net.logits(x)?;
    let mut cur = draw_start(x, cfg.epsilon, rng)?;
    let mut best = 0.0f64;
    for s in 0..=cfg.steps {
        let (fp, trace) = net.forward_with(&cur, None)?;
        best = best.max(ratio(&fx, &fp, x, &cur));
        if s == cfg.steps {
            break;
        }
        let up: Vec<f64> = fp
            .iter()
            .zip(&fx)
            .map(|(a, b)| if a > b { 1.0 } else if a < b { -1.0 } else { 0.0 })
            .collect();
        let g = net.input_gradient(&trace, &up)?;
        for (v, gi) in cur.iter_mut().zip(&g) {
            if *gi > 0.0 {
                *v += cfg.step_size;
            } else if *gi < 0.0 {
                *v -= cfg.step_size;
            }
        }
        project_ball_in_place(&mut cur, x, cfg.epsilon, Metric::Linf);
        clip_in_place(&mut cur, 0.0, 1.0);
        if cur == x {
            cur = draw_start(x, cfg.epsilon, rng)?;
        }
    }
    Ok(best)
}

/// Mean local estimate over a dataset; example `i` uses stream `i`.
pub fn empirical_lipschitz(net: &Network, ds: &Dataset, cfg: &LipschitzConfig) -> Result<LipschitzEstimate> {
    check_dims(net.input_dim(), ds.dim())?;
    let per_example: Vec<f64> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomStream::derive(cfg.seed, i as u64);
            local_lipschitz_with_rng(net, &ds.row(i), cfg, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mean = per_example.iter().sum::<f64>() / per_example.len() as f64;
    Ok(LipschitzEstimate { per_example, mean })
}

/// Upper bound on the ratio from layer norms: the product of the Linf
/// operator norms of the hidden layers times the entrywise absolute sum of
/// the output layer (the Linf-to-L1 bound).
pub fn global_lipschitz_bound(net: &Network) -> f64 {
    let layers = net.layers();
    let (last, hidden) = layers.split_last().expect("at least one layer");
    let hidden_norm: f64 = hidden
        .iter()
        .map(|l| {
            l.weights
                .chunks_exact(l.in_dim())
                .map(|row| row.iter().map(|w| w.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .product();
    hidden_norm * last.weights.iter().map(|w| w.abs()).sum::<f64>()
}
