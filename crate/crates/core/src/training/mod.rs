//! Mini-batch SGD with momentum and step decay over the six objectives, and
//! the clean/adversarial/Lipschitz evaluation protocol.

mod losses;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use losses::{fd_slope, frozen_loss, inner_points, kl_divergence, pgd_max_loss, InnerPoint, TrainMethod};

use crate::attacks::{adv_accuracy, clean_accuracy, AttackConfig, AttackKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lipschitz::{empirical_lipschitz, LipschitzConfig};
use crate::math::RandomStream;
use crate::nn::{init_network, mlp_specs, Gradients, Network};

/// Examples per parallel work unit. Fixed so the reduction order does not
/// depend on the number of threads.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: TrainMethod,
    /// Inner maximization for AT, TRADES, RST and LLR.
    pub inner: AttackConfig,
    /// Hidden ReLU layer widths.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Append the test set to the training pool.
    pub include_test_in_train: bool,
}

impl TrainConfig {
    /// Toy-scale defaults: 200 epochs, decay x0.1 at 50% and 75%.
    pub fn new(method: TrainMethod, epsilon: f64) -> Self {
        Self {
            method,
            inner: AttackConfig {
                random_start: true,
                ..AttackConfig::pgd(epsilon)
            },
            hidden: vec![64, 64],
            epochs: 200,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            decay_epochs: vec![100, 150],
            decay_factor: 0.1,
            dropout_rate: 0.0,
            seed: 0,
            include_test_in_train: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        self.inner.validate()?;
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("decay_epochs must be strictly increasing"));
        }
        if !(self.decay_factor > 0.0) {
            return Err(Error::invalid("decay_factor must be > 0"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.decay_factor.powi(k as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training objective over the epoch.
    pub loss: f64,
    /// Clean accuracy on the training pool at the end of the epoch.
    pub train_acc: f64,
}

fn stream_key(seed: u64, epoch: usize, purpose: u64) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ purpose.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// Objective and gradient summed over `batch`, computed in fixed-size
/// parallel chunks and reduced in order.
fn batch_objective(
    net: &Network,
    cfg: &TrainConfig,
    pool: &Dataset,
    batch: &[usize],
    epoch: usize,
) -> Result<(f64, Gradients)> {
    let partials: Vec<(f64, Gradients)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(f64, Gradients)> {
            let mut loss = 0.0;
            let mut grads = Gradients::zeros(net);
            for &i in chunk {
                let x = pool.row(i);
                let y = pool.label(i);
                let mut inner_rng = RandomStream::derive(stream_key(cfg.seed, epoch, 1), i as u64);
                let mut mask_rng = RandomStream::derive(stream_key(cfg.seed, epoch, 2), i as u64);
                let masks = (net.dropout() > 0.0).then(|| net.sample_masks(&mut mask_rng));
                let ip = inner_points(net, &cfg.method, &cfg.inner, &x, y, &mut inner_rng)?;
                let (l, g) = frozen_loss(net, &cfg.method, &x, y, &ip, masks.as_ref())?;
                loss += l;
                grads.add_scaled(&g, 1.0);
            }
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grads = Gradients::zeros(net);
    for (l, g) in &partials {
        loss += l;
        grads.add_scaled(g, 1.0);
    }
    Ok((loss, grads))
}

/// Trains a fresh network; returns it with per-epoch history.
pub fn train(cfg: &TrainConfig, train_ds: &Dataset, test_ds: &Dataset) -> Result<(Network, Vec<EpochRecord>)> {
    cfg.validate()?;
    if train_ds.dim() != test_ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: train_ds.dim(),
            found: test_ds.dim(),
        });
    }
    let pool = if cfg.include_test_in_train {
        train_ds.concat(test_ds)?
    } else {
        train_ds.clone()
    };
    let classes = pool.class_count().max(test_ds.class_count()) as usize;
    let mut net = init_network(&mlp_specs(&cfg.hidden, classes), pool.dim(), cfg.seed)?
        .with_dropout(cfg.dropout_rate)?;
    let mut velocity = Gradients::zeros(&net);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        RandomStream::derive(stream_key(cfg.seed, epoch, 0), 0).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, mut g) = batch_objective(&net, cfg, &pool, batch, epoch)?;
            let scale = 1.0 / batch.len() as f64;
            g.scale(scale);
            let mean = loss * scale;
            if !mean.is_finite() || !g.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged: loss {mean} at epoch {epoch}, batch {b} (lr {lr})"
                )));
            }
            epoch_loss += loss;
            velocity.scale(cfg.momentum);
            velocity.add_scaled(&g, 1.0);
            net.modify(|layers| {
                for (layer, v) in layers.iter_mut().zip(&velocity.layers) {
                    for (w, d) in layer.weights.iter_mut().zip(&v.weights) {
                        *w -= lr * d;
                    }
                    for (w, d) in layer.biases.iter_mut().zip(&v.biases) {
                        *w -= lr * d;
                    }
                }
            })
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
        }
        history.push(EpochRecord {
            epoch,
            lr,
            loss: epoch_loss / pool.len() as f64,
            train_acc: clean_accuracy(&net, &pool)?,
        });
    }
    Ok((net, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub train_acc: f64,
    pub test_acc: f64,
    pub adv_train_acc: f64,
    pub adv_test_acc: f64,
    pub test_lipschitz: f64,
    /// `train_acc - test_acc`
    pub gap: f64,
    /// `adv_train_acc - adv_test_acc`
    pub adv_gap: f64,
}

/// Clean and adversarial accuracy on both sets, their gaps, and the
/// empirical Lipschitz constant on the test set.
pub fn evaluate(
    net: &Network,
    train_ds: &Dataset,
    test_ds: &Dataset,
    attack: &AttackConfig,
    kind: AttackKind,
    lip: &LipschitzConfig,
) -> Result<ExperimentReport> {
    let train_acc = clean_accuracy(net, train_ds)?;
    let test_acc = clean_accuracy(net, test_ds)?;
    let adv_train_acc = adv_accuracy(net, train_ds, attack, kind)?;
    let adv_test_acc = adv_accuracy(net, test_ds, attack, kind)?;
    let test_lipschitz = empirical_lipschitz(net, test_ds, lip)?.mean;
    Ok(ExperimentReport {
        train_acc,
        test_acc,
        adv_train_acc,
        adv_test_acc,
        test_lipschitz,
        gap: train_acc - test_acc,
        adv_gap: adv_train_acc - adv_test_acc,
    })
}
