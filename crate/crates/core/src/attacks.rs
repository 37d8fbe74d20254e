//! Linf PGD and multi-targeted attacks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dims, Error, Result};
use crate::math::{clip_in_place, project_ball_in_place, Metric, RandomStream};
use crate::nn::{cross_entropy, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
    /// Independent runs; each run re-draws its random start.
    pub restarts: usize,
    pub seed: u64,
}

impl AttackConfig {
    /// 10 steps of size `epsilon / 5`, no random start.
    pub fn pgd(epsilon: f64) -> Self {
        Self {
            epsilon,
            steps: 10,
            step_size: epsilon / 5.0,
            random_start: false,
            restarts: 1,
            seed: 0,
        }
    }

    /// 20 steps of size `2 epsilon / 20` per target, random start.
    pub fn multi_targeted(epsilon: f64) -> Self {
        Self {
            epsilon,
            steps: 20,
            step_size: 2.0 * epsilon / 20.0,
            random_start: true,
            restarts: 1,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("attack needs at least one step"));
        }
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid(format!("step size must be >= 0, got {}", self.step_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Pgd,
    Mt,
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgd" => Ok(AttackKind::Pgd),
            "mt" | "multi-targeted" => Ok(AttackKind::Mt),
            other => Err(Error::invalid(format!("unknown attack `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub adversarial_point: Vec<f64>,
    pub success: bool,
    /// Objective at the returned point: cross-entropy for PGD, the logit
    /// margin `z_t - z_y` for the multi-targeted attack.
    pub loss_achieved: f64,
}

/// True when logit `y` (1-based) strictly exceeds every other logit.
pub fn correctly_classified(logits: &[f64], y: u32) -> bool {
    let k = (y - 1) as usize;
    logits
        .iter()
        .enumerate()
        .all(|(i, &v)| i == k || logits[k] > v)
}

/// Projected signed ascent inside `B_inf(x, eps)` intersected with `[0, 1]^d`.
///
/// `eval` returns a ranking key and the input gradient of the objective.
/// Every iterate including `start` is ranked; the best one (first on ties)
/// is returned unless `incumbent` is at least as good.
pub(crate) fn sign_ascent<K: PartialOrd + Copy>(
    x: &[f64],
    start: Vec<f64>,
    epsilon: f64,
    steps: usize,
    step_size: f64,
    mut eval: impl FnMut(&[f64]) -> Result<(K, Vec<f64>)>,
    incumbent: Option<(K, Vec<f64>)>,
) -> Result<(K, Vec<f64>)> {
    let mut best = incumbent;
    let mut cur = start;
    for s in 0..=steps {
        let (key, grad) = eval(&cur)?;
        if best.as_ref().is_none_or(|(b, _)| key > *b) {
            best = Some((key, cur.clone()));
        }
        if s == steps {
            break;
        }
        for (v, g) in cur.iter_mut().zip(&grad) {
            if *g > 0.0 {
                *v += step_size;
            } else if *g < 0.0 {
                *v -= step_size;
            }
        }
        project_ball_in_place(&mut cur, x, epsilon, Metric::Linf);
        clip_in_place(&mut cur, 0.0, 1.0);
    }
    Ok(best.expect("at least one iterate"))
}

/// Uniform draw from the Linf ball around `x`, clipped to the unit box.
pub(crate) fn random_start(x: &[f64], epsilon: f64, rng: &mut RandomStream) -> Vec<f64> {
    x.iter()
        .map(|&v| (v + rng.uniform(-epsilon, epsilon)).clamp(0.0, 1.0))
        .collect()
}

fn check_input(net: &Network, x: &[f64], y: u32, cfg: &AttackConfig) -> Result<()> {
    cfg.validate()?;
    check_dims(net.input_dim(), x.len())?;
    if y == 0 || y as usize > net.class_count() {
        return Err(Error::invalid(format!("label {y} outside 1..={}", net.class_count())));
    }
    Ok(())
}

pub fn pgd(net: &Network, x: &[f64], y: u32, cfg: &AttackConfig) -> Result<AttackOutcome> {
    pgd_with_rng(net, x, y, cfg, &mut RandomStream::new(cfg.seed))
}

/// Maximizes cross-entropy; iterates are ranked by (misclassified, loss),
/// and the clean point is always a candidate.
pub fn pgd_with_rng(
    net: &Network,
    x: &[f64],
    y: u32,
    cfg: &AttackConfig,
    rng: &mut RandomStream,
) -> Result<AttackOutcome> {
    check_input(net, x, y, cfg)?;
    let eval = |p: &[f64]| -> Result<((bool, f64), Vec<f64>)> {
        let (z, trace) = net.forward_with(p, None)?;
        let (loss, up) = cross_entropy(&z, y);
        let g = net.input_gradient(&trace, &up)?;
        Ok(((!correctly_classified(&z, y), loss), g))
    };
    let (clean_key, _) = eval(x)?;
    let mut best = Some((clean_key, x.to_vec()));
    for _ in 0..cfg.restarts.max(1) {
        let start = if cfg.random_start {
            random_start(x, cfg.epsilon, rng)
        } else {
            x.to_vec()
        };
        best = Some(sign_ascent(x, start, cfg.epsilon, cfg.steps, cfg.step_size, eval, best)?);
    }
    let ((success, loss), point) = best.expect("clean point is a candidate");
    Ok(AttackOutcome {
        adversarial_point: point,
        success,
        loss_achieved: loss,
    })
}

pub fn multi_targeted(net: &Network, x: &[f64], y: u32, cfg: &AttackConfig) -> Result<AttackOutcome> {
    multi_targeted_with_rng(net, x, y, cfg, &mut RandomStream::new(cfg.seed))
}

/// For each target `t != y` in increasing order, maximizes `z_t - z_y`;
/// returns the first flipping point, else the largest margin found.
pub fn multi_targeted_with_rng(
    net: &Network,
    x: &[f64],
    y: u32,
    cfg: &AttackConfig,
    rng: &mut RandomStream,
) -> Result<AttackOutcome> {
    check_input(net, x, y, cfg)?;
    let c = net.class_count();
    if c < 2 {
        return Err(Error::invalid("multi-targeted attack needs at least two classes"));
    }
    let k = (y - 1) as usize;
    let mut overall: Option<((bool, f64), Vec<f64>)> = None;
    for t in (0..c).filter(|&t| t != k) {
        let eval = |p: &[f64]| -> Result<((bool, f64), Vec<f64>)> {
            let (z, trace) = net.forward_with(p, None)?;
            let mut up = vec![0.0; c];
            up[t] = 1.0;
            up[k] = -1.0;
            let g = net.input_gradient(&trace, &up)?;
            Ok(((!correctly_classified(&z, y), z[t] - z[k]), g))
        };
        let mut best = None;
        for _ in 0..cfg.restarts.max(1) {
            let start = if cfg.random_start {
                random_start(x, cfg.epsilon, rng)
            } else {
                x.to_vec()
            };
            best = Some(sign_ascent(x, start, cfg.epsilon, cfg.steps, cfg.step_size, eval, best)?);
        }
        let found = best.expect("at least one run");
        let flipped = found.0 .0;
        if overall.as_ref().is_none_or(|(b, _)| found.0 > *b) {
            overall = Some(found);
        }
        if flipped {
            break;
        }
    }
    let ((success, margin), point) = overall.expect("at least one target");
    Ok(AttackOutcome {
        adversarial_point: point,
        success,
        loss_achieved: margin,
    })
}

fn run_attack(
    net: &Network,
    x: &[f64],
    y: u32,
    cfg: &AttackConfig,
    kind: AttackKind,
    index: usize,
) -> Result<AttackOutcome> {
    let mut rng = RandomStream::derive(cfg.seed, index as u64);
    match kind {
        AttackKind::Pgd => pgd_with_rng(net, x, y, cfg, &mut rng),
        AttackKind::Mt => multi_targeted_with_rng(net, x, y, cfg, &mut rng),
    }
}

/// Attacks every example; example `i` uses stream `i` of `cfg.seed`.
pub fn attack_dataset(
    net: &Network,
    ds: &Dataset,
    cfg: &AttackConfig,
    kind: AttackKind,
) -> Result<Vec<AttackOutcome>> {
    check_dims(net.input_dim(), ds.dim())?;
    (0..ds.len())
        .into_par_iter()
        .map(|i| run_attack(net, &ds.row(i), ds.label(i), cfg, kind, i))
        .collect()
}

/// Fraction of examples that are classified correctly and survive the attack.
pub fn adv_accuracy(net: &Network, ds: &Dataset, cfg: &AttackConfig, kind: AttackKind) -> Result<f64> {
    check_dims(net.input_dim(), ds.dim())?;
    cfg.validate()?;
    let robust: Vec<bool> = (0..ds.len())
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let x = ds.row(i);
            let y = ds.label(i);
            if !correctly_classified(&net.logits(&x)?, y) {
                return Ok(false);
            }
            Ok(!run_attack(net, &x, y, cfg, kind, i)?.success)
        })
        .collect::<Result<_>>()?;
    Ok(robust.iter().filter(|&&r| r).count() as f64 / ds.len() as f64)
}

/// Plain accuracy of evaluation-mode predictions (ties count as errors).
pub fn clean_accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    check_dims(net.input_dim(), ds.dim())?;
    let correct: Vec<bool> = (0..ds.len())
        .into_par_iter()
        .map(|i| Ok(correctly_classified(&net.logits(&ds.row(i))?, ds.label(i))))
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / ds.len() as f64)
}
