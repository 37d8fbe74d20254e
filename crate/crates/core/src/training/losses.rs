//! Per-example training objectives.
//!
//! Each objective is split into a stochastic inner step
//! ([`inner_points`], evaluation mode) and a deterministic loss at frozen
//! inner points ([`frozen_loss`]), so gradients can be checked against
//! finite differences with the inner points held fixed.

use serde::{Deserialize, Serialize};

use crate::attacks::{random_start, sign_ascent, AttackConfig};
use crate::error::{Error, Result};
use crate::math::{dist_unchecked, Metric, RandomStream};
use crate::nn::{cross_entropy, log_softmax, softmax, ForwardTrace, Gradients, Masks, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrainMethod {
    Natural,
    #[serde(rename = "at")]
    Adversarial,
    Trades {
        beta: f64,
    },
    Rst {
        lambda: f64,
    },
    #[serde(rename = "gr")]
    GradReg {
        beta: f64,
        fd_step: f64,
    },
    Llr {
        lambda: f64,
        #[serde(default)]
        mu: f64,
    },
}

impl TrainMethod {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be >= 0, got {v}")))
            }
        };
        match *self {
            TrainMethod::Natural | TrainMethod::Adversarial => Ok(()),
            TrainMethod::Trades { beta } => nonneg("beta", beta),
            TrainMethod::Rst { lambda } => nonneg("lambda", lambda),
            TrainMethod::GradReg { beta, fd_step } => {
                nonneg("beta", beta)?;
                if fd_step > 0.0 && fd_step.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("fd_step must be > 0, got {fd_step}")))
                }
            }
            TrainMethod::Llr { lambda, mu } => {
                nonneg("lambda", lambda)?;
                nonneg("mu", mu)
            }
        }
    }

    /// Short label used in reports, e.g. `trades(beta=6)`.
    pub fn label(&self) -> String {
        match *self {
            TrainMethod::Natural => "natural".into(),
            TrainMethod::Adversarial => "at".into(),
            TrainMethod::Trades { beta } => format!("trades(beta={beta})"),
            TrainMethod::Rst { lambda } => format!("rst(lambda={lambda})"),
            TrainMethod::GradReg { beta, fd_step } => format!("gr(beta={beta};h={fd_step})"),
            TrainMethod::Llr { lambda, mu } => format!("llr(lambda={lambda};mu={mu})"),
        }
    }

    /// True when the penalty weights reduce the objective to natural training.
    fn is_natural(&self) -> bool {
        match *self {
            TrainMethod::Natural => true,
            TrainMethod::Adversarial => false,
            TrainMethod::Trades { beta } => beta == 0.0,
            TrainMethod::Rst { lambda } => lambda == 0.0,
            TrainMethod::GradReg { beta, .. } => beta == 0.0,
            TrainMethod::Llr { lambda, mu } => lambda == 0.0 && mu == 0.0,
        }
    }
}

/// Inner quantities an objective needs, computed at the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum InnerPoint {
    None,
    /// Perturbed input for AT, RST and TRADES.
    Adversarial(Vec<f64>),
    /// Unit finite-difference direction for GR; `None` if the input gradient vanished.
    Direction(Option<Vec<f64>>),
    /// Perturbation `delta` for LLR.
    Delta(Vec<f64>),
}

/// PGD on cross-entropy ranked by loss alone, with the clean point as a
/// candidate so the found loss never falls below the clean loss.
pub fn pgd_max_loss(
    net: &Network,
    x: &[f64],
    y: u32,
    cfg: &AttackConfig,
    rng: &mut RandomStream,
) -> Result<Vec<f64>> {
    let eval = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (z, t) = net.forward_with(p, None)?;
        let (loss, up) = cross_entropy(&z, y);
        Ok((loss, net.input_gradient(&t, &up)?))
    };
    let mut best = Some((eval(x)?.0, x.to_vec()));
    for _ in 0..cfg.restarts.max(1) {
        let start = if cfg.random_start {
            random_start(x, cfg.epsilon, rng)
        } else {
            x.to_vec()
        };
        best = Some(sign_ascent(x, start, cfg.epsilon, cfg.steps, cfg.step_size, eval, best)?);
    }
    Ok(best.expect("clean point is a candidate").1)
}

/// `KL(softmax(p_logits) || softmax(q_logits))`.
pub fn kl_divergence(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum()
}

fn trades_inner(net: &Network, x: &[f64], cfg: &AttackConfig, rng: &mut RandomStream) -> Result<Vec<f64>> {
    let zx = net.logits(x)?;
    let p = softmax(&zx);
    let eval = |pt: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (zq, t) = net.forward_with(pt, None)?;
        let q = softmax(&zq);
        let up: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a - b).collect();
        Ok((kl_divergence(&zx, &zq), net.input_gradient(&t, &up)?))
    };
    // At x itself the KL gradient vanishes, so start from a small jitter.
    let jitter = cfg.epsilon.min(1e-3);
    let start = random_start(x, jitter, rng);
    let best = Some((0.0, x.to_vec()));
    Ok(sign_ascent(x, start, cfg.epsilon, cfg.steps, cfg.step_size, eval, best)?.1)
}

fn gr_direction(net: &Network, x: &[f64], y: u32) -> Result<Option<Vec<f64>>> {
    let (z, t) = net.forward_with(x, None)?;
    let g = net.input_gradient(&t, &cross_entropy(&z, y).1)?;
    let norm = dist_unchecked(Metric::L2, &g, &vec![0.0; g.len()]);
    if norm == 0.0 || !norm.is_finite() {
        return Ok(None);
    }
    Ok(Some(g.into_iter().map(|v| v / norm).collect()))
}

/// Value and input gradient of the local-linearity residual
/// `L(x+d) - L(x) - d . grad L(x)` for fixed `x`.
fn llr_inner(net: &Network, x: &[f64], y: u32, cfg: &AttackConfig, rng: &mut RandomStream) -> Result<Vec<f64>> {
    let (z0, t0) = net.forward_with(x, None)?;
    let (l0, up0) = cross_entropy(&z0, y);
    let g0 = net.input_gradient(&t0, &up0)?;
    let eval = |pt: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (z, t) = net.forward_with(pt, None)?;
        let (l, up) = cross_entropy(&z, y);
        let g = net.input_gradient(&t, &up)?;
        let lin: f64 = pt.iter().zip(x).zip(&g0).map(|((a, b), c)| (a - b) * c).sum();
        let resid = l - l0 - lin;
        let s = if resid >= 0.0 { 1.0 } else { -1.0 };
        let grad = g.iter().zip(&g0).map(|(a, b)| s * (a - b)).collect();
        Ok((resid.abs(), grad))
    };
    let start = if cfg.random_start {
        random_start(x, cfg.epsilon, rng)
    } else {
        x.to_vec()
    };
    let point = sign_ascent(x, start, cfg.epsilon, cfg.steps, cfg.step_size, eval, None)?.1;
    Ok(point.iter().zip(x).map(|(a, b)| a - b).collect())
}

/// Inner maximization / auxiliary quantities for one example, in
/// evaluation mode.
pub fn inner_points(
    net: &Network,
    method: &TrainMethod,
    inner: &AttackConfig,
    x: &[f64],
    y: u32,
    rng: &mut RandomStream,
) -> Result<InnerPoint> {
    if method.is_natural() {
        return Ok(InnerPoint::None);
    }
    match method {
        TrainMethod::Natural => Ok(InnerPoint::None),
        TrainMethod::Adversarial | TrainMethod::Rst { .. } => {
            Ok(InnerPoint::Adversarial(pgd_max_loss(net, x, y, inner, rng)?))
        }
        TrainMethod::Trades { .. } => Ok(InnerPoint::Adversarial(trades_inner(net, x, inner, rng)?)),
        TrainMethod::GradReg { .. } => Ok(InnerPoint::Direction(gr_direction(net, x, y)?)),
        TrainMethod::Llr { .. } => Ok(InnerPoint::Delta(llr_inner(net, x, y, inner, rng)?)),
    }
}

fn ce_at(net: &Network, x: &[f64], y: u32, masks: Option<&Masks>) -> Result<(f64, Vec<f64>, ForwardTrace)> {
    let (z, t) = net.forward_with(x, masks)?;
    let (l, up) = cross_entropy(&z, y);
    Ok((l, up, t))
}

fn missing(what: &str) -> Error {
    Error::invalid(format!("inner point does not match the method ({what})"))
}

/// Finite-difference slope `(f(x + h d) - f(x)) / h`, an estimate of
/// `||grad f(x)||_2` when `d` is the unit gradient direction.
pub fn fd_slope(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], d: &[f64], h: f64) -> Result<f64> {
    let xp: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + h * b).collect();
    Ok((f(&xp)? - f(x)?) / h)
}

/// Loss and parameter gradient for one example with inner points frozen.
/// `masks` are shared by every network evaluation of the example.
pub fn frozen_loss(
    net: &Network,
    method: &TrainMethod,
    x: &[f64],
    y: u32,
    inner: &InnerPoint,
    masks: Option<&Masks>,
) -> Result<(f64, Gradients)> {
    let (l0, up0, t0) = ce_at(net, x, y, masks)?;
    if method.is_natural() {
        let (g, _) = net.backward(&t0, &up0)?;
        return Ok((l0, g));
    }
    match (*method, inner) {
        (TrainMethod::Adversarial, InnerPoint::Adversarial(xa)) => {
            let (la, upa, ta) = ce_at(net, xa, y, masks)?;
            Ok((la, net.backward(&ta, &upa)?.0))
        }
        (TrainMethod::Rst { lambda }, InnerPoint::Adversarial(xa)) => {
            let (la, upa, ta) = ce_at(net, xa, y, masks)?;
            let (mut g, _) = net.backward(&t0, &up0)?;
            g.add_scaled(&net.backward(&ta, &upa)?.0, lambda);
            Ok((l0 + lambda * la, g))
        }
        (TrainMethod::Trades { beta }, InnerPoint::Adversarial(xa)) => {
            let (za, ta) = net.forward_with(xa, masks)?;
            let z0 = t0.logits();
            let lp = log_softmax(z0);
            let lq = log_softmax(&za);
            let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
            let q: Vec<f64> = lq.iter().map(|v| v.exp()).collect();
            let a: Vec<f64> = lp.iter().zip(&lq).map(|(x, y)| x - y).collect();
            let kl: f64 = p.iter().zip(&a).map(|(p, a)| p * a).sum();
            let mean_a: f64 = kl;
            // d KL / d z = p (a - E_p[a]);  d KL / d z' = q - p.
            let mut up_clean = up0.clone();
            for ((u, pi), ai) in up_clean.iter_mut().zip(&p).zip(&a) {
                *u += beta * pi * (ai - mean_a);
            }
            let up_adv: Vec<f64> = q.iter().zip(&p).map(|(q, p)| beta * (q - p)).collect();
            let (mut g, _) = net.backward(&t0, &up_clean)?;
            g.add_scaled(&net.backward(&ta, &up_adv)?.0, 1.0);
            Ok((l0 + beta * kl, g))
        }
        (TrainMethod::GradReg { beta, fd_step }, InnerPoint::Direction(dir)) => {
            let (mut g, _) = net.backward(&t0, &up0)?;
            let Some(d) = dir else {
                return Ok((l0, g));
            };
            let xp: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + fd_step * b).collect();
            let (l1, up1, t1) = ce_at(net, &xp, y, masks)?;
            let s = (l1 - l0) / fd_step;
            let c = 2.0 * beta * s / fd_step;
            let (g1, _) = net.backward(&t1, &up1)?;
            let mut diff = g1;
            diff.add_scaled(&g, -1.0);
            g.add_scaled(&diff, c);
            Ok((l0 + beta * s * s, g))
        }
        (TrainMethod::Llr { lambda, mu }, InnerPoint::Delta(delta)) => {
            let xd: Vec<f64> = x.iter().zip(delta).map(|(a, b)| a + b).collect();
            let (ld, upd, td) = ce_at(net, &xd, y, masks)?;
            // D = delta . grad_x L(x) = (p - e_y) . J delta.
            let tan = net.tangent(&t0, delta)?;
            let zdot = tan.logits();
            let p = softmax(t0.logits());
            let d_val: f64 = up0.iter().zip(zdot).map(|(a, b)| a * b).sum();
            let p_zdot: f64 = p.iter().zip(zdot).map(|(a, b)| a * b).sum();
            let up_d: Vec<f64> = p.iter().zip(zdot).map(|(pi, zi)| pi * zi - pi * p_zdot).collect();
            let mut grad_d = net.backward(&t0, &up_d)?.0;
            grad_d.add_scaled(&net.tangent_backward(&t0, &tan, &up0)?, 1.0);

            let resid = ld - l0 - d_val;
            let sg = if resid >= 0.0 { 1.0 } else { -1.0 };
            let sd = if d_val >= 0.0 { 1.0 } else { -1.0 };
            let (g0, _) = net.backward(&t0, &up0)?;
            let (gd, _) = net.backward(&td, &upd)?;
            let mut g = g0.clone();
            g.add_scaled(&gd, lambda * sg);
            g.add_scaled(&g0, -lambda * sg);
            g.add_scaled(&grad_d, -lambda * sg + mu * sd);
            Ok((l0 + lambda * resid.abs() + mu * d_val.abs(), g))
        }
        (TrainMethod::Adversarial | TrainMethod::Rst { .. } | TrainMethod::Trades { .. }, _) => {
            Err(missing("expected an adversarial point"))
        }
        (TrainMethod::GradReg { .. }, _) => Err(missing("expected a direction")),
        (TrainMethod::Llr { .. }, _) => Err(missing("expected a perturbation")),
        (TrainMethod::Natural, _) => unreachable!("handled above"),
    }
}
