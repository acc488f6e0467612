//! Losses, inner adversaries and the phased training loop.

mod baselines;
mod config;
mod gamma;
mod fit;
mod nbc;
mod pgd;

use rand::Rng;
use serde::Serialize;

use crate::autograd::{Tape, Var};
use crate::data::RngStream;
use crate::network::{BoundParams, Network, TapeTrace};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub use baselines::{rs_penalty, trades_adversary, BoundsProvider, TapeIbp};
pub use config::{GammaScheme, LossKind, Phase, TrainConfig};
pub use gamma::{gamma_factors, GammaFactors};
pub use fit::{accuracy, predict, read_history_csv, train, write_history_csv, HistoryRow};
pub use nbc::{find_adversary_nbc, nbc_loss, nbc_score, nbc_score_tape, nbc_scores, net_gamma};
pub use pgd::{pgd_accuracy, pgd_attack, pgd_from, PgdSettings};

/// Batch-mean loss and its parts. For every kind,
/// `total = ce + trades_lambda * kl + rs_weight * regularizer - beta * nbc_score`
/// with unused parts equal to zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossValue {
    pub total: f64,
    pub ce: f64,
    pub nbc_score: f64,
    pub kl: f64,
    pub regularizer: f64,
}

#[inline]
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Elementwise `[max(x - eps, lo), min(x + eps, hi)]`.
pub fn ball_bounds(x: &Tensor, epsilon: f64, domain: [f64; 2]) -> (Tensor, Tensor) {
    let lo = x.map(|v| (v - epsilon).max(domain[0]).min(v.max(domain[0])));
    let hi = x.map(|v| (v + epsilon).min(domain[1]).max(v.min(domain[1])));
    (lo, hi)
}

/// Clamps `xp` into the ball around `x` intersected with the domain.
pub fn project_into_ball(xp: &mut Tensor, x: &Tensor, epsilon: f64, domain: [f64; 2]) {
    for (p, &c) in xp.data_mut().iter_mut().zip(x.data()) {
        let lo = (c - epsilon).max(domain[0]).min(c.max(domain[0]));
        let hi = (c + epsilon).min(domain[1]).max(c.min(domain[1]));
        *p = p.clamp(lo, hi);
    }
}

/// A uniform sample from the ball around each row of `x`, clipped to the domain.
pub fn uniform_in_ball(x: &Tensor, epsilon: f64, domain: [f64; 2], rng: &mut impl Rng) -> Tensor {
    let (lo, hi) = ball_bounds(x, epsilon, domain);
    let mut out = lo.clone();
    for (v, &h) in out.data_mut().iter_mut().zip(hi.data()) {
        if h > *v {
            *v += rng.random::<f64>() * (h - *v);
        }
    }
    out
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0]
}

/// Records the loss of `kind` for one batch on `tape` and returns the scalar
/// root with its decomposition. Inner adversaries run against the current
/// parameter values; their outputs enter the tape as constants.
#[allow(clippy::too_many_arguments)]
pub fn build_loss(
    tape: &mut Tape,
    net: &Network,
    params: &BoundParams,
    x: &Tensor,
    labels: &[usize],
    kind: LossKind,
    beta: f64,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<(Var, LossValue)> {
    build_loss_with(tape, net, params, x, labels, kind, beta, cfg, rng, Some(&TapeIbp))
}

/// [`build_loss`] with an explicit bounds provider for the RS penalty.
#[allow(clippy::too_many_arguments)]
pub fn build_loss_with(
    tape: &mut Tape,
    net: &Network,
    params: &BoundParams,
    x: &Tensor,
    labels: &[usize],
    kind: LossKind,
    beta: f64,
    cfg: &TrainConfig,
    rng: &RngStream,
    bounds: Option<&dyn BoundsProvider>,
) -> Result<(Var, LossValue)> {
    let batch = x.rows();
    let xv = tape.constant(x.clone())?;
    let mut clean: Option<TapeTrace> = None;
    let mut value = LossValue::default();
    let domain = cfg.domain;

    let mut total = match kind.base() {
        LossKind::Madry => {
            let adv = pgd_attack(net, x, labels, cfg.epsilon, cfg.k, cfg.attack_step(), domain, &rng.derive("madry"), 1)?;
            let av = tape.constant(adv)?;
            let trace = net.forward_tape(tape, params, av)?;
            let ce = tape.softmax_ce(trace.logits, labels)?;
            let ce = tape.mean(ce)?;
            value.ce = scalar(tape, ce);
            ce
        }
        base => {
            let trace = net.forward_tape(tape, params, xv)?;
            let ce = tape.softmax_ce(trace.logits, labels)?;
            let ce = tape.mean(ce)?;
            value.ce = scalar(tape, ce);
            let mut total = ce;
            match base {
                LossKind::Trades if cfg.trades_lambda != 0.0 => {
                    let xp = trades_adversary(net, x, cfg.epsilon, cfg.k, cfg.attack_step(), domain, &rng.derive("trades"))?;
                    let pv = tape.constant(xp)?;
                    let pert = net.forward_tape(tape, params, pv)?;
                    let kl = tape.kl_softmax(trace.logits, pert.logits)?;
                    let kl = tape.mean(kl)?;
                    value.kl = scalar(tape, kl);
                    let term = tape.scale(kl, cfg.trades_lambda)?;
                    total = tape.add(total, term)?;
                }
                LossKind::Rs => {
                    let provider = bounds.ok_or_else(|| Error::Config("rs loss needs a bounds provider".into()))?;
                    let b = provider.relu_bounds(tape, net, params, x, cfg.epsilon, domain)?;
                    let reg = rs_penalty(tape, &b, batch)?;
                    value.regularizer = scalar(tape, reg);
                    let term = tape.scale(reg, cfg.rs_weight)?;
                    total = tape.add(total, term)?;
                }
                _ => {}
            }
            clean = Some(trace);
            total
        }
    };

    if kind.uses_nbc() && beta != 0.0 {
        let gamma = net_gamma(net, cfg)?;
        let clean = match clean {
            Some(t) => t,
            None => net.forward_tape(tape, params, xv)?,
        };
        let xp = find_adversary_nbc(net, x, cfg.epsilon, cfg.k, cfg.alpha(), domain, &gamma, &rng.derive("nbc"))?;
        let pv = tape.constant(xp)?;
        let pert = net.forward_tape(tape, params, pv)?;
        let s = nbc_score_tape(tape, &clean, &pert, &gamma)?;
        let s = tape.mean(s)?;
        value.nbc_score = scalar(tape, s);
        let term = tape.scale(s, -beta)?;
        total = tape.add(total, term)?;
    }
    value.total = scalar(tape, total);
    Ok((total, value))
}

#[cfg(test)]
mod tests;
