//! The neuron-behavior-consistency score, its inner adversary and the
//! regularized loss.

use crate::autograd::{Tape, Var};
use crate::data::RngStream;
use crate::network::{Network, TapeTrace};
use crate::tensor::Tensor;
use crate::Result;

use super::{gamma_factors, project_into_ball, uniform_in_ball, GammaFactors, LossKind, LossValue, TrainConfig};

/// Per-sample consistency scores `[batch, 1]` between two recorded forward passes.
pub fn nbc_score_tape(tape: &mut Tape, clean: &TapeTrace, perturbed: &TapeTrace, gamma: &GammaFactors) -> Result<Var> {
    assert_eq!(clean.relu_pre.len(), gamma.factors.len(), "one gamma factor per ReLU layer");
    let mut total: Option<Var> = None;
    for ((&a, &b), &g) in clean.relu_pre.iter().zip(&perturbed.relu_pre).zip(&gamma.factors) {
        let cos = tape.row_cosine(a, b)?;
        let term = tape.scale(cos, 1.0 / g)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let kl = tape.kl_softmax(clean.logits, perturbed.logits)?;
    match total {
        Some(t) => tape.sub(t, kl),
        None => tape.scale(kl, -1.0),
    }
}

/// Consistency score of every row pair of `x` and `x_prime`, `[batch]` values.
pub fn nbc_scores(net: &Network, x: &Tensor, x_prime: &Tensor, gamma: &GammaFactors) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, false)?;
    let xv = tape.constant(x.clone())?;
    let xpv = tape.constant(x_prime.clone())?;
    let clean = net.forward_tape(&mut tape, &params, xv)?;
    let pert = net.forward_tape(&mut tape, &params, xpv)?;
    let s = nbc_score_tape(&mut tape, &clean, &pert, gamma)?;
    Ok(tape.value(s).data().to_vec())
}

/// Consistency score of a single pair of inputs.
pub fn nbc_score(net: &Network, x: &Tensor, x_prime: &Tensor, gamma: &GammaFactors) -> Result<f64> {
    let row = |t: &Tensor| t.clone().reshape(vec![1, t.len()]);
    Ok(nbc_scores(net, &row(x)?, &row(x_prime)?, gamma)?[0])
}

/// Inner adversary: a uniform random start in the ball, then `k` raw-gradient
/// descent steps on the score, each projected back into the ball and domain.
pub fn find_adversary_nbc(
    net: &Network,
    x: &Tensor,
    epsilon: f64,
    k: usize,
    alpha: f64,
    domain: [f64; 2],
    gamma: &GammaFactors,
    rng: &RngStream,
) -> Result<Tensor> {
    let mut xp = uniform_in_ball(x, epsilon, domain, &mut rng.rng());
    if k == 0 || epsilon == 0.0 {
        return Ok(xp);
    }
    // The clean pass does not depend on x', so it is evaluated once.
    let outputs = net.forward_batch(x)?;
    let relu_idx: Vec<usize> = net
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, crate::Layer::Relu))
        .map(|(i, _)| i)
        .collect();
    for _ in 0..k {
        let mut tape = Tape::new();
        let params = net.bind(&mut tape, false)?;
        let relu_pre = relu_idx
            .iter()
            .map(|&i| tape.constant(outputs[i - 1].clone()))
            .collect::<Result<Vec<_>>>()?;
        let logits = tape.constant(outputs.last().expect("logits").clone())?;
        let clean = TapeTrace { relu_pre, logits };
        let xv = tape.var(xp.clone())?;
        let pert = net.forward_tape(&mut tape, &params, xv)?;
        let s = nbc_score_tape(&mut tape, &clean, &pert, gamma)?;
        let root = tape.sum(s)?;
        let g = tape.backward(root)?.wrt(xv);
        for (v, gi) in xp.data_mut().iter_mut().zip(g.data()) {
            *v -= alpha * gi;
        }
        project_into_ball(&mut xp, x, epsilon, domain);
    }
    Ok(xp)
}

/// Evaluates `CE(f(x), y) - beta * NBC(x, x')` with `x'` from the inner adversary.
pub fn nbc_loss(net: &Network, x: &Tensor, labels: &[usize], cfg: &TrainConfig, beta: f64, rng: &RngStream) -> Result<LossValue> {
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, false)?;
    let (_, value) = super::build_loss(&mut tape, net, &params, x, labels, LossKind::Nbc, beta, cfg, rng)?;
    Ok(value)
}

/// Gamma factors for `net` under the configured scheme.
pub fn net_gamma(net: &Network, cfg: &TrainConfig) -> Result<GammaFactors> {
    gamma_factors(&net.hidden_layer_sizes(), cfg.gamma)
}
