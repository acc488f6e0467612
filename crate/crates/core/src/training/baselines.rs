//! Adversarial-training and stability baselines: Madry PGD training, TRADES
//! and the ReLU-stability (RS) penalty.

use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Tape, Var};
use crate::data::RngStream;
use crate::network::{BoundParams, Layer, Network};
use crate::tensor::Tensor;
use crate::Result;

use super::{ball_bounds, project_into_ball, sign};

/// Supplies differentiable pre-activation bounds for the RS penalty.
pub trait BoundsProvider {
    /// `(lower, upper)` nodes of shape `[batch, width]` for every ReLU layer,
    /// over the ball of radius `epsilon` around each row of `x` clipped to `domain`.
    fn relu_bounds(
        &self,
        tape: &mut Tape,
        net: &Network,
        params: &BoundParams,
        x: &Tensor,
        epsilon: f64,
        domain: [f64; 2],
    ) -> Result<Vec<(Var, Var)>>;
}

/// Interval propagation recorded on the tape in center/radius form.
#[derive(Clone, Copy, Debug, Default)]
pub struct TapeIbp;

impl BoundsProvider for TapeIbp {
    fn relu_bounds(
        &self,
        tape: &mut Tape,
        net: &Network,
        params: &BoundParams,
        x: &Tensor,
        epsilon: f64,
        domain: [f64; 2],
    ) -> Result<Vec<(Var, Var)>> {
        let (lo, hi) = ball_bounds(x, epsilon, domain);
        let center = lo.data().iter().zip(hi.data()).map(|(a, b)| 0.5 * (a + b)).collect();
        let radius = lo.data().iter().zip(hi.data()).map(|(a, b)| 0.5 * (b - a)).collect();
        let shape = x.shape().to_vec();
        let mut mid = tape.constant(Tensor::new(shape.clone(), center)?)?;
        let mut rad = tape.constant(Tensor::new(shape, radius)?)?;
        let last_relu = net.layers().iter().rposition(|l| matches!(l, Layer::Relu)).unwrap_or(0);
        let mut out = Vec::new();
        for (i, layer) in net.layers().iter().enumerate().take(last_relu + 1) {
            match layer {
                Layer::Affine(_) => {
                    let (w, b) = params.layer(i).expect("affine params");
                    mid = tape.linear(mid, w, b)?;
                    let aw = tape.abs(w)?;
                    rad = tape.matmul_t(rad, aw)?;
                }
                Layer::Conv2d(_) => {
                    let (k, b) = params.layer(i).expect("conv params");
                    let g = net.conv_geometry(i).expect("conv geometry");
                    mid = tape.conv2d(mid, k, Some(b), g)?;
                    let ak = tape.abs(k)?;
                    rad = tape.conv2d(rad, ak, None, g)?;
                }
                Layer::Relu => {
                    let l = tape.sub(mid, rad)?;
                    let u = tape.add(mid, rad)?;
                    out.push((l, u));
                    let (lp, up) = (tape.relu(l)?, tape.relu(u)?);
                    let s = tape.add(lp, up)?;
                    let d = tape.sub(up, lp)?;
                    mid = tape.scale(s, 0.5)?;
                    rad = tape.scale(d, 0.5)?;
                }
                Layer::Flatten => {}
            }
        }
        Ok(out)
    }
}

/// Batch mean of `sum over neurons of -tanh(1 + l * u)`.
pub fn rs_penalty(tape: &mut Tape, bounds: &[(Var, Var)], batch: usize) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &(l, u) in bounds {
        let lu = tape.mul(l, u)?;
        let shifted = tape.add_scalar(lu, 1.0)?;
        let t = tape.tanh(shifted)?;
        let s = tape.sum(t)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    match total {
        Some(t) => tape.scale(t, -1.0 / batch as f64),
        None => {
            let zero = tape.constant(Tensor::zeros(&[1, 1]))?;
            Ok(zero)
        }
    }
}

/// TRADES inner maximization: start at `x + 0.001 N(0, 1)` and take `k`
/// projected sign steps ascending `KL(f(x) || f(x'))`.
#[allow(clippy::too_many_arguments)]
pub fn trades_adversary(
    net: &Network,
    x: &Tensor,
    epsilon: f64,
    k: usize,
    step_size: f64,
    domain: [f64; 2],
    rng: &RngStream,
) -> Result<Tensor> {
    let mut gen = rng.rng();
    let mut xp = x.clone();
    for v in xp.data_mut() {
        let n: f64 = StandardNormal.sample(&mut gen);
        *v += 0.001 * n;
    }
    project_into_ball(&mut xp, x, epsilon, domain);
    if epsilon == 0.0 || k == 0 {
        return Ok(xp);
    }
    let clean_logits = net.logits_batch(x)?;
    for _ in 0..k {
        let mut tape = Tape::new();
        let params = net.bind(&mut tape, false)?;
        let p = tape.constant(clean_logits.clone())?;
        let xv = tape.var(xp.clone())?;
        let q = net.forward_tape(&mut tape, &params, xv)?.logits;
        let kl = tape.kl_softmax(p, q)?;
        let root = tape.sum(kl)?;
        let g = tape.backward(root)?.wrt(xv);
        for (v, gi) in xp.data_mut().iter_mut().zip(g.data()) {
            *v += step_size * sign(*gi);
        }
        project_into_ball(&mut xp, x, epsilon, domain);
    }
    Ok(xp)
}
