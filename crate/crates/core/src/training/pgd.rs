//! Projected sign-gradient attack on the cross-entropy.

use crate::autograd::Tape;
use crate::data::{Dataset, RngStream};
use crate::network::Network;
use crate::tensor::Tensor;
use crate::Result;

use super::{argmax, project_into_ball, sign, uniform_in_ball};

fn ce_and_grad(net: &Network, x: &Tensor, labels: &[usize]) -> Result<(Vec<f64>, Tensor)> {
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, false)?;
    let xv = tape.var(x.clone())?;
    let trace = net.forward_tape(&mut tape, &params, xv)?;
    let ce = tape.softmax_ce(trace.logits, labels)?;
    let root = tape.sum(ce)?;
    let g = tape.backward(root)?.wrt(xv);
    Ok((tape.value(ce).data().to_vec(), g))
}

/// Batched PGD. Restart 0 starts at `x`, later restarts at uniform random
/// points of the ball. Returns, per row, the visited iterate with the highest
/// cross-entropy.
#[allow(clippy::too_many_arguments)]
pub fn pgd_attack(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    epsilon: f64,
    steps: usize,
    step_size: f64,
    domain: [f64; 2],
    rng: &RngStream,
    restarts: usize,
) -> Result<Tensor> {
    if epsilon == 0.0 {
        let mut same = x.clone();
        project_into_ball(&mut same, x, epsilon, domain);
        return Ok(same);
    }
    let mut gen = rng.rng();
    let mut best: Option<(Tensor, Vec<f64>)> = None;
    for r in 0..restarts.max(1) {
        let start = if r == 0 { x.clone() } else { uniform_in_ball(x, epsilon, domain, &mut gen) };
        let (cand, ce) = pgd_from(net, x, &start, labels, epsilon, steps, step_size, domain)?;
        best = Some(match best {
            None => (cand, ce),
            Some((mut bx, mut bce)) => {
                let d = x.cols();
                for b in 0..x.rows() {
                    if ce[b] > bce[b] {
                        bce[b] = ce[b];
                        bx.data_mut()[b * d..(b + 1) * d].copy_from_slice(cand.row_slice(b));
                    }
                }
                (bx, bce)
            }
        });
    }
    Ok(best.expect("at least one restart").0)
}

/// One PGD run from `start` inside the ball around `x`. Returns the best
/// iterate per row and its cross-entropy.
#[allow(clippy::too_many_arguments)]
pub fn pgd_from(
    net: &Network,
    x: &Tensor,
    start: &Tensor,
    labels: &[usize],
    epsilon: f64,
    steps: usize,
    step_size: f64,
    domain: [f64; 2],
) -> Result<(Tensor, Vec<f64>)> {
    let d = x.cols();
    let mut cur = start.clone();
    project_into_ball(&mut cur, x, epsilon, domain);
    let mut best = cur.clone();
    let mut best_ce = vec![f64::NEG_INFINITY; x.rows()];
    for step in 0..=steps {
        let (ce, g) = ce_and_grad(net, &cur, labels)?;
        for (b, &c) in ce.iter().enumerate() {
            if c > best_ce[b] {
                best_ce[b] = c;
                best.data_mut()[b * d..(b + 1) * d].copy_from_slice(cur.row_slice(b));
            }
        }
        if step == steps {
            break;
        }
        for (v, gi) in cur.data_mut().iter_mut().zip(g.data()) {
            *v += step_size * sign(*gi);
        }
        project_into_ball(&mut cur, x, epsilon, domain);
    }
    Ok((best, best_ce))
}

/// Evaluation settings for PGD accuracy.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PgdSettings {
    pub steps: usize,
    /// `None` means `2.5 * epsilon / 100`.
    pub step_size: Option<f64>,
    pub restarts: usize,
}

impl Default for PgdSettings {
    fn default() -> Self {
        Self { steps: 100, step_size: None, restarts: 1 }
    }
}

impl PgdSettings {
    pub fn step_for(&self, epsilon: f64) -> f64 {
        self.step_size.unwrap_or(2.5 * epsilon / 100.0)
    }
}

/// Fraction of samples still classified correctly after the attack, in percent.
pub fn pgd_accuracy(net: &Network, ds: &Dataset, epsilon: f64, settings: PgdSettings, domain: [f64; 2], seed: u64) -> Result<f64> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut correct = 0usize;
    for (chunk_no, chunk) in idx.chunks(256).enumerate() {
        let (x, y) = ds.batch(chunk);
        let rng = RngStream::new(seed, "pgd-eval").derive(chunk_no);
        let adv = pgd_attack(net, &x, &y, epsilon, settings.steps, settings.step_for(epsilon), domain, &rng, settings.restarts)?;
        let logits = net.logits_batch(&adv)?;
        correct += (0..chunk.len()).filter(|&b| argmax(logits.row_slice(b)) == y[b]).count();
    }
    Ok(100.0 * correct as f64 / ds.len() as f64)
}
