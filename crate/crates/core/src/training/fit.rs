//! The phased mini-batch training loop and its CSV history.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{Dataset, RngStream};
use crate::network::Network;
use crate::optim::{adam_step, AdamState};
use crate::{Error, Result};

use super::{argmax, build_loss, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// 1-based, counted across phases.
    pub epoch: usize,
    /// Loss kind of the phase, e.g. `nbc` or `madry+nbc`.
    pub phase: String,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

/// Argmax class of every sample.
pub fn predict(net: &Network, ds: &Dataset) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in idx.chunks(512) {
        let (x, _) = ds.batch(chunk);
        let logits = net.logits_batch(&x)?;
        out.extend((0..chunk.len()).map(|b| argmax(logits.row_slice(b))));
    }
    Ok(out)
}

/// Clean accuracy in percent.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    let pred = predict(net, ds)?;
    let correct = pred.iter().zip(ds.labels()).filter(|(p, y)| p == y).count();
    Ok(100.0 * correct as f64 / ds.len() as f64)
}

/// Runs every phase in order with one Adam state. Shuffling and inner
/// adversaries draw from streams derived from `cfg.seed`, so equal inputs give
/// bitwise-equal results.
pub fn train(net: &Network, train_set: &Dataset, test_set: Option<&Dataset>, cfg: &TrainConfig) -> Result<(Network, Vec<HistoryRow>)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if train_set.features() != net.input_dim() {
        return Err(Error::Shape(format!(
            "dataset has {} features, network expects {}",
            train_set.features(),
            net.input_dim()
        )));
    }
    let mut net = net.clone();
    let mut state = AdamState::new(&net.params());
    let mut history = Vec::new();
    let root = RngStream::new(cfg.seed, "train");
    let mut epoch = 0usize;
    for phase in &cfg.phases {
        let beta = cfg.phase_beta(phase);
        for _ in 0..phase.epochs {
            epoch += 1;
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut root.derive(format!("shuffle/{epoch}")).rng());
            let mut loss_sum = 0.0;
            for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
                let (x, y) = train_set.batch(idx);
                let mut tape = Tape::new();
                let params = net.bind(&mut tape, true)?;
                let rng = root.derive(format!("batch/{epoch}/{b}"));
                let (loss, value) = build_loss(&mut tape, &net, &params, &x, &y, phase.loss, beta, cfg, &rng)?;
                if !value.total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "{} loss at epoch {epoch}, batch {b}: {value:?}",
                        phase.loss.name()
                    )));
                }
                loss_sum += value.total * idx.len() as f64;
                let mut grads = tape.backward(loss)?;
                let grads = net.param_grads(&params, &mut grads)?;
                drop(tape);
                adam_step(&mut net.params_mut(), &grads, &mut state, &cfg.adam)?;
            }
            let row = HistoryRow {
                epoch,
                phase: phase.loss.name().to_string(),
                loss: loss_sum / train_set.len() as f64,
                train_acc: accuracy(&net, train_set)?,
                test_acc: test_set.map(|t| accuracy(&net, t)).transpose()?,
            };
            log::info!(
                "epoch {epoch} [{}] loss {:.4} train {:.1}% test {}",
                row.phase,
                row.loss,
                row.train_acc,
                row.test_acc.map_or("-".into(), |a| format!("{a:.1}%"))
            );
            history.push(row);
        }
    }
    net.set_seed(Some(cfg.seed));
    Ok((net, history))
}

pub fn write_history_csv(rows: &[HistoryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_history_csv(path: impl AsRef<Path>) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
