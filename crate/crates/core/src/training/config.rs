//! Training configuration and its JSON form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optim::AdamHyper;
use crate::{Error, Result};

/// Loss optimized during one phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "ce")]
    Ce,
    #[serde(rename = "madry")]
    Madry,
    #[serde(rename = "trades")]
    Trades,
    #[serde(rename = "rs")]
    Rs,
    #[serde(rename = "nbc")]
    Nbc,
    #[serde(rename = "madry+nbc")]
    MadryNbc,
    #[serde(rename = "trades+nbc")]
    TradesNbc,
    #[serde(rename = "rs+nbc")]
    RsNbc,
}

impl LossKind {
    /// The loss without the NBC regularizer.
    pub fn base(self) -> LossKind {
        match self {
            LossKind::Nbc => LossKind::Ce,
            LossKind::MadryNbc => LossKind::Madry,
            LossKind::TradesNbc => LossKind::Trades,
            LossKind::RsNbc => LossKind::Rs,
            other => other,
        }
    }

    pub fn uses_nbc(self) -> bool {
        self.base() != self
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Madry => "madry",
            LossKind::Trades => "trades",
            LossKind::Rs => "rs",
            LossKind::Nbc => "nbc",
            LossKind::MadryNbc => "madry+nbc",
            LossKind::TradesNbc => "trades+nbc",
            LossKind::RsNbc => "rs+nbc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaScheme {
    Unit,
    ExpRank,
    RankTimesSize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub loss: LossKind,
    pub epochs: usize,
    /// Overrides the config-level NBC weight for this phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phases: Vec<Phase>,
    /// NBC weight.
    pub beta: f64,
    /// Perturbation radius in input units.
    pub epsilon: f64,
    /// Inner adversary steps (NBC adversary, Madry PGD and TRADES).
    pub k: usize,
    /// NBC adversary step size; `None` means `epsilon / 10`.
    pub alpha: Option<f64>,
    /// Sign-step size for Madry/TRADES inner maximization; `None` means `2.5 * epsilon / k`.
    pub attack_step: Option<f64>,
    pub gamma: GammaScheme,
    pub adam: AdamHyper,
    pub batch_size: usize,
    pub seed: u64,
    pub domain: [f64; 2],
    pub trades_lambda: f64,
    pub rs_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phases: vec![Phase { loss: LossKind::Ce, epochs: 30, beta: None }],
            beta: 1.0,
            epsilon: 0.1,
            k: 10,
            alpha: None,
            attack_step: None,
            gamma: GammaScheme::ExpRank,
            adam: AdamHyper::default(),
            batch_size: 128,
            seed: 0,
            domain: [0.0, 1.0],
            trades_lambda: 6.0,
            rs_weight: 1e-3,
        }
    }
}

impl TrainConfig {
    /// A single-phase config.
    pub fn single(loss: LossKind, epochs: usize) -> Self {
        Self {
            phases: vec![Phase { loss, epochs, beta: None }],
            ..Self::default()
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.epsilon / 10.0)
    }

    pub fn attack_step(&self) -> f64 {
        self.attack_step.unwrap_or(2.5 * self.epsilon / self.k.max(1) as f64)
    }

    pub fn phase_beta(&self, phase: &Phase) -> f64 {
        phase.beta.unwrap_or(self.beta)
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.beta) || self.phases.iter().any(|p| p.beta.is_some_and(|b| !finite_nonneg(b))) {
            return bad("beta must be finite and >= 0".into());
        }
        if !finite_nonneg(self.epsilon) {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        if self.k > 0 && self.epsilon > 0.0 && !(self.alpha() > 0.0 && self.alpha().is_finite()) {
            return bad(format!("alpha must be > 0 when k > 0, got {}", self.alpha()));
        }
        if self.attack_step.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return bad("attack_step must be > 0".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        let [lo, hi] = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("domain [{lo}, {hi}] is not an interval"));
        }
        if !finite_nonneg(self.trades_lambda) || !finite_nonneg(self.rs_weight) {
            return bad("trades_lambda and rs_weight must be finite and >= 0".into());
        }
        let h = &self.adam;
        if !(h.lr > 0.0 && (0.0..1.0).contains(&h.beta1) && (0.0..1.0).contains(&h.beta2) && h.eps > 0.0) {
            return bad(format!("invalid Adam hyperparameters {h:?}"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
