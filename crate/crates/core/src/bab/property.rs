//! Local robustness properties and concrete counterexample checks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::{AffineNet, InputBox};
use crate::{Error, Result};

fn unit_domain() -> [f64; 2] {
    [0.0, 1.0]
}

/// The label `label` must win on every input of the `epsilon` ball around
/// `x0` intersected with the domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessProperty {
    pub x0: Vec<f64>,
    pub epsilon: f64,
    pub label: usize,
    #[serde(default = "unit_domain")]
    pub domain: [f64; 2],
}

impl RobustnessProperty {
    /// Validates and builds a property for a network with `num_classes` outputs.
    pub fn new(x0: Vec<f64>, epsilon: f64, label: usize, domain: [f64; 2], num_classes: usize) -> Result<Self> {
        let p = Self { x0, epsilon, label, domain };
        p.validate(num_classes)?;
        Ok(p)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let [lo, hi] = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("domain [{lo}, {hi}] is not an interval")));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.x0.is_empty() || self.x0.iter().any(|v| !(lo..=hi).contains(v)) {
            return Err(Error::Config("x0 must be non-empty and inside the domain".into()));
        }
        if self.label >= num_classes {
            return Err(Error::Config(format!("label {} out of range for {num_classes} classes", self.label)));
        }
        Ok(())
    }

    pub fn input_box(&self) -> Result<InputBox> {
        InputBox::ball(&self.x0, self.epsilon, self.domain)
    }

    /// Classes whose margin over the label must stay non-positive.
    pub fn directions(&self, num_classes: usize) -> Vec<usize> {
        (0..num_classes).filter(|&i| i != self.label).collect()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..self.clone() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Builds a property for `net`, checking the label against its outputs.
pub fn encode_property(net: &AffineNet, x0: Vec<f64>, epsilon: f64, label: usize, domain: [f64; 2]) -> Result<RobustnessProperty> {
    if x0.len() != net.input_dim {
        return Err(Error::Shape(format!("x0 has {} entries, network expects {}", x0.len(), net.input_dim)));
    }
    RobustnessProperty::new(x0, epsilon, label, domain, net.num_classes())
}

/// Whether `logits` put some other class strictly above the label.
pub fn is_misclassified(logits: &[f64], label: usize) -> bool {
    let yc = logits[label];
    logits.iter().enumerate().any(|(i, &y)| i != label && y > yc)
}

/// True iff `x` lies in the property's box and some class strictly beats the label.
pub fn check_counterexample(net: &AffineNet, prop: &RobustnessProperty, x: &[f64]) -> bool {
    let Ok(bx) = prop.input_box() else { return false };
    if x.len() != net.input_dim || !bx.contains(x) {
        return false;
    }
    is_misclassified(&net.logits(x), prop.label)
}
