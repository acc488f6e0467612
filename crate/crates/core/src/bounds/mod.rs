//! Sound pre-activation bounds over input boxes, neuron stability and the
//! Stable% metric.
//!
//! Every routine works on an [`AffineNet`]: convolutions are lowered and
//! consecutive affine maps composed, so one code path covers every
//! architecture.

mod linear;
mod lowered;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bab::RobustnessProperty;
use crate::par;
use crate::{Error, Result};

pub use linear::{linear_bounds, margin_upper_bounds, Relaxation};
pub use lowered::{AffineNet, DenseAffine};

/// Relative width below which crossed bounds are attributed to rounding.
const CROSSING_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Shape(format!("box with {} lower and {} upper entries", lower.len(), upper.len())));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i].is_finite() && upper[i].is_finite() && lower[i] <= upper[i])) {
            return Err(Error::Config(format!("box entry {i} is not an interval: [{}, {}]", lower[i], upper[i])));
        }
        Ok(Self { lower, upper })
    }

    /// `[max(x0 - eps, lo), min(x0 + eps, hi)]` elementwise.
    pub fn ball(x0: &[f64], epsilon: f64, domain: [f64; 2]) -> Result<Self> {
        let lower = x0.iter().map(|&v| (v - epsilon).max(domain[0])).collect();
        let upper = x0.iter().map(|&v| (v + epsilon).min(domain[1])).collect();
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Active,
    Inactive,
}

/// Fixed activation phases, keyed by `(layer, neuron)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BranchConstraints {
    fixed: BTreeMap<(usize, usize), Phase>,
}

impl BranchConstraints {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a split; fixing a neuron to both phases is an error.
    pub fn insert(&mut self, layer: usize, neuron: usize, phase: Phase) -> Result<()> {
        match self.fixed.insert((layer, neuron), phase) {
            Some(old) if old != phase => {
                self.fixed.insert((layer, neuron), old);
                Err(Error::Config(format!("neuron ({layer}, {neuron}) already fixed {old:?}")))
            }
            _ => Ok(()),
        }
    }

    pub fn with(&self, layer: usize, neuron: usize, phase: Phase) -> Result<Self> {
        let mut b = self.clone();
        b.insert(layer, neuron, phase)?;
        Ok(b)
    }

    pub fn get(&self, layer: usize, neuron: usize) -> Option<Phase> {
        self.fixed.get(&(layer, neuron)).copied()
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), Phase)> + '_ {
        self.fixed.iter().map(|(&k, &v)| (k, v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMethod {
    Ibp,
    Linear,
    Intersected,
}

/// Pre-activation bounds of every ReLU layer plus the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsMap {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub output_lower: Vec<f64>,
    pub output_upper: Vec<f64>,
    pub method: BoundMethod,
}

impl BoundsMap {
    pub fn layer(&self, k: usize) -> (&[f64], &[f64]) {
        (&self.lower[k], &self.upper[k])
    }

    /// Whether a concrete pass lies inside the bounds, allowing `slack`.
    pub fn contains(&self, pre: &[Vec<f64>], logits: &[f64], slack: f64) -> bool {
        let inside = |v: &[f64], l: &[f64], u: &[f64]| v.iter().zip(l).zip(u).all(|((x, l), u)| *x >= l - slack && *x <= u + slack);
        pre.iter().enumerate().all(|(k, z)| inside(z, &self.lower[k], &self.upper[k]))
            && inside(logits, &self.output_lower, &self.output_upper)
    }
}

/// Post-activation interval of one neuron under an optional fixed phase.
pub(crate) fn relu_interval(l: f64, u: f64, phase: Option<Phase>) -> (f64, f64) {
    match phase {
        Some(Phase::Inactive) => (0.0, 0.0),
        _ => (l.max(0.0), u.max(0.0)),
    }
}

/// Interval image of an affine map.
pub(crate) fn interval_affine(map: &DenseAffine, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pairs = par::map_range(map.out, |j| {
        let (mut l, mut u) = (map.bias[j], map.bias[j]);
        for ((&w, &a), &b) in map.row(j).iter().zip(lo).zip(hi) {
            if w >= 0.0 {
                l += w * a;
                u += w * b;
            } else {
                l += w * b;
                u += w * a;
            }
        }
        (l, u)
    });
    pairs.into_iter().unzip()
}

fn check_dims(net: &AffineNet, bx: &InputBox) -> Result<()> {
    if bx.dim() != net.input_dim {
        return Err(Error::Shape(format!("box of dimension {} for a network with {} inputs", bx.dim(), net.input_dim)));
    }
    Ok(())
}

/// Interval bound propagation. Fixed phases change only the ReLU transfer:
/// inactive neurons output zero, active ones pass their clipped interval.
pub fn ibp_bounds(net: &AffineNet, bx: &InputBox, branch: &BranchConstraints) -> Result<BoundsMap> {
    check_dims(net, bx)?;
    let (mut lo, mut hi) = (bx.lower.clone(), bx.upper.clone());
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for (k, h) in net.hidden.iter().enumerate() {
        let (l, u) = interval_affine(h, &lo, &hi);
        (lo, hi) = (0..h.out).map(|j| relu_interval(l[j], u[j], branch.get(k, j))).unzip();
        lower.push(l);
        upper.push(u);
    }
    let (output_lower, output_upper) = interval_affine(&net.output, &lo, &hi);
    Ok(BoundsMap { lower, upper, output_lower, output_upper, method: BoundMethod::Ibp })
}

fn intersect_interval(la: f64, ua: f64, lb: f64, ub: f64, layer: usize, neuron: usize) -> Result<(f64, f64)> {
    let (l, u) = (la.max(lb), ua.min(ub));
    if l <= u {
        return Ok((l, u));
    }
    if l - u <= CROSSING_SLACK * l.abs().max(u.abs()).max(1.0) {
        return Ok((u, l));
    }
    Err(Error::CrossedBounds { layer, neuron, lower: l, upper: u })
}

pub(crate) fn intersect_layer(la: &[f64], ua: &[f64], lb: &[f64], ub: &[f64], layer: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    (0..la.len()).map(|j| intersect_interval(la[j], ua[j], lb[j], ub[j], layer, j)).collect::<Result<Vec<_>>>().map(|v| v.into_iter().unzip())
}

/// Elementwise `[max(l_a, l_b), min(u_a, u_b)]`. A crossing wider than
/// rounding noise means one input was unsound (or the branch is empty) and is
/// reported as [`Error::CrossedBounds`]; the output layer uses index
/// `lower.len()`.
pub fn intersect_bounds(a: &BoundsMap, b: &BoundsMap) -> Result<BoundsMap> {
    if a.lower.len() != b.lower.len() || a.output_lower.len() != b.output_lower.len() {
        return Err(Error::Shape("intersecting bounds of different networks".into()));
    }
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for k in 0..a.lower.len() {
        let (l, u) = intersect_layer(&a.lower[k], &a.upper[k], &b.lower[k], &b.upper[k], k)?;
        lower.push(l);
        upper.push(u);
    }
    let (output_lower, output_upper) =
        intersect_layer(&a.output_lower, &a.output_upper, &b.output_lower, &b.output_upper, a.lower.len())?;
    Ok(BoundsMap { lower, upper, output_lower, output_upper, method: BoundMethod::Intersected })
}

/// Intersection of interval and linear bounds.
pub fn compute_bounds(net: &AffineNet, bx: &InputBox, branch: &BranchConstraints) -> Result<BoundsMap> {
    let ibp = ibp_bounds(net, bx, branch)?;
    let lin = linear_bounds(net, bx, branch)?;
    intersect_bounds(&ibp, &lin)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStability {
    pub active: usize,
    pub inactive: usize,
    pub unstable: usize,
}

impl LayerStability {
    pub fn total(&self) -> usize {
        self.active + self.inactive + self.unstable
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub per_layer: Vec<LayerStability>,
    pub stable_ratio: f64,
    pub method: BoundMethod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Active,
    Inactive,
    Unstable,
}

/// `u <= 0` is inactive (so `l = u = 0` is inactive), `l >= 0` active, anything else unstable.
pub fn classify(l: f64, u: f64) -> Stability {
    if u <= 0.0 {
        Stability::Inactive
    } else if l >= 0.0 {
        Stability::Active
    } else {
        Stability::Unstable
    }
}

pub fn classify_neurons(bounds: &BoundsMap) -> StabilityReport {
    let per_layer: Vec<LayerStability> = bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(l, u)| {
            let mut s = LayerStability::default();
            for (&l, &u) in l.iter().zip(u) {
                match classify(l, u) {
                    Stability::Active => s.active += 1,
                    Stability::Inactive => s.inactive += 1,
                    Stability::Unstable => s.unstable += 1,
                }
            }
            s
        })
        .collect();
    let total: usize = per_layer.iter().map(LayerStability::total).sum();
    let stable: usize = per_layer.iter().map(|s| s.active + s.inactive).sum();
    let stable_ratio = if total == 0 { 1.0 } else { stable as f64 / total as f64 };
    StabilityReport { per_layer, stable_ratio, method: bounds.method }
}

/// Stability of one property's input region using intersected bounds.
pub fn property_stability(net: &AffineNet, prop: &RobustnessProperty) -> Result<StabilityReport> {
    Ok(classify_neurons(&compute_bounds(net, &prop.input_box()?, &BranchConstraints::new())?))
}

/// Mean stable-neuron percentage over the properties' input regions.
pub fn stable_percent(net: &AffineNet, props: &[RobustnessProperty]) -> Result<f64> {
    if props.is_empty() {
        return Err(Error::Config("stable_percent needs at least one property".into()));
    }
    let ratios = par::map_slice(props, |p| property_stability(net, p).map(|r| r.stable_ratio));
    let sum: f64 = ratios.into_iter().collect::<Result<Vec<_>>>()?.iter().sum();
    Ok(100.0 * sum / props.len() as f64)
}

#[cfg(test)]
mod tests;
