//! The depth-first branch-and-bound loop.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bounds::{
    classify_neurons, compute_bounds, margin_upper_bounds, AffineNet, BoundsMap, BranchConstraints, Phase,
};
use crate::network::Network;
use crate::tensor::Tensor;
use crate::training::pgd_from;
use crate::{Error, Result};

use super::leaf::{leaf_check_with, LeafOutcome};
use super::property::{check_counterexample, RobustnessProperty};
use super::verdict::{Verdict, VerdictStats, VerdictStatus};

/// Search limits. `None` means unlimited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub max_seconds: Option<f64>,
    pub max_branches: Option<usize>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn branches(n: usize) -> Self {
        Self { max_seconds: None, max_branches: Some(n) }
    }

    pub fn seconds(s: f64) -> Self {
        Self { max_seconds: Some(s), max_branches: None }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.max_seconds {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("time budget must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Falsification settings used at every node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BabConfig {
    pub attack_steps: usize,
    /// `None` means `2.5 * epsilon / attack_steps`.
    pub attack_step: Option<f64>,
}

impl Default for BabConfig {
    fn default() -> Self {
        Self { attack_steps: 20, attack_step: None }
    }
}

/// Unsplit unstable neuron with the largest triangle area `-l u / (u - l)`;
/// ties go to the lowest `(layer, neuron)`.
pub fn select_branch_neuron(bounds: &BoundsMap, branch: &BranchConstraints) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for (k, (ls, us)) in bounds.lower.iter().zip(&bounds.upper).enumerate() {
        for (j, (&l, &u)) in ls.iter().zip(us).enumerate() {
            if branch.get(k, j).is_some() || !(l < 0.0 && u > 0.0) {
                continue;
            }
            let score = -l * u / (u - l);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some(((k, j), score));
            }
        }
    }
    best.map(|(n, _)| n)
}

struct Node {
    branch: BranchConstraints,
    depth: usize,
    /// Where the attack starts; the parent's LP point when there is one.
    attack_start: Vec<f64>,
}

struct Search<'a> {
    net: &'a AffineNet,
    attack_net: Network,
    prop: &'a RobustnessProperty,
    cfg: BabConfig,
    stats: VerdictStats,
}

enum NodeResult {
    Proved,
    Sat(Vec<f64>),
    Split { children: [BranchConstraints; 2], start: Vec<f64> },
    Unresolved,
}

impl Search<'_> {
    /// PGD from `start`; returns a validated counterexample if one is found.
    fn attack(&mut self, start: &[f64]) -> Result<Option<Vec<f64>>> {
        if self.prop.epsilon == 0.0 {
            return Ok(None);
        }
        let t = Instant::now();
        let steps = self.cfg.attack_steps;
        let step = self.cfg.attack_step.unwrap_or(2.5 * self.prop.epsilon / steps.max(1) as f64);
        let x = Tensor::row(self.prop.x0.clone())?;
        let s = Tensor::row(start.to_vec())?;
        let (best, _) = pgd_from(&self.attack_net, &x, &s, &[self.prop.label], self.prop.epsilon, steps, step, self.prop.domain)?;
        self.stats.attack_time += t.elapsed().as_secs_f64();
        let cand = best.into_data();
        Ok(check_counterexample(self.net, self.prop, &cand).then_some(cand))
    }

    fn visit(&mut self, node: &Node) -> Result<NodeResult> {
        let bx = self.prop.input_box()?;
        let bounds = match compute_bounds(self.net, &bx, &node.branch) {
            Ok(b) => b,
            // Crossed bounds under split constraints mean the branch is empty.
            Err(Error::CrossedBounds { .. }) if !node.branch.is_empty() => return Ok(NodeResult::Proved),
            Err(e) => return Err(e),
        };
        if node.depth == 0 {
            self.stats.stable_ratio_at_root = classify_neurons(&bounds).stable_ratio;
        }
        // A fixed phase contradicting the bounds leaves no input in the branch.
        for ((k, j), phase) in node.branch.iter() {
            let (l, u) = bounds.layer(k);
            let empty = match phase {
                Phase::Active => u[j] < 0.0,
                Phase::Inactive => l[j] > 0.0,
            };
            if empty {
                return Ok(NodeResult::Proved);
            }
        }
        let margins = margin_upper_bounds(self.net, &bx, &bounds, &node.branch, self.prop.label);
        if margins.iter().all(|&m| m <= 0.0) {
            return Ok(NodeResult::Proved);
        }
        if let Some(cex) = self.attack(&node.attack_start)? {
            return Ok(NodeResult::Sat(cex));
        }
        let leaf = leaf_check_with(self.net, self.prop, &bx, &bounds, &node.branch, &margins)?;
        self.stats.lp_calls += leaf.lp_calls;
        let point = match leaf.outcome {
            LeafOutcome::Proved => return Ok(NodeResult::Proved),
            LeafOutcome::Feasible(x) => return Ok(NodeResult::Sat(x)),
            LeafOutcome::Indeterminate { point, diagnostic } => {
                if diagnostic {
                    self.stats.diagnostics += 1;
                }
                point
            }
        };
        let Some((k, j)) = select_branch_neuron(&bounds, &node.branch) else {
            // Fully split yet open: the LP maximum is a numerical artifact.
            return Ok(NodeResult::Unresolved);
        };
        let start = point.unwrap_or_else(|| node.attack_start.clone());
        Ok(NodeResult::Split {
            children: [node.branch.with(k, j, Phase::Active)?, node.branch.with(k, j, Phase::Inactive)?],
            start,
        })
    }
}

/// Complete local-robustness check of `prop` on `net` within `budget`.
pub fn bab_verify(net: &AffineNet, prop: &RobustnessProperty, budget: Budget, cfg: BabConfig) -> Result<Verdict> {
    budget.validate()?;
    prop.validate(net.num_classes())?;
    if prop.x0.len() != net.input_dim {
        return Err(Error::Shape(format!("x0 has {} entries, network expects {}", prop.x0.len(), net.input_dim)));
    }
    let t0 = Instant::now();
    let deadline = budget.max_seconds.map(|s| t0 + Duration::from_secs_f64(s));
    let mut search = Search { net, attack_net: net.to_network()?, prop, cfg, stats: VerdictStats::default() };
    let finish = |mut stats: VerdictStats, status, cex| {
        stats.wall_time = t0.elapsed().as_secs_f64();
        Ok(Verdict { status, counterexample: cex, stats })
    };

    if super::property::is_misclassified(&net.logits(&prop.x0), prop.label) {
        return finish(search.stats, VerdictStatus::Sat, Some(prop.x0.clone()));
    }

    let mut unresolved = false;
    let mut stack = vec![Node { branch: BranchConstraints::new(), depth: 0, attack_start: prop.x0.clone() }];
    while let Some(node) = stack.pop() {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return finish(search.stats, VerdictStatus::Unknown, None);
        }
        search.stats.max_depth = search.stats.max_depth.max(node.depth);
        match search.visit(&node)? {
            NodeResult::Proved => {}
            NodeResult::Unresolved => unresolved = true,
            NodeResult::Sat(x) => return finish(search.stats, VerdictStatus::Sat, Some(x)),
            NodeResult::Split { children: [active, inactive], start } => {
                if budget.max_branches.is_some_and(|b| search.stats.branches_explored >= b) {
                    return finish(search.stats, VerdictStatus::Unknown, None);
                }
                search.stats.branches_explored += 1;
                let depth = node.depth + 1;
                // Pushed last, popped first.
                stack.push(Node { branch: inactive, depth, attack_start: start.clone() });
                stack.push(Node { branch: active, depth, attack_start: start });
            }
        }
    }
    let status = if unresolved { VerdictStatus::Unknown } else { VerdictStatus::Unsat };
    finish(search.stats, status, None)
}
