//! Complete branch-and-bound verification of local robustness.
//!
//! Each node intersects interval and linear bounds, tries a short PGD attack,
//! then solves an LP over the branch. Open nodes split the unstable neuron
//! with the largest triangle relaxation, depth first with the active child first.

mod leaf;
mod property;
mod search;
mod verdict;

pub use leaf::{leaf_check, leaf_check_with, LeafOutcome, LeafReport};
pub use property::{check_counterexample, encode_property, is_misclassified, RobustnessProperty};
pub use search::{bab_verify, select_branch_neuron, BabConfig, Budget};
pub use verdict::{Verdict, VerdictStats, VerdictStatus};
