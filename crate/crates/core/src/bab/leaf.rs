//! Exact-at-full-split LP check of one branch.
//!
//! Variables are the input coordinates plus one post-activation variable per
//! unstable, unsplit neuron. Stable and split neurons are substituted away
//! (identity or zero), split neurons contribute their sign half-space, and
//! unstable neurons use the triangle relaxation `p >= z`, `p >= 0`,
//! `p <= u (z - l) / (u - l)`.

use crate::bounds::{AffineNet, BoundsMap, BranchConstraints, InputBox, Phase};
use crate::lp::{LpProblem, LpStatus, Relation, Simplex};
use crate::tensor;
use crate::Result;

use super::property::{check_counterexample, RobustnessProperty};

#[derive(Clone, Debug, PartialEq)]
pub enum LeafOutcome {
    /// Every adversarial direction is non-positive over the branch (or the branch is empty).
    Proved,
    /// A concretely validated counterexample.
    Feasible(Vec<f64>),
    /// The relaxation admits a violation that is not (yet) concrete. `point`
    /// is the LP's input point; `diagnostic` marks a fully split branch where
    /// this should not happen.
    Indeterminate { point: Option<Vec<f64>>, diagnostic: bool },
}

#[derive(Clone, Debug)]
pub struct LeafReport {
    pub outcome: LeafOutcome,
    pub lp_calls: usize,
}

/// Affine expressions over the LP variables: `[rows, vars]` coefficients plus constants.
struct Exprs {
    coef: Vec<f64>,
    constant: Vec<f64>,
}

struct Encoding {
    lp: LpProblem,
    /// Output logits as expressions.
    output: Exprs,
    fully_split: bool,
}

fn encode(net: &AffineNet, bx: &InputBox, bounds: &BoundsMap, branch: &BranchConstraints) -> Encoding {
    let d = net.input_dim;
    // Assign a variable to every unstable, unsplit neuron.
    let mut var_of: Vec<Vec<Option<usize>>> = Vec::with_capacity(net.hidden.len());
    let mut nv = d;
    for (k, h) in net.hidden.iter().enumerate() {
        let (l, u) = bounds.layer(k);
        var_of.push(
            (0..h.out)
                .map(|j| {
                    (branch.get(k, j).is_none() && l[j] < 0.0 && u[j] > 0.0).then(|| {
                        nv += 1;
                        nv - 1
                    })
                })
                .collect(),
        );
    }
    let mut lp = LpProblem::new(nv);
    for i in 0..d {
        lp.set_bounds(i, bx.lower[i], bx.upper[i]);
    }

    // Post-activations of the previous layer; `None` means the identity on the input.
    let mut post: Option<Exprs> = None;
    let pre_of = |map: &crate::bounds::DenseAffine, post: &Option<Exprs>| -> Exprs {
        match post {
            None => {
                let mut coef = vec![0.0; map.out * nv];
                for j in 0..map.out {
                    coef[j * nv..j * nv + d].copy_from_slice(map.row(j));
                }
                Exprs { coef, constant: map.bias.clone() }
            }
            Some(p) => {
                let coef = tensor::matmul(&map.weight, map.out, map.inp, &p.coef, nv);
                let constant = (0..map.out).map(|j| tensor::dot(map.row(j), &p.constant) + map.bias[j]).collect();
                Exprs { coef, constant }
            }
        }
    };
    for (k, h) in net.hidden.iter().enumerate() {
        let pre = pre_of(h, &post);
        let (l, u) = bounds.layer(k);
        let mut next = Exprs { coef: vec![0.0; h.out * nv], constant: vec![0.0; h.out] };
        for j in 0..h.out {
            let row = &pre.coef[j * nv..(j + 1) * nv];
            let c = pre.constant[j];
            match (branch.get(k, j), var_of[k][j]) {
                (Some(Phase::Active), _) => {
                    if l[j] < 0.0 {
                        lp.add_row(row.to_vec(), Relation::Ge, -c);
                    }
                    next.coef[j * nv..(j + 1) * nv].copy_from_slice(row);
                    next.constant[j] = c;
                }
                (Some(Phase::Inactive), _) => {
                    if u[j] > 0.0 {
                        lp.add_row(row.to_vec(), Relation::Le, -c);
                    }
                }
                (None, Some(p)) => {
                    // p >= z
                    let mut r1: Vec<f64> = row.iter().map(|v| -v).collect();
                    r1[p] += 1.0;
                    lp.add_row(r1, Relation::Ge, c);
                    // p <= s (z - l)
                    let s = u[j] / (u[j] - l[j]);
                    let mut r2: Vec<f64> = row.iter().map(|v| -s * v).collect();
                    r2[p] += 1.0;
                    lp.add_row(r2, Relation::Le, s * (c - l[j]));
                    lp.set_bounds(p, 0.0, u[j]);
                    next.coef[j * nv + p] = 1.0;
                }
                (None, None) if l[j] >= 0.0 => {
                    next.coef[j * nv..(j + 1) * nv].copy_from_slice(row);
                    next.constant[j] = c;
                }
                (None, None) => {}
            }
        }
        post = Some(next);
    }
    let output = pre_of(&net.output, &post);
    Encoding { lp, output, fully_split: nv == d }
}

/// Runs the LP check for one branch given its bounds and the margin upper
/// bounds (directions already proved by the bounds are skipped).
pub fn leaf_check_with(
    net: &AffineNet,
    prop: &RobustnessProperty,
    bx: &InputBox,
    bounds: &BoundsMap,
    branch: &BranchConstraints,
    margins: &[f64],
) -> Result<LeafReport> {
    let mut open: Vec<usize> = prop.directions(net.num_classes()).into_iter().filter(|&i| margins[i] > 0.0).collect();
    if open.is_empty() {
        return Ok(LeafReport { outcome: LeafOutcome::Proved, lp_calls: 0 });
    }
    // Most promising directions first.
    open.sort_by(|&a, &b| margins[b].total_cmp(&margins[a]).then(a.cmp(&b)));
    let enc = encode(net, bx, bounds, branch);
    let nv = enc.lp.num_vars();
    let d = net.input_dim;
    let mut simplex = Simplex::new(&enc.lp)?;
    let mut lp_calls = 0;
    let c = prop.label;
    for i in open {
        let obj: Vec<f64> = (0..nv).map(|v| enc.output.coef[i * nv + v] - enc.output.coef[c * nv + v]).collect();
        let offset = enc.output.constant[i] - enc.output.constant[c];
        lp_calls += 1;
        let out = match simplex.maximize(&obj) {
            Ok(o) => o,
            Err(e @ crate::Error::LpStalled(_)) => {
                log::warn!("leaf LP stalled: {e}");
                return Ok(LeafReport { outcome: LeafOutcome::Indeterminate { point: None, diagnostic: false }, lp_calls });
            }
            Err(e) => return Err(e),
        };
        match out.status {
            LpStatus::Infeasible => return Ok(LeafReport { outcome: LeafOutcome::Proved, lp_calls }),
            LpStatus::Optimal if out.objective + offset <= 0.0 => continue,
            _ => {
                let mut x = out.point[..d].to_vec();
                bx.clamp(&mut x);
                if check_counterexample(net, prop, &x) {
                    return Ok(LeafReport { outcome: LeafOutcome::Feasible(x), lp_calls });
                }
                if enc.fully_split {
                    log::warn!(
                        "fully split leaf: LP margin {:.3e} for class {i} not confirmed by a forward pass",
                        out.objective + offset
                    );
                }
                return Ok(LeafReport {
                    outcome: LeafOutcome::Indeterminate { point: Some(x), diagnostic: enc.fully_split },
                    lp_calls,
                });
            }
        }
    }
    Ok(LeafReport { outcome: LeafOutcome::Proved, lp_calls })
}

/// Computes bounds for the branch and runs the LP check.
pub fn leaf_check(net: &AffineNet, prop: &RobustnessProperty, branch: &BranchConstraints) -> Result<LeafOutcome> {
    let bx = prop.input_box()?;
    let bounds = match crate::bounds::compute_bounds(net, &bx, branch) {
        Ok(b) => b,
        Err(crate::Error::CrossedBounds { .. }) if !branch.is_empty() => return Ok(LeafOutcome::Proved),
        Err(e) => return Err(e),
    };
    let margins = crate::bounds::margin_upper_bounds(net, &bx, &bounds, branch, prop.label);
    Ok(leaf_check_with(net, prop, &bx, &bounds, branch, &margins)?.outcome)
}
