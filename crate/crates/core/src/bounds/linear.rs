//! Backward linear relaxation: each bound is an affine expression in the
//! input obtained by substituting per-neuron linear upper/lower envelopes of
//! the ReLUs layer by layer.

use super::{
    check_dims, interval_affine, intersect_layer, relu_interval, AffineNet, BoundMethod, BoundsMap, BranchConstraints,
    InputBox, Phase,
};
use crate::par;
use crate::tensor;
use crate::Result;

/// Linear envelopes of one ReLU layer: `lower_slope * z <= relu(z) <= upper_slope * z + upper_offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct Relaxation {
    pub upper_slope: Vec<f64>,
    pub upper_offset: Vec<f64>,
    pub lower_slope: Vec<f64>,
}

impl Relaxation {
    /// Triangle relaxation with the lower slope chosen by `u >= -l`; fixed
    /// phases are exact (identity or zero).
    pub fn new(l: &[f64], u: &[f64], layer: usize, branch: &BranchConstraints) -> Self {
        let n = l.len();
        let mut r = Relaxation {
            upper_slope: vec![0.0; n],
            upper_offset: vec![0.0; n],
            lower_slope: vec![0.0; n],
        };
        for j in 0..n {
            let (su, tu, sl) = match branch.get(layer, j) {
                Some(Phase::Inactive) => (0.0, 0.0, 0.0),
                Some(Phase::Active) => (1.0, 0.0, 1.0),
                None if u[j] <= 0.0 => (0.0, 0.0, 0.0),
                None if l[j] >= 0.0 => (1.0, 0.0, 1.0),
                None => {
                    let s = u[j] / (u[j] - l[j]);
                    (s, -s * l[j], if u[j] >= -l[j] { 1.0 } else { 0.0 })
                }
            };
            r.upper_slope[j] = su;
            r.upper_offset[j] = tu;
            r.lower_slope[j] = sl;
        }
        r
    }
}

/// Upper bounds of `rows` expressions `coef · a_depth + offset` over the box,
/// where `a_depth` is the post-activation of hidden layer `depth - 1` (the
/// input when `depth == 0`). `coef` is row-major `[rows, width]`.
fn upper_bound_expr(
    net: &AffineNet,
    bx: &InputBox,
    relax: &[Relaxation],
    depth: usize,
    mut coef: Vec<f64>,
    mut offset: Vec<f64>,
) -> Vec<f64> {
    let rows = offset.len();
    for j in (0..depth).rev() {
        let layer = &net.hidden[j];
        let r = &relax[j];
        let width = layer.out;
        // Relax a_j into an expression over z_j.
        for (row, off) in coef.chunks_mut(width).zip(offset.iter_mut()) {
            for (i, c) in row.iter_mut().enumerate() {
                if *c >= 0.0 {
                    *off += *c * r.upper_offset[i];
                    *c *= r.upper_slope[i];
                } else {
                    *c *= r.lower_slope[i];
                }
            }
            *off += tensor::dot(row, &layer.bias);
        }
        coef = tensor::matmul(&coef, rows, width, &layer.weight, layer.inp);
    }
    let width = net.input_dim;
    par::map_range(rows, |r| {
        let row = &coef[r * width..(r + 1) * width];
        let mut v = offset[r];
        for ((&c, &l), &u) in row.iter().zip(&bx.lower).zip(&bx.upper) {
            v += if c >= 0.0 { c * u } else { c * l };
        }
        v
    })
}

fn bounds_of_affine(net: &AffineNet, bx: &InputBox, relax: &[Relaxation], depth: usize, weight: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let up = upper_bound_expr(net, bx, relax, depth, weight.to_vec(), bias.to_vec());
    let neg_w = weight.iter().map(|v| -v).collect();
    let neg_b = bias.iter().map(|v| -v).collect();
    let lo = upper_bound_expr(net, bx, relax, depth, neg_w, neg_b).into_iter().map(|v| -v).collect();
    (lo, up)
}

/// Back-substituted bounds. Each layer's relaxation uses the back-substituted
/// bounds intersected with the interval image of the previous layer, which
/// keeps the result sound and at least as tight as either alone.
pub fn linear_bounds(net: &AffineNet, bx: &InputBox, branch: &BranchConstraints) -> Result<BoundsMap> {
    check_dims(net, bx)?;
    let mut relax: Vec<Relaxation> = Vec::with_capacity(net.hidden.len());
    let (mut post_lo, mut post_hi) = (bx.lower.clone(), bx.upper.clone());
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for (k, h) in net.hidden.iter().enumerate() {
        let (bl, bu) = bounds_of_affine(net, bx, &relax, k, &h.weight, &h.bias);
        let (il, iu) = interval_affine(h, &post_lo, &post_hi);
        let (l, u) = intersect_layer(&bl, &bu, &il, &iu, k)?;
        relax.push(Relaxation::new(&l, &u, k, branch));
        (post_lo, post_hi) = (0..h.out).map(|j| relu_interval(l[j], u[j], branch.get(k, j))).unzip();
        lower.push(l);
        upper.push(u);
    }
    let depth = net.hidden.len();
    let (bl, bu) = bounds_of_affine(net, bx, &relax, depth, &net.output.weight, &net.output.bias);
    let (il, iu) = interval_affine(&net.output, &post_lo, &post_hi);
    let (output_lower, output_upper) = intersect_layer(&bl, &bu, &il, &iu, depth)?;
    Ok(BoundsMap { lower, upper, output_lower, output_upper, method: BoundMethod::Linear })
}

/// Upper bounds of `y_i - y_label` for every class (`-inf` at the label),
/// back-substituted through relaxations built from `bounds`.
pub fn margin_upper_bounds(
    net: &AffineNet,
    bx: &InputBox,
    bounds: &BoundsMap,
    branch: &BranchConstraints,
    label: usize,
) -> Vec<f64> {
    let relax: Vec<Relaxation> = (0..net.hidden.len())
        .map(|k| Relaxation::new(&bounds.lower[k], &bounds.upper[k], k, branch))
        .collect();
    let out = &net.output;
    let others: Vec<usize> = (0..out.out).filter(|&i| i != label).collect();
    let mut coef = Vec::with_capacity(others.len() * out.inp);
    let mut offset = Vec::with_capacity(others.len());
    for &i in &others {
        coef.extend(out.row(i).iter().zip(out.row(label)).map(|(a, b)| a - b));
        offset.push(out.bias[i] - out.bias[label]);
    }
    let mut result = vec![f64::NEG_INFINITY; out.out];
    if others.is_empty() {
        return result;
    }
    let ups = upper_bound_expr(net, bx, &relax, net.hidden.len(), coef, offset);
    for (&i, u) in others.iter().zip(ups) {
        // The output-interval difference is also sound; keep the tighter one.
        result[i] = u.min(bounds.output_upper[i] - bounds.output_lower[label]);
    }
    result
}
