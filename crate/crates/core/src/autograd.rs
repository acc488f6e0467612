//! Reverse-mode automatic differentiation over batched 2-D values.
//!
//! Every node holds a `[rows, cols]` tensor where rows index samples in a
//! mini-batch. Ops are recorded in evaluation order on a [`Tape`];
//! [`Tape::backward`] walks them in reverse. Nodes built only from constants
//! do not require gradients and are skipped during the backward sweep.

use crate::network::conv::{self, ConvGeometry};
use crate::tensor::{self, Tensor};
use crate::{Error, Result};

/// Probability floor applied before taking logarithms in KL terms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Norm below which cosine similarity is defined as 0.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `a [B, n] * w^T`, `w: [m, n]`
    MatMulT(Var, Var),
    /// Adds a `[1, m]` row to every row.
    AddRow(Var, Var),
    Conv {
        input: Var,
        kernels: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    Relu(Var),
    Abs(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    /// Per-row cosine similarity, `[B, 1]`.
    RowCosine(Var, Var),
    /// Per-row softmax cross-entropy against class labels, `[B, 1]`.
    SoftmaxCe(Var, Vec<usize>),
    /// Per-row `KL(softmax(p) || softmax(q))` with floored probabilities, `[B, 1]`.
    KlSoftmax(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(g) => Tensor::from_parts(shape, g).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn as_matrix(t: Tensor) -> Result<Tensor> {
    if t.shape().len() == 2 {
        return Ok(t);
    }
    let (r, c) = if t.shape().len() == 1 {
        (1, t.len())
    } else {
        (t.rows(), t.cols())
    };
    t.reshape(vec![r, c])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.0].value.shape();
        (s[0], s[1])
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op, parents: &[Var]) -> Result<Var> {
        let value = Tensor::from_parts(vec![rows, cols], data)?;
        if value.data().iter().any(|v| !v.is_finite()) {
            let name = format!("{op:?}");
            let name = name.split(['(', ' ', '{']).next().unwrap_or("op");
            value.check_finite(&format!("output of {name}"))?;
        }
        let rg = parents.iter().any(|&p| self.rg(p));
        Ok(self.push(value, op, rg))
    }

    /// A leaf that gradients are tracked for. 1-D values become `[1, n]`.
    pub fn var(&mut self, value: Tensor) -> Result<Var> {
        let value = as_matrix(value)?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        let value = as_matrix(value)?;
        Ok(self.push(value, Op::Leaf, false))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::Shape(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn matmul_t(&mut self, a: Var, w: Var) -> Result<Var> {
        let ((b, n), (m, n2)) = (self.dims(a), self.dims(w));
        if n != n2 {
            return Err(Error::Shape(format!("matmul_t: [{b}, {n}] x [{m}, {n2}]^T")));
        }
        let out = tensor::matmul_bt(self.value(a).data(), b, n, self.value(w).data(), m);
        self.push_op(b, m, out, Op::MatMulT(a, w), &[a, w])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let ((b, m), (r, m2)) = (self.dims(a), self.dims(row));
        if r != 1 || m != m2 {
            return Err(Error::Shape(format!("add_row: [{b}, {m}] + [{r}, {m2}]")));
        }
        let rv = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        out.chunks_mut(m).for_each(|c| c.iter_mut().zip(rv).for_each(|(o, r)| *o += r));
        self.push_op(b, m, out, Op::AddRow(a, row), &[a, row])
    }

    /// Affine map `a w^T + bias`.
    pub fn linear(&mut self, a: Var, w: Var, bias: Var) -> Result<Var> {
        let z = self.matmul_t(a, w)?;
        self.add_row(z, bias)
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let (b, n) = self.dims(input);
        if n != geom.in_len() {
            return Err(Error::Shape(format!("conv2d input width {n}, geometry expects {}", geom.in_len())));
        }
        if self.value(kernels).len() != geom.out_c * geom.kernel_len() {
            return Err(Error::Shape("conv2d kernel size does not match geometry".into()));
        }
        let out = conv::conv_forward(
            self.value(input).data(),
            b,
            self.value(kernels).data(),
            bias.map(|v| self.value(v).data()),
            &geom,
        );
        let mut parents = vec![input, kernels];
        parents.extend(bias);
        self.push_op(b, geom.out_len(), out, Op::Conv { input, kernels, bias, geom }, &parents)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let (r, c) = self.dims(a);
        let out = self.value(a).data().iter().map(|&v| f(v)).collect();
        self.push_op(r, c, out, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, |v| v * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, |v| v + s, Op::AddScalar(a))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "elementwise op")?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push_op(r, c, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Sum of all entries, `[1, 1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push_op(1, 1, vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "row_cosine")?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out = (0..r)
            .map(|i| cosine_similarity(&av[i * c..(i + 1) * c], &bv[i * c..(i + 1) * c]))
            .collect();
        self.push_op(r, 1, out, Op::RowCosine(a, b), &[a, b])
    }

    pub fn softmax_ce(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if labels.len() != r {
            return Err(Error::Shape(format!("{} labels for {r} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Shape(format!("label {bad} out of range for {c} classes")));
        }
        let lv = self.value(logits).data();
        let out = (0..r)
            .map(|i| {
                let row = &lv[i * c..(i + 1) * c];
                log_sum_exp(row) - row[labels[i]]
            })
            .collect();
        self.push_op(r, 1, out, Op::SoftmaxCe(logits, labels.to_vec()), &[logits])
    }

    pub fn kl_softmax(&mut self, p_logits: Var, q_logits: Var) -> Result<Var> {
        let (r, c) = self.same_shape(p_logits, q_logits, "kl_softmax")?;
        let (pv, qv) = (self.value(p_logits).data(), self.value(q_logits).data());
        let out = (0..r)
            .map(|i| {
                let p = softmax(&pv[i * c..(i + 1) * c]);
                let q = softmax(&qv[i * c..(i + 1) * c]);
                kl_div_unchecked(&p, &q)
            })
            .collect();
        self.push_op(r, 1, out, Op::KlSoftmax(p_logits, q_logits), &[p_logits, q_logits])
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_shape = self.nodes[root.0].value.shape().to_vec();
        if root_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMulT(a, w) => {
                let ((b, n), (m, _)) = (self.dims(a), self.dims(w));
                if self.rg(a) {
                    let ga = tensor::matmul(g, b, m, self.value(w).data(), n);
                    self.accumulate(grads, a, ga);
                }
                if self.rg(w) {
                    let gw = tensor::matmul_at(g, b, m, self.value(a).data(), n);
                    self.accumulate(grads, w, gw);
                }
            }
            &Op::AddRow(a, row) => {
                self.accumulate(grads, a, g.to_vec());
                if self.rg(row) {
                    let m = self.dims(row).1;
                    let mut gr = vec![0.0; m];
                    g.chunks(m).for_each(|c| c.iter().zip(gr.iter_mut()).for_each(|(x, acc)| *acc += x));
                    self.accumulate(grads, row, gr);
                }
            }
            Op::Conv { input, kernels, bias, geom } => {
                let b = self.dims(*input).0;
                if self.rg(*input) {
                    let gi = conv::conv_backward_input(g, b, self.value(*kernels).data(), geom);
                    self.accumulate(grads, *input, gi);
                }
                if self.rg(*kernels) {
                    let gk = conv::conv_backward_kernels(g, b, self.value(*input).data(), geom);
                    self.accumulate(grads, *kernels, gk);
                }
                if let Some(bv) = bias {
                    if self.rg(*bv) {
                        self.accumulate(grads, *bv, conv::conv_backward_bias(g, b, geom));
                    }
                }
            }
            &Op::Relu(a) => {
                // Subgradient at exactly zero is 0.
                let ga = g
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, a, ga);
            }
            &Op::Abs(a) => {
                let ga = g
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&gi, &x)| if x > 0.0 { gi } else if x < 0.0 { -gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, a, ga);
            }
            &Op::Tanh(a) => {
                let ga = g.iter().zip(out).map(|(&gi, &t)| gi * (1.0 - t * t)).collect();
                self.accumulate(grads, a, ga);
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.iter().map(|v| -v).collect());
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                self.accumulate(grads, b, g.iter().zip(av).map(|(x, y)| x * y).collect());
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.iter().map(|v| v * s).collect()),
            &Op::AddScalar(a) => self.accumulate(grads, a, g.to_vec()),
            &Op::Sum(a) => {
                let n = self.value(a).len();
                self.accumulate(grads, a, vec![g[0]; n]);
            }
            &Op::RowCosine(a, b) => {
                let (r, c) = self.dims(a);
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let mut ga = vec![0.0; r * c];
                let mut gb = vec![0.0; r * c];
                for i in 0..r {
                    let (x, y) = (&av[i * c..(i + 1) * c], &bv[i * c..(i + 1) * c]);
                    let (nx, ny) = (tensor::dot(x, x).sqrt(), tensor::dot(y, y).sqrt());
                    if nx < COSINE_EPS || ny < COSINE_EPS {
                        continue;
                    }
                    let cos = out[i];
                    for k in 0..c {
                        ga[i * c + k] = g[i] * (y[k] / (nx * ny) - cos * x[k] / (nx * nx));
                        gb[i * c + k] = g[i] * (x[k] / (nx * ny) - cos * y[k] / (ny * ny));
                    }
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::SoftmaxCe(logits, labels) => {
                let (r, c) = self.dims(*logits);
                let lv = self.value(*logits).data();
                let mut gl = vec![0.0; r * c];
                for i in 0..r {
                    let p = softmax(&lv[i * c..(i + 1) * c]);
                    for k in 0..c {
                        let onehot = if k == labels[i] { 1.0 } else { 0.0 };
                        gl[i * c + k] = g[i] * (p[k] - onehot);
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
            &Op::KlSoftmax(pl, ql) => {
                let (r, c) = self.dims(pl);
                let (pv, qv) = (self.value(pl).data(), self.value(ql).data());
                let mut gp = vec![0.0; r * c];
                let mut gq = vec![0.0; r * c];
                for i in 0..r {
                    let p = softmax(&pv[i * c..(i + 1) * c]);
                    let q = softmax(&qv[i * c..(i + 1) * c]);
                    let lp: Vec<f64> = p.iter().map(|&v| v.max(PROB_FLOOR).ln()).collect();
                    let lq: Vec<f64> = q.iter().map(|&v| v.max(PROB_FLOOR).ln()).collect();
                    // d log p_i / d logit only flows through unfloored entries.
                    let live_p: Vec<f64> = p.iter().map(|&v| if v > PROB_FLOOR { v } else { 0.0 }).collect();
                    let live_q: Vec<f64> = p
                        .iter()
                        .zip(&q)
                        .map(|(&pi, &qi)| if qi > PROB_FLOOR { pi } else { 0.0 })
                        .collect();
                    let d: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| a - b).collect();
                    let pd: f64 = p.iter().zip(&d).map(|(a, b)| a * b).sum();
                    let live_p_sum: f64 = live_p.iter().sum();
                    let live_q_sum: f64 = live_q.iter().sum();
                    for k in 0..c {
                        gp[i * c + k] = g[i] * (p[k] * d[k] - p[k] * pd + live_p[k] - p[k] * live_p_sum);
                        gq[i * c + k] = g[i] * (-live_q[k] + q[k] * live_q_sum);
                    }
                }
                self.accumulate(grads, pl, gp);
                self.accumulate(grads, ql, gq);
            }
        }
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `v . w / (|v| |w|)`, or 0 when either norm is below [`COSINE_EPS`].
pub fn cosine_similarity(v: &[f64], w: &[f64]) -> f64 {
    let (nv, nw) = (tensor::dot(v, v).sqrt(), tensor::dot(w, w).sqrt());
    if nv < COSINE_EPS || nw < COSINE_EPS {
        return 0.0;
    }
    tensor::dot(v, w) / (nv * nw)
}

fn kl_div_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln()))
        .sum()
}

/// `sum_i p_i log(p_i / q_i)` with both distributions floored at [`PROB_FLOOR`].
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("kl_div: {} vs {}", p.len(), q.len())));
    }
    Ok(kl_div_unchecked(p, q))
}
