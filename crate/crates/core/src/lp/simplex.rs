//! Dense-tableau bounded-variable primal simplex.
//!
//! Columns are the structural variables, one slack per row
//! (`row · x + slack = rhs`) and artificials for rows that the starting point
//! violates. Nonbasic variables sit at a finite bound, or at zero when free.
//! Pricing is Dantzig (largest reduced cost, lowest index on ties) and switches
//! to Bland's rule after `2 (n + m)` consecutive degenerate pivots.

use super::{LpOutcome, LpProblem, LpStatus, Relation, COST_TOL, FEAS_TOL, MAX_PIVOTS, PIVOT_TOL};
use crate::par;
use crate::{Error, Result};

enum Step {
    Optimal,
    Unbounded,
}

/// A simplex tableau that stays primal feasible across objectives, so a
/// sequence of objectives over the same constraints is warm-started.
#[derive(Clone, Debug)]
pub struct Simplex {
    n: usize,
    m: usize,
    cols: usize,
    art_start: usize,
    /// Row-major `[m, cols]`, holds `B^-1 [A | I | art]`.
    tab: Vec<f64>,
    /// `B^-1 b`
    rhs: Vec<f64>,
    basis: Vec<usize>,
    basic_row: Vec<Option<usize>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    val: Vec<f64>,
    /// `None` until phase 1 has run.
    feasible: Option<bool>,
    pivots: usize,
    rhs_scale: f64,
}

impl Simplex {
    pub fn new(p: &LpProblem) -> Result<Self> {
        p.validate()?;
        let n = p.num_vars();
        let m = p.rows.len();
        let mut lo = p.lower.clone();
        let mut hi = p.upper.clone();
        let mut val: Vec<f64> = (0..n)
            .map(|j| {
                if lo[j].is_finite() {
                    lo[j]
                } else if hi[j].is_finite() {
                    hi[j]
                } else {
                    0.0
                }
            })
            .collect();
        for r in &p.rows {
            let (l, u) = match r.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lo.push(l);
            hi.push(u);
        }
        // Decide per row whether the slack can start basic.
        let mut art_rows = Vec::new();
        let mut slack_val = Vec::with_capacity(m);
        for (i, r) in p.rows.iter().enumerate() {
            let activity: f64 = r.coeffs.iter().zip(&val).map(|(a, x)| a * x).sum();
            let s = r.rhs - activity;
            let (l, u) = (lo[n + i], hi[n + i]);
            if s < l - FEAS_TOL || s > u + FEAS_TOL {
                art_rows.push(i);
                slack_val.push(if s < l { l } else { u });
            } else {
                slack_val.push(s);
            }
        }
        val.extend(slack_val);
        let art_start = n + m;
        let cols = art_start + art_rows.len();
        lo.extend(std::iter::repeat_n(0.0, art_rows.len()));
        hi.extend(std::iter::repeat_n(f64::INFINITY, art_rows.len()));
        val.extend(std::iter::repeat_n(0.0, art_rows.len()));

        let mut tab = vec![0.0; m * cols];
        let mut rhs = vec![0.0; m];
        let mut basis = vec![0; m];
        let mut basic_row = vec![None; cols];
        let mut art_of_row = vec![None; m];
        for (k, &i) in art_rows.iter().enumerate() {
            art_of_row[i] = Some(art_start + k);
        }
        for (i, r) in p.rows.iter().enumerate() {
            let row = &mut tab[i * cols..(i + 1) * cols];
            row[..n].copy_from_slice(&r.coeffs);
            row[n + i] = 1.0;
            rhs[i] = r.rhs;
            match art_of_row[i] {
                Some(a) => {
                    // Residual left for the artificial; its sign makes the artificial start non-negative.
                    let activity: f64 = row[..n].iter().zip(&val[..n]).map(|(c, x)| c * x).sum::<f64>() + val[n + i];
                    let sigma = if r.rhs - activity >= 0.0 { 1.0 } else { -1.0 };
                    row[a] = sigma;
                    if sigma < 0.0 {
                        row.iter_mut().for_each(|v| *v = -*v);
                        rhs[i] = -rhs[i];
                    }
                    basis[i] = a;
                    basic_row[a] = Some(i);
                }
                None => {
                    basis[i] = n + i;
                    basic_row[n + i] = Some(i);
                }
            }
        }
        let rhs_scale = p.rows.iter().map(|r| r.rhs.abs()).fold(1.0, f64::max);
        let mut s = Self {
            n,
            m,
            cols,
            art_start,
            tab,
            rhs,
            basis,
            basic_row,
            lo,
            hi,
            val,
            feasible: None,
            pivots: 0,
            rhs_scale,
        };
        s.recompute_basic();
        Ok(s)
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Total pivots performed so far.
    pub fn pivots(&self) -> usize {
        self.pivots
    }

    fn recompute_basic(&mut self) {
        let cols = self.cols;
        for i in 0..self.m {
            let row = &self.tab[i * cols..(i + 1) * cols];
            let mut v = self.rhs[i];
            for (j, &t) in row.iter().enumerate() {
                if t != 0.0 && self.basic_row[j].is_none() {
                    v -= t * self.val[j];
                }
            }
            self.val[self.basis[i]] = v;
        }
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.tab[i * self.cols..(i + 1) * self.cols];
                d.iter_mut().zip(row).for_each(|(dj, t)| *dj -= cb * t);
            }
        }
        for &b in &self.basis {
            d[b] = 0.0;
        }
        d
    }

    fn pivot(&mut self, r: usize, j: usize, d: &mut [f64]) {
        let cols = self.cols;
        let p = self.tab[r * cols + j];
        let mut prow: Vec<f64> = self.tab[r * cols..(r + 1) * cols].iter().map(|v| v / p).collect();
        prow[j] = 1.0;
        let prhs = self.rhs[r] / p;
        let col: Vec<f64> = (0..self.m).map(|i| self.tab[i * cols + j]).collect();
        par::for_each_chunk_mut(&mut self.tab, cols, |i, row| {
            if i == r {
                row.copy_from_slice(&prow);
            } else if col[i] != 0.0 {
                let f = col[i];
                row.iter_mut().zip(&prow).for_each(|(v, pv)| *v -= f * pv);
                row[j] = 0.0;
            }
        });
        for i in 0..self.m {
            if i == r {
                self.rhs[i] = prhs;
            } else if col[i] != 0.0 {
                self.rhs[i] -= col[i] * prhs;
            }
        }
        let dj = d[j];
        if dj != 0.0 {
            d.iter_mut().zip(&prow).for_each(|(v, pv)| *v -= dj * pv);
        }
        d[j] = 0.0;
        let leaving = self.basis[r];
        self.basic_row[leaving] = None;
        self.basis[r] = j;
        self.basic_row[j] = Some(r);
        self.pivots += 1;
    }

    /// Maximizes `cost · columns` from the current feasible basis.
    fn iterate(&mut self, cost: &[f64]) -> Result<Step> {
        let mut d = self.reduced_costs(cost);
        let degenerate_limit = 2 * (self.n + self.m);
        let mut degenerate = 0usize;
        let mut since_refresh = 0usize;
        let start = self.pivots;
        loop {
            if self.pivots - start >= MAX_PIVOTS {
                return Err(Error::LpStalled(self.pivots - start));
            }
            let bland = degenerate > degenerate_limit;
            // Entering column.
            let mut enter: Option<(usize, bool)> = None;
            let mut best = 0.0;
            for j in 0..self.cols {
                if self.basic_row[j].is_some() || self.lo[j] == self.hi[j] {
                    continue;
                }
                let dj = d[j];
                let up = dj > COST_TOL && self.val[j] < self.hi[j];
                let down = dj < -COST_TOL && self.val[j] > self.lo[j];
                if !(up || down) {
                    continue;
                }
                if bland {
                    enter = Some((j, up));
                    break;
                }
                if dj.abs() > best {
                    best = dj.abs();
                    enter = Some((j, up));
                }
            }
            let Some((j, up)) = enter else {
                return Ok(Step::Optimal);
            };
            let dir = if up { 1.0 } else { -1.0 };

            // Ratio test; `None` leaves the basis unchanged (bound flip).
            let mut theta = self.hi[j] - self.lo[j];
            let mut leave: Option<usize> = None;
            let mut leave_mag = 0.0;
            for i in 0..self.m {
                let a = self.tab[i * self.cols + j];
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let rate = -a * dir;
                let b = self.basis[i];
                let lim = if rate > 0.0 {
                    if !self.hi[b].is_finite() {
                        continue;
                    }
                    (self.hi[b] - self.val[b]).max(0.0) / rate
                } else {
                    if !self.lo[b].is_finite() {
                        continue;
                    }
                    (self.val[b] - self.lo[b]).max(0.0) / -rate
                };
                let tie = if theta.is_finite() { 1e-12 * theta.abs().max(1.0) } else { 0.0 };
                let better = if lim < theta - tie {
                    true
                } else if theta.is_finite() && lim <= theta + tie && leave.is_some() {
                    let cur = self.basis[leave.expect("checked")];
                    if bland {
                        b < cur
                    } else {
                        a.abs() > leave_mag
                    }
                } else {
                    false
                };
                if better {
                    theta = lim;
                    leave = Some(i);
                    leave_mag = a.abs();
                }
            }
            if !theta.is_finite() {
                return Ok(Step::Unbounded);
            }

            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            // Move along the edge.
            if theta > 0.0 {
                for i in 0..self.m {
                    let a = self.tab[i * self.cols + j];
                    if a != 0.0 {
                        self.val[self.basis[i]] -= a * dir * theta;
                    }
                }
            }
            match leave {
                None => {
                    self.val[j] = if up { self.hi[j] } else { self.lo[j] };
                    self.pivots += 1;
                }
                Some(r) => {
                    let b = self.basis[r];
                    let rate = -self.tab[r * self.cols + j] * dir;
                    let at = if rate > 0.0 { self.hi[b] } else { self.lo[b] };
                    self.val[j] += dir * theta;
                    self.pivot(r, j, &mut d);
                    self.val[b] = at;
                }
            }
            since_refresh += 1;
            if since_refresh >= 64 {
                self.recompute_basic();
                since_refresh = 0;
            }
        }
    }

    /// Runs phase 1 once; later calls return the cached answer.
    pub fn is_feasible(&mut self) -> Result<bool> {
        if let Some(f) = self.feasible {
            return Ok(f);
        }
        if self.cols > self.art_start {
            let mut cost = vec![0.0; self.cols];
            cost[self.art_start..].iter_mut().for_each(|c| *c = -1.0);
            self.iterate(&cost)?;
            self.recompute_basic();
            let residual: f64 = self.val[self.art_start..].iter().sum();
            if residual > FEAS_TOL * self.rhs_scale {
                self.feasible = Some(false);
                return Ok(false);
            }
            self.retire_artificials();
        }
        self.feasible = Some(true);
        Ok(true)
    }

    /// Pivots basic artificials out where possible and pins all of them at zero.
    fn retire_artificials(&mut self) {
        let mut d = vec![0.0; self.cols];
        for r in 0..self.m {
            let b = self.basis[r];
            if b < self.art_start {
                continue;
            }
            let row = &self.tab[r * self.cols..(r + 1) * self.cols];
            let candidate = (0..self.art_start)
                .filter(|&j| self.basic_row[j].is_none() && row[j].abs() > PIVOT_TOL)
                .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()).then(b.cmp(&a)));
            if let Some(j) = candidate {
                self.pivot(r, j, &mut d);
                self.val[b] = 0.0;
            }
            // Otherwise the row is redundant and the artificial stays basic at zero.
        }
        for a in self.art_start..self.cols {
            self.lo[a] = 0.0;
            self.hi[a] = 0.0;
            if self.basic_row[a].is_none() {
                self.val[a] = 0.0;
            }
        }
        self.recompute_basic();
    }

    /// Maximizes `objective · x` over the feasible region.
    pub fn maximize(&mut self, objective: &[f64]) -> Result<LpOutcome> {
        if objective.len() != self.n {
            return Err(Error::LpDimension(format!("objective of length {} for {} variables", objective.len(), self.n)));
        }
        if !self.is_feasible()? {
            return Ok(LpOutcome { status: LpStatus::Infeasible, objective: f64::NAN, point: Vec::new() });
        }
        let mut cost = vec![0.0; self.cols];
        cost[..self.n].copy_from_slice(objective);
        let step = self.iterate(&cost)?;
        self.recompute_basic();
        let point = self.val[..self.n].to_vec();
        Ok(match step {
            Step::Optimal => LpOutcome {
                status: LpStatus::Optimal,
                objective: objective.iter().zip(&point).map(|(c, x)| c * x).sum(),
                point,
            },
            Step::Unbounded => LpOutcome { status: LpStatus::Unbounded, objective: f64::INFINITY, point },
        })
    }
}

/// Solves one problem from scratch.
pub fn solve_lp(p: &LpProblem) -> Result<LpOutcome> {
    Simplex::new(p)?.maximize(&p.objective)
}
