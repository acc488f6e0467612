//! Dense linear programming: problem description, a two-phase
//! bounded-variable primal simplex and an LP-format text dump.

mod format;
mod simplex;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use format::to_lp_format;
pub use simplex::{solve_lp, Simplex};

/// Pivot elements smaller than this are treated as zero.
pub const PIVOT_TOL: f64 = 1e-9;
/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-7;
/// Reduced costs within this of zero count as optimal.
pub const COST_TOL: f64 = 1e-9;
/// Pivot budget per solve.
pub const MAX_PIVOTS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize objective · x` subject to the rows and `lower <= x <= upper`
/// (bounds may be infinite).
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub rows: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// `n` variables in `[0, inf)` with a zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            rows: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.rows.push(Constraint { coeffs, relation, rhs });
        self
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[j] = lower;
        self.upper[j] = upper;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::LpDimension(format!(
                "{n} objective entries, {} lower and {} upper bounds",
                self.lower.len(),
                self.upper.len()
            )));
        }
        if let Some((i, r)) = self.rows.iter().enumerate().find(|(_, r)| r.coeffs.len() != n) {
            return Err(Error::LpDimension(format!("row {i} has {} coefficients for {n} variables", r.coeffs.len())));
        }
        let finite = self.objective.iter().all(|v| v.is_finite())
            && self.rows.iter().all(|r| r.rhs.is_finite() && r.coeffs.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite("LP coefficients".into()));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::LpDimension(format!("variable {j} has bounds [{l}, {u}]")));
            }
        }
        Ok(())
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for r in &self.rows {
            let a: f64 = r.coeffs.iter().zip(x).map(|(c, v)| c * v).sum();
            let viol = match r.relation {
                Relation::Le => a - r.rhs,
                Relation::Ge => r.rhs - a,
                Relation::Eq => (a - r.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Optimal value; `+inf` when unbounded and `NaN` when infeasible.
    pub objective: f64,
    /// Primal point (the last basis point when unbounded; empty when infeasible).
    pub point: Vec<f64>,
}
