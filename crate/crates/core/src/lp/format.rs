//! CPLEX LP text format, for cross-checking against external solvers.

use std::fmt::Write;

use super::{LpProblem, Relation};

fn linear_expr(coeffs: &[f64]) -> String {
    let mut s = String::new();
    for (j, &c) in coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0) {
        let sign = if c < 0.0 { '-' } else { '+' };
        write!(s, " {sign} {:?} x{j}", c.abs()).expect("write to string");
    }
    if s.is_empty() {
        s.push_str(" 0 x0");
    }
    s
}

pub fn to_lp_format(p: &LpProblem) -> String {
    let mut out = String::from("Maximize\n obj:");
    out.push_str(&linear_expr(&p.objective));
    out.push_str("\nSubject To\n");
    for (i, r) in p.rows.iter().enumerate() {
        let rel = match r.relation {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        writeln!(out, " c{i}:{} {rel} {:?}", linear_expr(&r.coeffs), r.rhs).expect("write to string");
    }
    out.push_str("Bounds\n");
    for j in 0..p.num_vars() {
        let (l, u) = (p.lower[j], p.upper[j]);
        let line = match (l.is_finite(), u.is_finite()) {
            (false, false) => format!(" x{j} free"),
            (true, true) if l == u => format!(" x{j} = {l:?}"),
            (true, true) => format!(" {l:?} <= x{j} <= {u:?}"),
            (true, false) => format!(" x{j} >= {l:?}"),
            (false, true) => format!(" -inf <= x{j} <= {u:?}"),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_sections() {
        let mut p = LpProblem::new(2);
        p.objective = vec![1.0, -2.0];
        p.add_row(vec![1.0, 1.0], Relation::Le, 1.0);
        p.set_bounds(1, f64::NEG_INFINITY, f64::INFINITY);
        let s = to_lp_format(&p);
        assert!(s.contains("obj: + 1.0 x0 - 2.0 x1"), "{s}");
        assert!(s.contains("c0: + 1.0 x0 + 1.0 x1 <= 1.0"));
        assert!(s.contains("x0 >= 0.0") && s.contains("x1 free") && s.ends_with("End\n"));
    }
}
