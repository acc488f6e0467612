//! Metrics rows, their CSV form and the text table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One method at one radius. The first ten columns are the fixed CSV
/// contract; the rest are extras.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub radius: f64,
    pub test_acc: f64,
    pub unsat_pct: f64,
    pub stable_pct: f64,
    pub time_mean_s: f64,
    /// Mean over UNSAT and UNKNOWN outcomes; empty when every property was SAT.
    pub time_ut_mean_s: Option<f64>,
    pub pgd100_acc: f64,
    pub branches_mean: f64,
    pub n_props: usize,
    pub sat_pct: f64,
    pub unknown_pct: f64,
    pub branches_median: f64,
    /// Set when this cell failed; its metrics are then NaN.
    pub error: Option<String>,
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn cell(v: f64, digits: usize) -> String {
    if v.is_nan() {
        "-".into()
    } else {
        format!("{v:.digits$}")
    }
}

/// Fixed-width table, one line per method and radius.
pub fn report_render(rows: &[MetricsRow]) -> String {
    let header = ["method", "radius", "acc%", "UNSAT%", "Stable%", "Time(s)", "TimeU+T(s)", "PGD100%", "branches", "N"];
    let body: Vec<[String; 10]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                cell(r.radius, 3),
                cell(r.test_acc, 1),
                cell(r.unsat_pct, 1),
                cell(r.stable_pct, 1),
                cell(r.time_mean_s, 3),
                r.time_ut_mean_s.map_or("-".into(), |t| cell(t, 3)),
                cell(r.pgd100_acc, 1),
                cell(r.branches_mean, 1),
                r.n_props.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&widths).enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header.map(String::from));
    line(&mut out, &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for (r, cells) in rows.iter().zip(&body) {
        line(&mut out, cells);
        if let Some(e) = &r.error {
            let _ = writeln!(out, "  error: {e}");
        }
    }
    out
}
