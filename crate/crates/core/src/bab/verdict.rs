//! Verification outcomes and their JSON form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictStatus {
    /// The property holds.
    #[serde(rename = "UNSAT")]
    Unsat,
    /// A validated counterexample exists.
    #[serde(rename = "SAT")]
    Sat,
    /// The budget ran out first.
    #[serde(rename = "UNKNOWN")]
    Unknown,
}

impl VerdictStatus {
    /// Process exit code: 0 UNSAT, 1 SAT, 2 UNKNOWN.
    pub fn exit_code(self) -> i32 {
        match self {
            VerdictStatus::Unsat => 0,
            VerdictStatus::Sat => 1,
            VerdictStatus::Unknown => 2,
        }
    }
}

impl std::fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VerdictStatus::Unsat => "UNSAT",
            VerdictStatus::Sat => "SAT",
            VerdictStatus::Unknown => "UNKNOWN",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictStats {
    /// Number of splits performed; a proof at the root explores 0 branches.
    pub branches_explored: usize,
    pub max_depth: usize,
    pub lp_calls: usize,
    /// Seconds spent in the whole search.
    pub wall_time: f64,
    /// Seconds of `wall_time` spent in falsification attacks.
    pub attack_time: f64,
    pub stable_ratio_at_root: f64,
    /// Leaves where a fully split LP produced a point that failed concrete validation.
    pub diagnostics: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    /// Present iff SAT.
    pub counterexample: Option<Vec<f64>>,
    pub stats: VerdictStats,
}

impl Verdict {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?)
    }
}
