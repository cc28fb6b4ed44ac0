use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use uibcost::metrics::{Aggregation, Point};
use uibcost::roofline::{RidgeFit, SweepTable};
use uibcost::search::{SearchConfig, SearchMode, SearchOutcome};
use uibcost::CostReport;

/// Error marker for internal invariant violations (exit code 3). Anything
/// else that reaches `main` is treated as an input error (exit code 2).
#[derive(Debug)]
pub struct Invariant(pub String);

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invariant violation: {}", self.0)
    }
}

impl std::error::Error for Invariant {}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub version: &'static str,
}

impl Provenance {
    pub fn capture(seed: Option<u64>) -> Self {
        Self {
            args: std::env::args().collect(),
            seed,
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload<'a> {
    Cost(&'a CostReport),
    Sweep(&'a SweepTable),
    Fit {
        target: &'a str,
        models: &'a [String],
        fit: &'a RidgeFit,
    },
    Frontier {
        aggregation: &'a Aggregation,
        targets: &'a [String],
        points: &'a [Point],
        front: &'a [Point],
    },
    Search {
        mode: SearchMode,
        config: &'a SearchConfig,
        outcome: &'a SearchOutcome,
    },
}

/// Everything needed to re-run a command and locate what it wrote.
#[derive(Debug, Serialize)]
pub struct ReportBundle<'a> {
    pub command: Provenance,
    pub payload: Payload<'a>,
    pub emitted: Vec<PathBuf>,
}

impl ReportBundle<'_> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report bundle serializes")
    }

    /// Write `report.json` into `dir` and return its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("report.json");
        write_file(&path, self.to_json().as_bytes())?;
        Ok(path)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
