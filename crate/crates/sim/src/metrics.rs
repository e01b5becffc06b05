//! Per-round metric series, as CSV or JSON.
//!
//! CSV columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `round` | 0-based sample index |
//! | `label` | script step that produced the sample |
//! | `last_seq` | last event seq at sample time |
//! | `published` .. `cancelled` | task count per state |
//! | `assets` | admitted asset count \|K\| |
//! | `reuse_paid` | cumulative reuse rewards paid |
//! | `credit_total` | credits held by accounts, escrows and holds |
//! | `top_skill` | best-scoring skill, empty if none |
//! | `top_score` | its capability score |
//! | `top_invocations` | its invocation count |
//! | `top_income` | its creator's reuse income |
//!
//! The JSON form is the full series including per-participant credits.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::runner::{RoundSample, SimReport};
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MetricsFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: [&str; 18] = [
    "round",
    "label",
    "last_seq",
    "published",
    "claimed",
    "in_review",
    "accepted",
    "rejected",
    "finally_rejected",
    "cancelled",
    "assets",
    "reuse_paid",
    "credit_total",
    "top_skill",
    "top_score",
    "top_invocations",
    "top_income",
    "participants",
];

const STATE_COLUMNS: [&str; 7] = [
    "Published",
    "Claimed",
    "InReview",
    "Accepted",
    "Rejected",
    "FinallyRejected",
    "Cancelled",
];

fn csv_row(r: &RoundSample) -> Vec<String> {
    let mut row = vec![r.round.to_string(), r.label.clone(), r.last_seq.to_string()];
    row.extend(
        STATE_COLUMNS
            .iter()
            .map(|s| r.tasks_by_state.get(*s).copied().unwrap_or(0).to_string()),
    );
    row.push(r.assets.to_string());
    row.push(r.reuse_paid.to_string());
    row.push(r.credit_total.to_string());
    match r.top_skills.first() {
        Some(top) => {
            row.push(top.asset.to_string());
            row.push(format!("{:.6}", top.score));
            row.push(top.invocations.to_string());
            row.push(top.creator_income.to_string());
        }
        None => row.extend(["", "", "", ""].map(String::from)),
    }
    row.push(r.credits.len().to_string());
    row
}

pub fn metrics_csv(report: &SimReport) -> Result<String, SimError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| SimError::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in &report.rounds {
        w.write_record(csv_row(r)).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| SimError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn metrics_json(report: &SimReport) -> String {
    serde_json::to_string_pretty(&report.rounds).expect("rounds serialize")
}

/// Write `metrics.csv` or `metrics.json` into `dir`; returns the path.
pub fn emit_metrics(report: &SimReport, format: MetricsFormat, dir: &Path) -> Result<PathBuf, SimError> {
    let (name, body) = match format {
        MetricsFormat::Csv => ("metrics.csv", metrics_csv(report)?),
        MetricsFormat::Json => ("metrics.json", metrics_json(report)),
    };
    std::fs::create_dir_all(dir).map_err(|e| SimError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}
