//! Per-step metrics CSV and the run summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mapft_core::optim::StepRow;

use crate::error::{CliError, Result};

pub const CSV_HEADER: &str = "step,lr,loss,alpha,beta,step_ms";

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV line without the terminator. Floats use Rust's shortest
/// round-trip formatting, so identical runs give identical bytes.
pub fn format_row(row: &StepRow) -> String {
    format!(
        "{},{},{},{},{},{}",
        row.step,
        row.lr,
        row.loss,
        opt(row.alpha),
        opt(row.beta),
        opt(row.step_ms)
    )
}

pub fn render(rows: &[StepRow]) -> String {
    let mut out = String::with_capacity(32 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format_row(r));
        out.push('\n');
    }
    out
}

/// Writes `rows` to `path`. With `keep = Some(k)` the first `k` data rows
/// of an existing file are kept and the new rows follow them.
pub fn write_metrics(path: &Path, rows: &[StepRow], keep: Option<usize>) -> Result<()> {
    let mut text = match keep {
        Some(k) if path.exists() => {
            let old = fs::read_to_string(path).map_err(CliError::io(path))?;
            let mut lines = old.lines();
            if lines.next() != Some(CSV_HEADER) {
                return Err(CliError::Checkpoint(format!(
                    "{} has an unexpected header",
                    path.display()
                )));
            }
            let kept: Vec<&str> = lines.take(k).collect();
            if kept.len() != k {
                return Err(CliError::Checkpoint(format!(
                    "{} has {} rows but the checkpoint is at step {k}",
                    path.display(),
                    kept.len()
                )));
            }
            let mut t = format!("{CSV_HEADER}\n");
            for l in kept {
                t.push_str(l);
                t.push('\n');
            }
            t
        }
        _ => format!("{CSV_HEADER}\n"),
    };
    for r in rows {
        text.push_str(&format_row(r));
        text.push('\n');
    }
    fs::write(path, text).map_err(CliError::io(path))
}

/// `key = value` lines in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
