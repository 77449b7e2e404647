//! Report files.
//!
//! ```text
//! <out>/summary.json
//! <out>/seed_<s>/trajectory.csv    round,task_id,accuracy
//! <out>/seed_<s>/allocations.csv   round,task_id,att_raw,att_norm,partition,att_final,count
//! <out>/seed_<s>/buffer.csv        round,task_id,class_id,pool_index
//! ```
//!
//! Every byte is a function of `(config, seed)` except `wall_time_secs` in
//! the summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentReport, Metrics, ResolvedConfig, SeedRun};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub acc_avg: f64,
    pub acc_min: f64,
    pub final_accuracies: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub fingerprint: String,
    pub config: ResolvedConfig,
    pub acc_avg: f64,
    pub acc_min: f64,
    /// `avg / min` in percent, two decimals.
    pub table_row: String,
    pub seeds: Vec<SeedSummary>,
    pub wall_time_secs: f64,
}

impl Summary {
    pub fn from_report(report: &ExperimentReport) -> Self {
        Summary {
            label: report.label.clone(),
            fingerprint: report.fingerprint.clone(),
            config: report.config.clone(),
            acc_avg: report.metrics.acc_avg,
            acc_min: report.metrics.acc_min,
            table_row: report.metrics.percent_row(),
            seeds: report
                .runs
                .iter()
                .map(|r| SeedSummary {
                    seed: r.seed,
                    acc_avg: r.metrics.acc_avg,
                    acc_min: r.metrics.acc_min,
                    final_accuracies: r.final_accuracies.clone(),
                })
                .collect(),
            wall_time_secs: report.wall_time_secs,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            acc_avg: self.acc_avg,
            acc_min: self.acc_min,
        }
    }
}

fn trajectory_csv(run: &SeedRun) -> String {
    let mut out = String::from("round,task_id,accuracy\n");
    for (round, task, acc) in run.trajectory() {
        writeln!(out, "{round},{task},{acc}").unwrap();
    }
    out
}

fn allocations_csv(run: &SeedRun) -> String {
    let mut out = String::from("round,task_id,att_raw,att_norm,partition,att_final,count\n");
    for r in &run.allocation_trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round, r.task_id, r.att_raw, r.att_norm, r.partition, r.att_final, r.count
        )
        .unwrap();
    }
    out
}

fn buffer_csv(run: &SeedRun) -> String {
    let mut out = String::from("round,task_id,class_id,pool_index\n");
    for r in &run.buffer_audit {
        writeln!(out, "{},{},{},{}", r.round, r.task_id, r.class_id, r.pool_index).unwrap();
    }
    out
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the summary and per-seed CSVs under `out_dir`, returning the paths.
pub fn emit_report(report: &ExperimentReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    for run in &report.runs {
        let dir = out_dir.join(format!("seed_{}", run.seed));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(dir.join("trajectory.csv"), &trajectory_csv(run), &mut written)?;
        write(dir.join("allocations.csv"), &allocations_csv(run), &mut written)?;
        write(dir.join("buffer.csv"), &buffer_csv(run), &mut written)?;
    }

    let summary = serde_json::to_string_pretty(&Summary::from_report(report))?;
    write(out_dir.join("summary.json"), &(summary + "\n"), &mut written)?;
    Ok(written)
}

pub fn read_summary(out_dir: impl AsRef<Path>) -> Result<Summary> {
    let path = out_dir.as_ref().join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
