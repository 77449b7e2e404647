//! Lambda grid search and the four-way ablation.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_streams, run_resolved, ExperimentConfig, Metrics, RunPlan, Strategy};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lambda: f64,
    pub acc_avg: f64,
    pub acc_min: f64,
}

/// Runs `cfg` once per lambda (all seeds each) and returns seed-averaged
/// metrics sorted by lambda.
pub fn run_grid_search(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<GridRow>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateGridPoint(w[0]));
    }
    let configs = sorted
        .iter()
        .map(|&lambda| {
            let mut c = cfg.clone();
            c.aqa.lambda = lambda;
            c.resolve()
        })
        .collect::<Result<Vec<_>>>()?;

    let streams = load_streams(cfg, &cfg.seeds)?;
    configs
        .par_iter()
        .zip(&sorted)
        .map(|(resolved, &lambda)| {
            let report = run_resolved(&streams, resolved, &format!("lambda={lambda}"))?;
            Ok(GridRow {
                lambda,
                acc_avg: report.metrics.acc_avg,
                acc_min: report.metrics.acc_min,
            })
        })
        .collect()
}

/// CSV `lambda,acc_avg,acc_min`.
pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("lambda,acc_avg,acc_min\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.lambda, r.acc_avg, r.acc_min).unwrap();
    }
    out
}

/// Variant names and their plans, in table order.
pub const ABLATION_VARIANTS: [(&str, bool, bool); 4] = [
    ("CORE", false, false),
    ("CORE w/o AQA", true, false),
    ("CORE w/o QFDS", false, true),
    ("CORE w/o QFDS+AQA", true, true),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub plan: RunPlan,
    pub fingerprint: String,
    pub acc_avg: f64,
    pub acc_min: f64,
    pub per_seed: Vec<(u64, Metrics)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Fingerprint of the plain `er` baseline under the same config.
    pub er_fingerprint: String,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// CSV `variant,acc_avg,acc_min,fingerprint`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,acc_avg,acc_min,fingerprint\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.variant, r.acc_avg, r.acc_min, r.fingerprint).unwrap();
        }
        out
    }
}

/// Runs the full method and its three ablations on shared streams, seeds
/// and initialisations. The variant without either component must resolve
/// to exactly the `er` configuration.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<AblationTable> {
    if cfg.strategy != Strategy::Core {
        return Err(Error::Config(format!(
            "ablation starts from strategy \"core\", got {:?}",
            cfg.strategy.name()
        )));
    }
    let er = cfg.with_strategy(Strategy::Er).resolve()?;
    let variants = ABLATION_VARIANTS
        .iter()
        .map(|&(name, drop_aqa, drop_qfds)| Ok((name, cfg.resolve_plan(Strategy::Core.plan().ablate(drop_aqa, drop_qfds))?)))
        .collect::<Result<Vec<_>>>()?;
    let stripped = &variants[3].1;
    if stripped.canonical_json() != er.canonical_json() {
        return Err(Error::Config(
            "ablated variant does not resolve to the er configuration".into(),
        ));
    }

    let streams = load_streams(cfg, &cfg.seeds)?;
    let rows = variants
        .par_iter()
        .map(|(name, resolved)| {
            let report = run_resolved(&streams, resolved, name)?;
            Ok(AblationRow {
                variant: name.to_string(),
                plan: resolved.plan,
                fingerprint: report.fingerprint.clone(),
                acc_avg: report.metrics.acc_avg,
                acc_min: report.metrics.acc_min,
                per_seed: report.runs.iter().map(|r| (r.seed, r.metrics)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        rows,
        er_fingerprint: er.fingerprint(),
    })
}
