//! Experiment orchestration.
//!
//! One run walks the task stream round by round: train on the current task
//! plus the replay buffer, evaluate every task seen so far, then (for replay
//! strategies) allocate buffer slots and reselect exemplars with the freshly
//! trained model as feature extractor.

mod config;
mod report;
mod sweep;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{AllocationPolicy, ExperimentConfig, ResolvedConfig, RunPlan, StreamSource, Strategy};
pub use report::{emit_report, read_summary, SeedSummary, Summary};
pub use sweep::{grid_csv, run_ablation, run_grid_search, AblationRow, AblationTable, GridRow, ABLATION_VARIANTS};

use crate::aqa::{allocate, attention_to_counts, compute_attention, AttentionAllocation, BufferAllocation, RawAttention, Review};
use crate::forgetting::{forgetting_rates, interference_rates, AccuracyHistory};
use crate::model::{evaluate, init_model, train_round, Model, TrainConfig, TrainingMix};
use crate::qfds::{build_buffer, split_quota, CandidatePool, ReplayBuffer};
use crate::rng::{derive_seed, stream};
use crate::task_stream::{load_idx, make_synthetic_stream, split_into_tasks, Sample, TaskStream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc_avg: f64,
    pub acc_min: f64,
}

impl Metrics {
    /// `avg / min` in percent with two decimals, as in a results table.
    pub fn percent_row(&self) -> String {
        format!("{:.2} / {:.2}", 100.0 * self.acc_avg, 100.0 * self.acc_min)
    }

    /// Arithmetic mean of each metric over runs.
    pub fn mean(all: &[Metrics]) -> Metrics {
        let n = all.len() as f64;
        Metrics {
            acc_avg: all.iter().map(|m| m.acc_avg).sum::<f64>() / n,
            acc_min: all.iter().map(|m| m.acc_min).sum::<f64>() / n,
        }
    }
}

/// Mean and minimum of the final-round per-task accuracies.
pub fn compute_metrics(final_round: &BTreeMap<usize, f64>) -> Result<Metrics> {
    if final_round.is_empty() {
        return Err(Error::InvalidArgument("no accuracies to summarise".into()));
    }
    let acc_avg = final_round.values().sum::<f64>() / final_round.len() as f64;
    let acc_min = final_round.values().copied().fold(f64::INFINITY, f64::min);
    Ok(Metrics { acc_avg, acc_min })
}

/// One line of the per-round allocation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationTraceRow {
    pub round: usize,
    pub task_id: usize,
    pub att_raw: f64,
    pub att_norm: f64,
    pub partition: Review,
    pub att_final: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferAuditRow {
    pub round: usize,
    pub task_id: usize,
    pub class_id: usize,
    pub pool_index: usize,
}

/// Everything produced by one `(config, seed)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    /// Per-round history; `None` for the joint upper bound, which is
    /// evaluated once after a single training phase.
    pub history: Option<AccuracyHistory>,
    pub final_accuracies: BTreeMap<usize, f64>,
    pub metrics: Metrics,
    pub allocation_trace: Vec<AllocationTraceRow>,
    pub buffer_audit: Vec<BufferAuditRow>,
}

impl SeedRun {
    /// `(round, task_id, accuracy)` cells in round-major order.
    pub fn trajectory(&self) -> Vec<(usize, usize, f64)> {
        match &self.history {
            Some(h) => (1..=h.num_rounds())
                .flat_map(|r| h.row(r).unwrap().iter().map(move |(&t, &a)| (r, t, a)))
                .collect(),
            None => {
                let last = self.final_accuracies.len();
                self.final_accuracies.iter().map(|(&t, &a)| (last, t, a)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub label: String,
    pub config: ResolvedConfig,
    pub fingerprint: String,
    pub runs: Vec<SeedRun>,
    /// Seed-averaged metrics.
    pub metrics: Metrics,
    pub wall_time_secs: f64,
}

impl ExperimentReport {
    pub fn acc_avg(&self) -> f64 {
        self.metrics.acc_avg
    }

    pub fn acc_min(&self) -> f64 {
        self.metrics.acc_min
    }
}

/// Builds the task stream a seed runs on. IDX streams ignore the seed.
pub fn load_stream(source: &StreamSource, num_tasks: usize, seed: u64) -> Result<TaskStream> {
    match source {
        StreamSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            split_into_tasks(train, test, num_tasks)
        }
        StreamSource::Synthetic {
            classes_per_task,
            dim,
            samples_per_class,
        } => make_synthetic_stream(num_tasks, *classes_per_task, *dim, *samples_per_class, seed),
    }
}

/// Streams for every seed, sharing one copy when the source is seed-free.
pub fn load_streams(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<BTreeMap<u64, Arc<TaskStream>>> {
    match cfg.source {
        StreamSource::Idx { .. } => {
            let shared = Arc::new(load_stream(&cfg.source, cfg.num_tasks, 0)?);
            Ok(seeds.iter().map(|&s| (s, Arc::clone(&shared))).collect())
        }
        StreamSource::Synthetic { .. } => seeds
            .iter()
            .map(|&s| Ok((s, Arc::new(load_stream(&cfg.source, cfg.num_tasks, s)?))))
            .collect(),
    }
}

fn layer_sizes(resolved: &ResolvedConfig, stream: &TaskStream) -> Vec<usize> {
    std::iter::once(stream.input_dim)
        .chain(resolved.hidden_layers.iter().copied())
        .chain(std::iter::once(stream.total_classes))
        .collect()
}

fn round_config(train: &TrainConfig, seed: u64, round: usize) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(seed, &[stream::ROUND, train.seed, round as u64]),
        ..train.clone()
    }
}

fn evaluate_upto(model: &Model, stream: &TaskStream, tau: usize) -> Result<BTreeMap<usize, f64>> {
    (1..=tau)
        .map(|p| Ok((p, evaluate(model, &stream.task(p).test_set)?)))
        .collect()
}

/// Largest count a task can hold given its per-class pool sizes under the
/// even class split.
fn task_capacity(classes: &BTreeMap<usize, Vec<&Sample>>) -> usize {
    let sizes: Vec<usize> = classes.values().map(Vec::len).collect();
    let fits = |k: usize| split_quota(k, sizes.len()).iter().zip(&sizes).all(|(q, s)| q <= s);
    let (mut lo, mut hi) = (0usize, sizes.iter().sum::<usize>());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Caps each task's count at what its pools can supply and hands the excess
/// to tasks with spare room, lowest task id first. A no-op whenever the pools
/// are large enough, which is the normal case.
pub fn fit_to_pools(alloc: &BufferAllocation, pools: &CandidatePool<'_>) -> BufferAllocation {
    let caps: BTreeMap<usize, usize> = alloc
        .0
        .keys()
        .map(|&t| (t, pools.tasks.get(&t).map_or(0, task_capacity)))
        .collect();
    let mut fitted: BTreeMap<usize, usize> = alloc.0.iter().map(|(&t, &c)| (t, c.min(caps[&t]))).collect();
    let mut excess: usize = alloc.0.iter().map(|(t, &c)| c - fitted[t]).sum();
    for (t, count) in fitted.iter_mut() {
        if excess == 0 {
            break;
        }
        let give = (caps[t] - *count).min(excess);
        *count += give;
        excess -= give;
    }
    BufferAllocation(fitted)
}

/// Runs one resolved configuration on one stream and seed.
pub fn run_on_stream(stream: &TaskStream, resolved: &ResolvedConfig, seed: u64) -> Result<SeedRun> {
    resolved.validate()?;
    if stream.num_tasks() != resolved.num_tasks {
        return Err(Error::Config(format!(
            "stream has {} tasks, config expects {}",
            stream.num_tasks(),
            resolved.num_tasks
        )));
    }
    let sizes = layer_sizes(resolved, stream);
    let model = init_model(&sizes, seed)?;
    match resolved.plan {
        RunPlan::Joint => run_joint(stream, resolved, model, seed),
        _ => run_continual(stream, resolved, model, seed),
    }
}

fn run_joint(stream: &TaskStream, resolved: &ResolvedConfig, model: Model, seed: u64) -> Result<SeedRun> {
    let mix = TrainingMix {
        current_data: stream.tasks.iter().flat_map(|t| &t.train_set).collect(),
        buffer_data: Vec::new(),
    };
    let model = train_round(model, &mix, &round_config(&resolved.train, seed, 0))?;
    let final_accuracies = evaluate_upto(&model, stream, stream.num_tasks())?;
    Ok(SeedRun {
        seed,
        history: None,
        metrics: compute_metrics(&final_accuracies)?,
        final_accuracies,
        allocation_trace: Vec::new(),
        buffer_audit: Vec::new(),
    })
}

fn run_continual(stream: &TaskStream, resolved: &ResolvedConfig, mut model: Model, seed: u64) -> Result<SeedRun> {
    let mut history = AccuracyHistory::new();
    let mut buffer = ReplayBuffer::default();
    let mut allocation_trace = Vec::new();
    let mut buffer_audit = Vec::new();

    for tau in 1..=stream.num_tasks() {
        let round = |e: Error| e.in_round(tau);
        let mix = TrainingMix {
            current_data: stream.task(tau).train_set.iter().collect(),
            buffer_data: buffer.samples().collect(),
        };
        model = train_round(model, &mix, &round_config(&resolved.train, seed, tau)).map_err(round)?;
        let accs = evaluate_upto(&model, stream, tau).map_err(round)?;
        history = history.record_round(tau, &accs).map_err(round)?;

        let RunPlan::Replay { allocation, selection } = resolved.plan else {
            continue;
        };
        let aqa = resolved.aqa.expect("replay plans carry an allocation config");
        let attention = match allocation {
            AllocationPolicy::Adaptive => {
                let raw = if tau == 1 {
                    RawAttention([(1, 0.0)].into())
                } else {
                    let f = forgetting_rates(&history, tau).map_err(round)?;
                    let i = interference_rates(&history, tau).map_err(round)?;
                    compute_attention(&f, &i, tau).map_err(round)?
                };
                allocate(&raw, &aqa).map_err(round)?
            }
            AllocationPolicy::Uniform => AttentionAllocation::uniform(1..=tau),
        };
        let pools = CandidatePool::from_tasks(&stream.tasks[..tau]);
        let counts = attention_to_counts(&attention.shares, aqa.buffer_capacity).map_err(round)?;
        let counts = fit_to_pools(&counts, &pools);
        let select_seed = derive_seed(seed, &[stream::SELECT, tau as u64]);
        buffer = build_buffer(&pools, &counts, &model, selection, select_seed).map_err(round)?;

        for task in 1..=tau {
            allocation_trace.push(AllocationTraceRow {
                round: tau,
                task_id: task,
                att_raw: attention.raw[&task],
                att_norm: attention.normalized[&task],
                partition: attention.partition.review_of(task).expect("partition covers all tasks"),
                att_final: attention.shares[&task],
                count: counts.get(task),
            });
        }
        buffer_audit.extend(buffer.entries.iter().map(|e| BufferAuditRow {
            round: tau,
            task_id: e.task_id,
            class_id: e.class_id,
            pool_index: e.pool_index,
        }));
    }

    let final_accuracies = history.last_row().cloned().unwrap_or_default();
    Ok(SeedRun {
        seed,
        metrics: compute_metrics(&final_accuracies)?,
        history: Some(history),
        final_accuracies,
        allocation_trace,
        buffer_audit,
    })
}

/// Runs `resolved` on every seed in parallel and aggregates.
pub fn run_resolved(
    streams: &BTreeMap<u64, Arc<TaskStream>>,
    resolved: &ResolvedConfig,
    label: &str,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let runs = resolved
        .seeds
        .par_iter()
        .map(|&seed| {
            let stream = streams
                .get(&seed)
                .ok_or_else(|| Error::Config(format!("no stream prepared for seed {seed}")))?;
            run_on_stream(stream, resolved, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics = Metrics::mean(&runs.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok(ExperimentReport {
        label: label.to_string(),
        fingerprint: resolved.fingerprint(),
        config: resolved.clone(),
        runs,
        metrics,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs `cfg` for a single seed.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentReport> {
    let mut resolved = cfg.resolve()?;
    resolved.seeds = vec![seed];
    let streams = load_streams(cfg, &[seed])?;
    run_resolved(&streams, &resolved, cfg.strategy.name())
}

/// Runs `cfg` over all of its configured seeds.
pub fn run_seeds(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let resolved = cfg.resolve()?;
    let streams = load_streams(cfg, &resolved.seeds)?;
    run_resolved(&streams, &resolved, cfg.strategy.name())
}
