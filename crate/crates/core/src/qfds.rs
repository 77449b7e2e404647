//! Exemplar selection and replay-buffer assembly.
//!
//! Feature-based selection works per class. The class mean `mu` of the
//! extracted features is fixed up front. Selection then alternates a uniform
//! random draw from the unselected candidates with a greedy pick of the
//! candidate that brings the mean of the selected set closest (Euclidean) to
//! `mu`. Greedy ties go to the lowest pool index; an odd `num` ends with a
//! single greedy pick. Nothing is selected twice.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aqa::BufferAllocation;
use crate::model::{batch_matrix, Model};
use crate::rng::{derive_seed, seeded_rng, stream};
use crate::task_stream::{Sample, TaskSpec};
use crate::{Error, Result};

/// Maps samples into the feature space used for selection.
pub trait FeatureExtractor {
    fn extract_batch(&self, samples: &[&Sample]) -> Vec<Vec<f64>>;
}

const EXTRACT_CHUNK: usize = 1024;

impl FeatureExtractor for Model {
    fn extract_batch(&self, samples: &[&Sample]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EXTRACT_CHUNK) {
            let x = batch_matrix(chunk);
            out.extend(self.features(x.view()).rows().into_iter().map(|r| r.to_vec()));
        }
        out
    }
}

impl<F> FeatureExtractor for F
where
    F: Fn(&Sample) -> Vec<f64>,
{
    fn extract_batch(&self, samples: &[&Sample]) -> Vec<Vec<f64>> {
        samples.iter().map(|s| self(s)).collect()
    }
}

/// Uses the raw input features.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl FeatureExtractor for Identity {
    fn extract_batch(&self, samples: &[&Sample]) -> Vec<Vec<f64>> {
        samples
            .iter()
            .map(|s| s.features.iter().map(|&v| v as f64).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionStrategy {
    Qfds,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassFeatureSummary {
    pub class_id: usize,
    pub mean: Vec<f64>,
    pub count: usize,
}

/// Per-task, per-class candidate samples, in training-set order.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool<'a> {
    pub tasks: BTreeMap<usize, BTreeMap<usize, Vec<&'a Sample>>>,
}

impl<'a> CandidatePool<'a> {
    pub fn from_tasks(tasks: &'a [TaskSpec]) -> Self {
        let mut pool = CandidatePool::default();
        for task in tasks {
            let classes = pool.tasks.entry(task.task_id).or_default();
            for &c in &task.class_ids {
                classes.insert(c, Vec::new());
            }
            for s in &task.train_set {
                classes.entry(s.label).or_default().push(s);
            }
        }
        pool
    }

    pub fn task_size(&self, task: usize) -> usize {
        self.tasks.get(&task).map_or(0, |c| c.values().map(Vec::len).sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub task_id: usize,
    pub class_id: usize,
    /// Index within the class's candidate pool.
    pub pool_index: usize,
    pub sample: Sample,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayBuffer {
    pub entries: Vec<BufferEntry>,
    pub capacity: usize,
}

impl ReplayBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.entries.iter().map(|e| &e.sample)
    }

    pub fn per_task_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.task_id).or_insert(0) += 1;
        }
        counts
    }

    /// CSV `task_id,class_id,pool_index`.
    pub fn audit_csv(&self) -> String {
        let mut out = String::from("task_id,class_id,pool_index\n");
        for e in &self.entries {
            writeln!(out, "{},{},{}", e.task_id, e.class_id, e.pool_index).unwrap();
        }
        out
    }
}

fn mean_of(features: &[Vec<f64>]) -> Vec<f64> {
    let d = features.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    let n = features.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn as_refs<S: Borrow<Sample>>(pool: &[S]) -> Vec<&Sample> {
    pool.iter().map(Borrow::borrow).collect()
}

/// Exact mean of the extracted features of a single class pool.
pub fn class_feature_mean<S: Borrow<Sample>>(
    pool: &[S],
    extract: &(impl FeatureExtractor + ?Sized),
) -> Result<ClassFeatureSummary> {
    let refs = as_refs(pool);
    let first = refs
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot summarise an empty pool".into()))?;
    let features = extract.extract_batch(&refs);
    Ok(ClassFeatureSummary {
        class_id: first.label,
        mean: mean_of(&features),
        count: refs.len(),
    })
}

/// Euclidean distance between `(sum + x) / count` and `mu`.
fn distance_to_mean(sum: &[f64], x: &[f64], count: f64, mu: &[f64]) -> f64 {
    sum.iter()
        .zip(x)
        .zip(mu)
        .map(|((s, v), m)| {
            let d = (s + v) / count - m;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn check_num(num: usize, len: usize) -> Result<()> {
    if num > len {
        return Err(Error::InvalidArgument(format!(
            "cannot select {num} items from a pool of {len}"
        )));
    }
    Ok(())
}

/// Feature-space selection over precomputed features.
///
/// `pick` receives the ascending list of unselected indices and returns the
/// index to take in the random step. Returns indices in selection order, so
/// positions 1, 3, 5, ... (0-based) and a trailing odd pick are greedy.
pub fn qfds_select_features(
    features: &[Vec<f64>],
    num: usize,
    mut pick: impl FnMut(&[usize]) -> usize,
) -> Result<Vec<usize>> {
    check_num(num, features.len())?;
    if num == 0 {
        return Ok(Vec::new());
    }
    let mu = mean_of(features);
    let mut sum = vec![0.0; mu.len()];
    let mut remaining: Vec<usize> = (0..features.len()).collect();
    let mut selected = Vec::with_capacity(num);

    let take = |idx: usize, remaining: &mut Vec<usize>, sum: &mut Vec<f64>, selected: &mut Vec<usize>| {
        let pos = remaining.binary_search(&idx).expect("pick must come from the unselected set");
        remaining.remove(pos);
        for (s, v) in sum.iter_mut().zip(&features[idx]) {
            *s += v;
        }
        selected.push(idx);
    };

    while selected.len() < num {
        if num - selected.len() >= 2 {
            let r = pick(&remaining);
            take(r, &mut remaining, &mut sum, &mut selected);
        }
        let count = (selected.len() + 1) as f64;
        let mut best = remaining[0];
        let mut best_dist = distance_to_mean(&sum, &features[best], count, &mu);
        for &j in &remaining[1..] {
            let d = distance_to_mean(&sum, &features[j], count, &mu);
            if d < best_dist {
                best = j;
                best_dist = d;
            }
        }
        take(best, &mut remaining, &mut sum, &mut selected);
    }
    Ok(selected)
}

/// Feature-space selection of `num` pool indices, seeded.
pub fn qfds_select<S: Borrow<Sample>>(
    pool: &[S],
    extract: &(impl FeatureExtractor + ?Sized),
    num: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    check_num(num, pool.len())?;
    if num == 0 {
        return Ok(Vec::new());
    }
    let features = extract.extract_batch(&as_refs(pool));
    let mut rng = seeded_rng(seed);
    qfds_select_features(&features, num, |rem| rem[rng.random_range(0..rem.len())])
}

/// Uniform sample of `num` indices without replacement, seeded.
pub fn random_select<S>(pool: &[S], num: usize, seed: u64) -> Result<Vec<usize>> {
    check_num(num, pool.len())?;
    let mut rng = seeded_rng(seed);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), num).into_vec())
}

/// Splits `count` across `classes` slots as evenly as possible, with the
/// remainder going to the lowest class ids.
pub fn split_quota(count: usize, classes: usize) -> Vec<usize> {
    if classes == 0 {
        return Vec::new();
    }
    let base = count / classes;
    let extra = count % classes;
    (0..classes).map(|k| base + usize::from(k < extra)).collect()
}

/// Rebuilds the buffer from scratch: each task's quota is split over its
/// classes and each (task, class) cell is filled by `strategy` with its own
/// random stream seeded from `(seed, task, class)`.
pub fn build_buffer<E>(
    pools: &CandidatePool<'_>,
    alloc: &BufferAllocation,
    extract: &E,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<ReplayBuffer>
where
    E: FeatureExtractor + Sync + ?Sized,
{
    struct Cell<'p, 'a> {
        task: usize,
        class: usize,
        quota: usize,
        pool: &'p [&'a Sample],
    }

    let mut cells = Vec::new();
    for (&task, &count) in &alloc.0 {
        let classes = pools.tasks.get(&task).ok_or_else(|| Error::InfeasibleQuota {
            task,
            reason: "no candidate pool for this task".into(),
        })?;
        if classes.is_empty() {
            if count > 0 {
                return Err(Error::InfeasibleQuota {
                    task,
                    reason: "task has no classes".into(),
                });
            }
            continue;
        }
        for ((&class, pool), quota) in classes.iter().zip(split_quota(count, classes.len())) {
            if quota > pool.len() {
                return Err(Error::InfeasibleQuota {
                    task,
                    reason: format!("class {class} needs {quota} exemplars but has {}", pool.len()),
                });
            }
            cells.push(Cell {
                task,
                class,
                quota,
                pool,
            });
        }
    }

    let picked: Vec<Vec<usize>> = cells
        .par_iter()
        .map(|c| {
            let cell_seed = derive_seed(seed, &[stream::SELECT, c.task as u64, c.class as u64]);
            match (c.quota, strategy) {
                (0, _) => Ok(Vec::new()),
                (_, SelectionStrategy::Qfds) => qfds_select(c.pool, extract, c.quota, cell_seed),
                (_, SelectionStrategy::Random) => random_select(c.pool, c.quota, cell_seed),
            }
        })
        .collect::<Result<_>>()?;

    let entries = cells
        .iter()
        .zip(picked)
        .flat_map(|(c, idx)| {
            idx.into_iter().map(move |i| BufferEntry {
                task_id: c.task,
                class_id: c.class,
                pool_index: i,
                sample: c.pool[i].clone(),
            })
        })
        .collect();

    Ok(ReplayBuffer {
        entries,
        capacity: alloc.total(),
    })
}
