//! Adaptive quantity allocation.
//!
//! Forgetting and interference rates become per-task attention; a softmax
//! turns attention into a distribution; tasks at or below `1/(lambda*n)` are
//! placed in the spaced-repetition set and pinned to exactly that share,
//! while the remaining mass is split across the targeted-recall set in
//! proportion to their normalised attention. Shares are finally rounded to
//! integer buffer slots by largest remainder.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::forgetting::{softmax_map, ForgettingRates, InterferenceRates};
use crate::{Error, Result};

/// Tolerance on "shares sum to one".
pub const SHARE_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AqaConfig {
    pub lambda: f64,
    pub buffer_capacity: usize,
}

impl Default for AqaConfig {
    fn default() -> Self {
        AqaConfig {
            lambda: 2.0,
            buffer_capacity: 500,
        }
    }
}

impl AqaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 1.0) {
            return Err(Error::Config(format!("lambda must be >= 1, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Raw (unnormalised) attention per task.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAttention(pub BTreeMap<usize, f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Review {
    /// Spaced repetition: pinned to the floor share.
    #[serde(rename = "SR")]
    SpacedRepetition,
    /// Targeted recall: proportional share of the remainder.
    #[serde(rename = "TR")]
    TargetedRecall,
}

impl fmt::Display for Review {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Review::SpacedRepetition => "SR",
            Review::TargetedRecall => "TR",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partition {
    pub spaced_repetition: BTreeSet<usize>,
    pub targeted_recall: BTreeSet<usize>,
}

impl Partition {
    pub fn review_of(&self, task: usize) -> Option<Review> {
        if self.spaced_repetition.contains(&task) {
            Some(Review::SpacedRepetition)
        } else if self.targeted_recall.contains(&task) {
            Some(Review::TargetedRecall)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionAllocation {
    pub raw: BTreeMap<usize, f64>,
    pub normalized: BTreeMap<usize, f64>,
    /// Final per-task share of the buffer; sums to one.
    pub shares: BTreeMap<usize, f64>,
    pub partition: Partition,
}

impl AttentionAllocation {
    /// Equal shares for every task, as used by the non-adaptive baselines.
    /// Raw attention is zero and every task is reported as targeted recall.
    pub fn uniform(tasks: impl IntoIterator<Item = usize>) -> Self {
        let tasks: Vec<usize> = tasks.into_iter().collect();
        let share = 1.0 / tasks.len() as f64;
        AttentionAllocation {
            raw: tasks.iter().map(|&t| (t, 0.0)).collect(),
            normalized: tasks.iter().map(|&t| (t, share)).collect(),
            shares: tasks.iter().map(|&t| (t, share)).collect(),
            partition: Partition {
                spaced_repetition: BTreeSet::new(),
                targeted_recall: tasks.into_iter().collect(),
            },
        }
    }
}

/// Integer buffer slots per task.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BufferAllocation(pub BTreeMap<usize, usize>);

impl BufferAllocation {
    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn get(&self, task: usize) -> usize {
        self.0.get(&task).copied().unwrap_or(0)
    }
}

/// `att_p = -ln(1 - f_p)` for previous tasks and
/// `att_tau = -ln(1 - sum_p f_p * i_p)` for the current one.
pub fn compute_attention(
    forgetting: &ForgettingRates,
    interference: &InterferenceRates,
    tau: usize,
) -> Result<RawAttention> {
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    let expected: Vec<usize> = (1..tau).collect();
    if forgetting.0.keys().copied().ne(expected.iter().copied())
        || interference.0.keys().copied().ne(expected.iter().copied())
    {
        return Err(Error::InvalidArgument(format!(
            "rates must be keyed by tasks 1..{}",
            tau - 1
        )));
    }
    let mut raw: BTreeMap<usize, f64> = forgetting.0.iter().map(|(&p, &f)| (p, -(-f).ln_1p())).collect();
    let mixed: f64 = forgetting.0.iter().map(|(p, &f)| f * interference.0[p]).sum();
    raw.insert(tau, -(-mixed).ln_1p());

    if let Some((t, v)) = raw.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "attention for task {t} is {v}; forgetting rates must lie in [0, 1)"
        )));
    }
    Ok(RawAttention(raw))
}

/// Normalises raw attention and applies the spaced-repetition floor and
/// targeted-recall proportional split.
pub fn allocate(raw: &RawAttention, cfg: &AqaConfig) -> Result<AttentionAllocation> {
    cfg.validate()?;
    if raw.0.is_empty() {
        return Err(Error::InvalidArgument("raw attention is empty".into()));
    }
    let values: Vec<(usize, f64)> = raw.0.iter().map(|(&k, &v)| (k, v)).collect();
    let normalized = softmax_map(&values);

    let n = normalized.len() as f64;
    let floor = 1.0 / (cfg.lambda * n);
    let mut partition = Partition::default();
    for (&task, &s) in &normalized {
        if s <= floor {
            partition.spaced_repetition.insert(task);
        } else {
            partition.targeted_recall.insert(task);
        }
    }

    let shares = if partition.targeted_recall.is_empty() {
        // only reachable at lambda = 1 with exactly uniform attention
        normalized.keys().map(|&t| (t, 1.0 / n)).collect()
    } else {
        let tr_mass: f64 = partition.targeted_recall.iter().map(|t| normalized[t]).sum();
        let remaining = 1.0 - partition.spaced_repetition.len() as f64 / (cfg.lambda * n);
        normalized
            .iter()
            .map(|(&t, &s)| {
                if partition.spaced_repetition.contains(&t) {
                    (t, floor)
                } else {
                    (t, remaining * s / tr_mass)
                }
            })
            .collect()
    };

    Ok(AttentionAllocation {
        raw: raw.0.clone(),
        normalized,
        shares,
        partition,
    })
}

/// Largest-remainder rounding of `share * capacity`; ties go to the lower
/// task id. Counts sum to `capacity` exactly.
pub fn attention_to_counts(shares: &BTreeMap<usize, f64>, capacity: usize) -> Result<BufferAllocation> {
    if shares.is_empty() {
        return Err(Error::InvalidArgument("no shares to round".into()));
    }
    let sum: f64 = shares.values().sum();
    if (sum - 1.0).abs() > SHARE_SUM_TOL || shares.values().any(|&s| s.is_nan() || s < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "shares must be non-negative and sum to 1, got sum {sum}"
        )));
    }

    let cap = capacity as f64;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(shares.len());
    for (&task, &s) in shares {
        let quota = s * cap;
        let whole = quota.floor();
        counts.insert(task, whole as usize);
        remainders.push((task, quota - whole));
    }
    let assigned: usize = counts.values().sum();

    if assigned <= capacity {
        remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(task, _) in remainders.iter().cycle().take(capacity - assigned) {
            *counts.get_mut(&task).unwrap() += 1;
        }
    } else {
        // shares summing a hair above one at very large capacities
        remainders.sort_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let mut excess = assigned - capacity;
        for &(task, _) in remainders.iter().cycle() {
            if excess == 0 {
                break;
            }
            let c = counts.get_mut(&task).unwrap();
            if *c > 0 {
                *c -= 1;
                excess -= 1;
            }
        }
    }
    Ok(BufferAllocation(counts))
}
