//! Accuracy history, forgetting rates and interference rates.
//!
//! Round `i` holds the accuracy of every task `p <= i` measured right after
//! training task `i`. Accuracies are fractions in `[0, 1]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::{Error, Result};

/// Upper clamp margin for forgetting rates, keeping `-ln(1 - f)` finite.
pub const FORGETTING_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyHistory {
    rows: Vec<BTreeMap<usize, f64>>,
}

/// Forgetting rate per previous task, clamped into `[0, 1 - eps]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingRates(pub BTreeMap<usize, f64>);

/// Softmax-normalised one-round accuracy drops of previous tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceRates(pub BTreeMap<usize, f64>);

impl AccuracyHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_rounds(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row for 1-based `round`.
    pub fn row(&self, round: usize) -> Option<&BTreeMap<usize, f64>> {
        round.checked_sub(1).and_then(|r| self.rows.get(r))
    }

    /// `Acc^round_task`.
    pub fn get(&self, round: usize, task: usize) -> Option<f64> {
        self.row(round).and_then(|r| r.get(&task).copied())
    }

    pub fn last_row(&self) -> Option<&BTreeMap<usize, f64>> {
        self.rows.last()
    }

    /// Appends `round`, which must directly follow the last recorded round
    /// and carry exactly tasks `1..=round`.
    pub fn record_round(mut self, round: usize, accuracies: &BTreeMap<usize, f64>) -> Result<Self> {
        let expected = self.rows.len() + 1;
        if round != expected {
            return Err(Error::RoundGap { expected, got: round });
        }
        for task in 1..=round {
            if !accuracies.contains_key(&task) {
                return Err(Error::IncompleteRow { round, task });
            }
        }
        for (&task, &acc) in accuracies {
            if task == 0 || task > round {
                return Err(Error::UnexpectedTask { round, task });
            }
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::InvalidArgument(format!(
                    "accuracy {acc} for task {task} in round {round} is outside [0, 1]"
                )));
            }
        }
        self.rows.push(accuracies.clone());
        Ok(self)
    }

    fn require_rounds(&self, tau: usize) -> Result<()> {
        if tau < 2 {
            return Err(Error::InvalidArgument(format!("rates need tau >= 2, got {tau}")));
        }
        if self.rows.len() < tau {
            return Err(Error::InvalidArgument(format!(
                "history holds {} rounds, tau = {tau}",
                self.rows.len()
            )));
        }
        Ok(())
    }

    /// CSV with header `round,task_id,accuracy`, one line per recorded cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,task_id,accuracy\n");
        for (r, row) in self.rows.iter().enumerate() {
            for (task, acc) in row {
                writeln!(out, "{},{},{}", r + 1, task, acc).unwrap();
            }
        }
        out
    }

    /// Inverse of [`AccuracyHistory::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<BTreeMap<usize, f64>> = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::InvalidArgument(format!("trajectory csv line {}: {line:?}", n + 1));
            let mut cols = line.split(',');
            let round: usize = cols.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let task: usize = cols.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let acc: f64 = cols.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            if round == 0 {
                return Err(bad());
            }
            if rows.len() < round {
                rows.resize_with(round, BTreeMap::new);
            }
            rows[round - 1].insert(task, acc);
        }
        rows.into_iter()
            .enumerate()
            .try_fold(AccuracyHistory::new(), |h, (r, row)| h.record_round(r + 1, &row))
    }
}

/// `f_p = clamp(max_{i < tau} Acc^i_p - Acc^tau_p, 0, 1 - eps)` for `p < tau`.
pub fn forgetting_rates(history: &AccuracyHistory, tau: usize) -> Result<ForgettingRates> {
    history.require_rounds(tau)?;
    let current = history.row(tau).unwrap();
    let rates = (1..tau)
        .map(|p| {
            let best = (p..tau)
                .filter_map(|i| history.get(i, p))
                .fold(f64::NEG_INFINITY, f64::max);
            let raw = best - current[&p];
            (p, raw.clamp(0.0, 1.0 - FORGETTING_EPS))
        })
        .collect();
    Ok(ForgettingRates(rates))
}

/// `i_p = softmax_p(Acc^{tau-1}_p - Acc^tau_p)` over `p < tau`.
pub fn interference_rates(history: &AccuracyHistory, tau: usize) -> Result<InterferenceRates> {
    history.require_rounds(tau)?;
    let before = history.row(tau - 1).unwrap();
    let after = history.row(tau).unwrap();
    let drops: Vec<(usize, f64)> = (1..tau).map(|p| (p, before[&p] - after[&p])).collect();
    Ok(InterferenceRates(softmax_map(&drops)))
}

/// Softmax over keyed values, shifted by the maximum for stability.
pub(crate) fn softmax_map(values: &[(usize, f64)]) -> BTreeMap<usize, f64> {
    let max = values.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<(usize, f64)> = values.iter().map(|&(k, v)| (k, (v - max).exp())).collect();
    let sum: f64 = exps.iter().map(|&(_, e)| e).sum();
    exps.into_iter().map(|(k, e)| (k, e / sum)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row(vals: &[f64]) -> BTreeMap<usize, f64> {
        vals.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect()
    }

    /// History where task 1 follows `traj` and later tasks sit at 1.0.
    fn history_for_task1(traj: &[f64]) -> AccuracyHistory {
        let mut h = AccuracyHistory::new();
        for (r, &acc) in traj.iter().enumerate() {
            let mut vals = vec![1.0; r + 1];
            vals[0] = acc;
            h = h.record_round(r + 1, &row(&vals)).unwrap();
        }
        h
    }

    #[test]
    fn record_base_case() {
        let h = AccuracyHistory::new().record_round(1, &row(&[0.97])).unwrap();
        assert_eq!(h.num_rounds(), 1);
        assert_eq!(h.get(1, 1), Some(0.97));
    }

    #[test]
    fn record_rejects_gap_and_incomplete_rows() {
        let h = AccuracyHistory::new().record_round(1, &row(&[0.97])).unwrap();
        let err = h.clone().record_round(3, &row(&[0.1, 0.2, 0.3])).unwrap_err();
        assert!(err.to_string().contains("round gap"));
        let mut partial = BTreeMap::new();
        partial.insert(2, 0.9);
        let err = h.clone().record_round(2, &partial).unwrap_err();
        assert!(matches!(err, Error::IncompleteRow { round: 2, task: 1 }));
        assert!(err.to_string().contains("incomplete row"));
        assert!(h.record_round(2, &row(&[0.5, 0.5, 0.5])).is_err());
    }

    #[test]
    fn forgetting_hand_values() {
        let f = forgetting_rates(&history_for_task1(&[0.95, 0.90, 0.80]), 3).unwrap();
        assert_abs_diff_eq!(f.0[&1], 0.15, epsilon = 1e-12);
        assert_eq!(f.0.keys().copied().collect::<Vec<_>>(), vec![1, 2]);

        let f = forgetting_rates(&history_for_task1(&[0.9, 0.9, 0.9]), 3).unwrap();
        assert_eq!(f.0[&1], 0.0);

        let f = forgetting_rates(&history_for_task1(&[0.5, 0.6]), 2).unwrap();
        assert_eq!(f.0[&1], 0.0);
    }

    #[test]
    fn forgetting_upper_clamp() {
        let f = forgetting_rates(&history_for_task1(&[1.0, 0.0]), 2).unwrap();
        assert_eq!(f.0[&1], 1.0 - FORGETTING_EPS);
    }

    #[test]
    fn interference_hand_values() {
        // two previous tasks with equal drops
        let h = AccuracyHistory::new()
            .record_round(1, &row(&[0.9]))
            .unwrap()
            .record_round(2, &row(&[0.9, 0.9]))
            .unwrap()
            .record_round(3, &row(&[0.8, 0.8, 0.9]))
            .unwrap();
        let i = interference_rates(&h, 3).unwrap();
        assert_abs_diff_eq!(i.0[&1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(i.0[&2], 0.5, epsilon = 1e-12);

        let h = AccuracyHistory::new()
            .record_round(1, &row(&[0.9]))
            .unwrap()
            .record_round(2, &row(&[0.9, 0.9]))
            .unwrap()
            .record_round(3, &row(&[0.9 - std::f64::consts::LN_2, 0.9, 0.9]))
            .unwrap();
        let i = interference_rates(&h, 3).unwrap();
        assert_abs_diff_eq!(i.0[&1], 2.0 / 3.0, epsilon = 1e-4);
        assert_abs_diff_eq!(i.0[&2], 1.0 / 3.0, epsilon = 1e-4);

        let i = interference_rates(&history_for_task1(&[0.9, 0.2]), 2).unwrap();
        assert_eq!(i.0[&1], 1.0);
    }

    #[test]
    fn rates_need_two_rounds() {
        let h = history_for_task1(&[0.9]);
        assert!(forgetting_rates(&h, 1).is_err());
        assert!(interference_rates(&h, 2).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let h = history_for_task1(&[0.95, 0.5, 0.125]);
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), 1 + 6);
        assert_eq!(AccuracyHistory::from_csv(&csv).unwrap(), h);
    }
}
