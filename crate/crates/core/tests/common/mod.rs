//! Reference implementations written straight from the formulas, with no
//! numerical tricks and no code shared with the library.

#![allow(dead_code, clippy::needless_range_loop, clippy::manual_clamp)]

use std::collections::BTreeMap;

pub const EPS: f64 = 1e-6;

/// `acc[i][p]` is the accuracy of task `p+1` after round `i+1` (ragged).
pub fn forgetting(acc: &[Vec<f64>], tau: usize) -> Vec<f64> {
    (0..tau - 1)
        .map(|p| {
            let mut best = f64::NEG_INFINITY;
            for i in p..tau - 1 {
                if acc[i][p] > best {
                    best = acc[i][p];
                }
            }
            let f = best - acc[tau - 1][p];
            if f < 0.0 {
                0.0
            } else if f > 1.0 - EPS {
                1.0 - EPS
            } else {
                f
            }
        })
        .collect()
}

pub fn interference(acc: &[Vec<f64>], tau: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..tau - 1)
        .map(|p| (acc[tau - 2][p] - acc[tau - 1][p]).exp())
        .collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Raw attention for tasks `1..=tau`.
pub fn attention(f: &[f64], i: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = f.iter().map(|fp| -(1.0 - fp).ln()).collect();
    let mut s = 0.0;
    for k in 0..f.len() {
        s += f[k] * i[k];
    }
    a.push(-(1.0 - s).ln());
    a
}

pub fn softmax(a: &[f64]) -> Vec<f64> {
    let z: f64 = a.iter().map(|v| v.exp()).sum();
    a.iter().map(|v| v.exp() / z).collect()
}

/// `(is_spaced_repetition, final share)` per task.
pub fn shares(normalized: &[f64], lambda: f64) -> (Vec<bool>, Vec<f64>) {
    let n = normalized.len() as f64;
    let threshold = 1.0 / (lambda * n);
    let sr: Vec<bool> = normalized.iter().map(|&s| s <= threshold).collect();
    let n_sr = sr.iter().filter(|&&b| b).count() as f64;
    let tr_sum: f64 = normalized.iter().zip(&sr).filter(|(_, &b)| !b).map(|(s, _)| s).sum();
    if n_sr == n {
        return (sr, vec![1.0 / n; normalized.len()]);
    }
    let out = normalized
        .iter()
        .zip(&sr)
        .map(|(&s, &b)| if b { threshold } else { (1.0 - n_sr / (lambda * n)) * s / tr_sum })
        .collect();
    (sr, out)
}

/// Hamilton apportionment by repeated seat assignment: each remaining seat
/// goes to the task whose quota exceeds its seats the most (ties: lower id).
pub fn apportion(shares: &[f64], capacity: usize) -> Vec<usize> {
    let quotas: Vec<f64> = shares.iter().map(|s| s * capacity as f64).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    while seats.iter().sum::<usize>() < capacity {
        let mut best = 0;
        for k in 1..seats.len() {
            if quotas[k] - seats[k] as f64 > quotas[best] - seats[best] as f64 {
                best = k;
            }
        }
        seats[best] += 1;
    }
    seats
}

/// Exhaustive greedy step: index of the unselected candidate minimising the
/// distance between the mean of `selected ∪ {x}` and the pool mean.
pub fn greedy_argmin(features: &[Vec<f64>], selected: &[usize]) -> usize {
    let d = features[0].len();
    let n = features.len();
    let mut mu = vec![0.0; d];
    for f in features {
        for j in 0..d {
            mu[j] += f[j];
        }
    }
    for m in mu.iter_mut() {
        *m /= n as f64;
    }
    let mut prefix = vec![0.0; d];
    for &s in selected {
        for j in 0..d {
            prefix[j] += features[s][j];
        }
    }
    let k = (selected.len() + 1) as f64;
    let mut best: Option<(usize, f64)> = None;
    for x in 0..n {
        if selected.contains(&x) {
            continue;
        }
        let mut sq = 0.0;
        for j in 0..d {
            let diff = (prefix[j] + features[x][j]) / k - mu[j];
            sq += diff * diff;
        }
        let dist = sq.sqrt();
        match best {
            Some((_, b)) if dist >= b => {}
            _ => best = Some((x, dist)),
        }
    }
    best.unwrap().0
}

pub fn to_map(v: &[f64]) -> BTreeMap<usize, f64> {
    v.iter().enumerate().map(|(k, &x)| (k + 1, x)).collect()
}

pub fn to_vec(m: &BTreeMap<usize, f64>) -> Vec<f64> {
    m.values().copied().collect()
}

pub mod checks;
