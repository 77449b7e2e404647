//! Randomised checks shared by the integration tests and the acceptance
//! runner. Each returns the worst observed deviation or a description of the
//! first failure.

use core_replay::aqa::{allocate, attention_to_counts, compute_attention, AqaConfig, RawAttention};
use core_replay::forgetting::{
    forgetting_rates, interference_rates, AccuracyHistory, ForgettingRates, InterferenceRates,
};
use core_replay::model::init_model;
use core_replay::qfds::qfds_select_features;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Accuracy in [0,1]; a third of the draws are coarse so that ties, zero
/// drops and plateaus occur.
fn accuracy(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(1.0 / 3.0) {
        rng.random_range(0..=4) as f64 / 4.0
    } else {
        rng.random_range(0.0..=1.0)
    }
}

fn random_history(rng: &mut ChaCha8Rng, tau: usize) -> (Vec<Vec<f64>>, AccuracyHistory) {
    let acc: Vec<Vec<f64>> = (1..=tau).map(|i| (0..i).map(|_| accuracy(rng)).collect()).collect();
    let mut h = AccuracyHistory::new();
    for (i, row) in acc.iter().enumerate() {
        h = h.record_round(i + 1, &to_map(row)).unwrap();
    }
    (acc, h)
}

fn random_forgetting(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.random_range(0..6) {
            0 => 0.0,
            1 => 1.0 - EPS,
            _ => rng.random_range(0.0..1.0 - EPS),
        })
        .collect()
}

fn random_interference(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    softmax(&d)
}

/// Raw attention vector; some are constant so the all-equal branch is hit.
fn random_raw(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if rng.random_bool(0.05) {
        vec![rng.random_range(0.0..5.0); n]
    } else {
        (0..n).map(|_| -(1.0 - rng.random_range(0.0..1.0 - EPS)).ln()).collect()
    }
}

/// Forgetting, interference, attention, softmax and reallocation against the
/// reference formulas, `instances` random cases each. Returns the largest
/// absolute deviation seen.
pub fn equation_oracles(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let tau = rng.random_range(2..=10);
        let (acc, h) = random_history(&mut rng, tau);
        let f = forgetting_rates(&h, tau).unwrap();
        worst = worst.max(max_dev(&to_vec(&f.0), &forgetting(&acc, tau)));
        let i = interference_rates(&h, tau).unwrap();
        worst = worst.max(max_dev(&to_vec(&i.0), &interference(&acc, tau)));

        let n = rng.random_range(1..=12);
        let fv = random_forgetting(&mut rng, n);
        let iv = random_interference(&mut rng, n);
        let raw = compute_attention(&ForgettingRates(to_map(&fv)), &InterferenceRates(to_map(&iv)), n + 1).unwrap();
        worst = worst.max(max_dev(&to_vec(&raw.0), &attention(&fv, &iv)));

        let n = rng.random_range(1..=20);
        let a = random_raw(&mut rng, n);
        let lambda = rng.random_range(1..=5) as f64;
        let alloc = allocate(&RawAttention(to_map(&a)), &AqaConfig { lambda, buffer_capacity: 500 }).unwrap();
        let norm = softmax(&a);
        worst = worst.max(max_dev(&to_vec(&alloc.normalized), &norm));
        // partition and shares are judged on the library's normalised vector
        // so a borderline threshold comparison cannot flip on rounding
        let lib_norm = to_vec(&alloc.normalized);
        let (sr, s) = shares(&lib_norm, lambda);
        for (k, &is_sr) in sr.iter().enumerate() {
            if alloc.partition.spaced_repetition.contains(&(k + 1)) != is_sr {
                return f64::INFINITY;
            }
        }
        worst = worst.max(max_dev(&to_vec(&alloc.shares), &s));

        let cap = rng.random_range(0..=2000);
        let counts = attention_to_counts(&alloc.shares, cap).unwrap();
        let expect = apportion(&to_vec(&alloc.shares), cap);
        let got: Vec<usize> = counts.0.values().copied().collect();
        if got != expect {
            return f64::INFINITY;
        }
    }
    worst
}

/// Allocation invariants over `vectors` random attention vectors.
pub fn aqa_invariants(vectors: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..vectors {
        let n = rng.random_range(1..=20);
        let lambda = rng.random_range(1..=5) as f64;
        let raw = random_raw(&mut rng, n);
        let capacity = if rng.random_bool(0.5) { 500 } else { rng.random_range(0..=5000) };
        let alloc = allocate(&RawAttention(to_map(&raw)), &AqaConfig { lambda, buffer_capacity: capacity })
            .map_err(|e| format!("case {case}: {e}"))?;
        let sum: f64 = alloc.shares.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("case {case}: shares sum to {sum}"));
        }
        let floor = 1.0 / (lambda * n as f64);
        for t in &alloc.partition.spaced_repetition {
            if alloc.shares[t] != floor {
                return Err(format!("case {case}: SR share {} != {floor}", alloc.shares[t]));
            }
        }
        if alloc.partition.spaced_repetition.len() + alloc.partition.targeted_recall.len() != n {
            return Err(format!("case {case}: partition does not cover all tasks"));
        }
        let counts = attention_to_counts(&alloc.shares, capacity).map_err(|e| format!("case {case}: {e}"))?;
        if counts.total() != capacity {
            return Err(format!("case {case}: counts total {} != {capacity}", counts.total()));
        }
        for (t, &c) in &counts.0 {
            if (c as f64 - alloc.shares[t] * capacity as f64).abs() >= 1.0 {
                return Err(format!("case {case}: count {c} too far from quota for task {t}"));
            }
        }
    }
    Ok(())
}

/// Every sequence of random picks, as positions into the ascending list of
/// unselected indices.
fn pick_sequences(pool: usize, num: usize) -> Vec<Vec<usize>> {
    let randoms = num / 2;
    let mut seqs = vec![Vec::new()];
    for r in 0..randoms {
        // before random pick r, 2r items are already taken
        let choices = pool - 2 * r;
        seqs = seqs
            .into_iter()
            .flat_map(|s| {
                (0..choices).map(move |c| {
                    let mut s = s.clone();
                    s.push(c);
                    s
                })
            })
            .collect();
    }
    seqs
}

fn random_features(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let coarse = rng.random_bool(0.3);
    (0..n)
        .map(|_| {
            (0..2)
                .map(|_| {
                    if coarse {
                        rng.random_range(0..3) as f64
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Selection against exhaustive argmin for pools of size `1..=8` and
/// `num <= 4`, enumerating every random pick. Returns the number of
/// sequences checked.
pub fn qfds_brute_force(feature_sets: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for pool in 1..=8 {
        for _ in 0..feature_sets {
            let features = random_features(&mut rng, pool);
            for num in 0..=pool.min(4) {
                for seq in pick_sequences(pool, num) {
                    let mut it = seq.iter();
                    let sel = qfds_select_features(&features, num, |rem| rem[*it.next().unwrap()])
                        .map_err(|e| e.to_string())?;
                    if sel.len() != num {
                        return Err(format!("pool {pool} num {num}: got {} picks", sel.len()));
                    }
                    let mut remaining: Vec<usize> = (0..pool).collect();
                    for (k, &s) in sel.iter().enumerate() {
                        let greedy = k % 2 == 1 || (k + 1 == num && num % 2 == 1);
                        let expect = if greedy {
                            greedy_argmin(&features, &sel[..k])
                        } else {
                            remaining[seq[k / 2]]
                        };
                        if s != expect {
                            return Err(format!(
                                "pool {pool} num {num} picks {seq:?}: step {k} chose {s}, expected {expect}"
                            ));
                        }
                        remaining.retain(|&r| r != s);
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(checked)
}

/// Mean softmax cross-entropy through plain loops over the layers.
pub fn reference_loss(model: &core_replay::model::Model, x: &Array2<f64>, labels: &[usize]) -> f64 {
    let layers = model.layers();
    let mut total = 0.0;
    for (row, &y) in x.rows().into_iter().zip(labels) {
        let mut h: Vec<f64> = row.to_vec();
        for (k, layer) in layers.iter().enumerate() {
            let mut z = vec![0.0; layer.out_dim()];
            for o in 0..layer.out_dim() {
                let mut acc = layer.bias[o];
                for i in 0..layer.in_dim() {
                    acc += layer.weights[[o, i]] * h[i];
                }
                z[o] = if k + 1 < layers.len() { acc.max(0.0) } else { acc };
            }
            h = z;
        }
        let z: f64 = h.iter().map(|v| v.exp()).sum();
        total += -(h[y].exp() / z).ln();
    }
    total / labels.len() as f64
}

const FD_STEP: f64 = 1e-5;
/// Denominator floor so gradients near zero are judged absolutely.
const FD_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Largest per-parameter relative error between analytic and central
/// finite-difference gradients.
pub fn gradient_error(sizes: &[usize], batch: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = init_model(sizes, seed).unwrap();
    // nonzero biases so the bias path is exercised
    for layer in model.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let x = Array2::from_shape_fn((batch, sizes[0]), |_| rng.random_range(0.0..1.0));
    let classes = *sizes.last().unwrap();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();

    let (_, grads) = model.loss_and_gradients(x.view(), &labels);
    let mut worst: f64 = 0.0;
    let central = |model: &mut core_replay::model::Model, set: &dyn Fn(&mut core_replay::model::Model, f64)| {
        set(model, FD_STEP);
        let up = reference_loss(model, &x, &labels);
        set(model, -2.0 * FD_STEP);
        let down = reference_loss(model, &x, &labels);
        set(model, FD_STEP);
        (up - down) / (2.0 * FD_STEP)
    };
    for k in 0..model.layers().len() {
        let (rows, cols) = model.layers()[k].weights.dim();
        for r in 0..rows {
            for c in 0..cols {
                let numeric = central(&mut model, &|m, d| m.layers_mut()[k].weights[[r, c]] += d);
                worst = worst.max(rel_err(grads.weights[k][[r, c]], numeric));
            }
            let numeric = central(&mut model, &|m, d| m.layers_mut()[k].bias[r] += d);
            worst = worst.max(rel_err(grads.bias[k][r], numeric));
        }
    }
    worst
}

/// Gradient check over `models` random architectures with 2 to 4 layers of
/// width 2 to 6, plus the 6-parameter `[2, 2]` case.
pub fn gradient_check(models: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = gradient_error(&[2, 2], 3, seed);
    for m in 0..models {
        let depth = rng.random_range(2..=4);
        let sizes: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=6)).collect();
        worst = worst.max(gradient_error(&sizes, rng.random_range(1..=5), seed ^ m as u64));
    }
    worst
}

