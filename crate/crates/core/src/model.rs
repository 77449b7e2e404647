//! Feed-forward classifier with one shared output head.
//!
//! Hidden layers use a rectifier; the output layer is linear and trained with
//! softmax cross-entropy over every class in the stream. The penultimate
//! activations double as the feature space for exemplar selection.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, seeded_rng, stream};
use crate::task_stream::Sample;
use crate::{Error, Result};

/// One affine layer; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 1,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Data for one round: the current task's training set plus replayed exemplars.
#[derive(Debug, Clone, Default)]
pub struct TrainingMix<'a> {
    pub current_data: Vec<&'a Sample>,
    pub buffer_data: Vec<&'a Sample>,
}

impl<'a> TrainingMix<'a> {
    pub fn new(current: &'a [Sample], buffer: &'a [Sample]) -> Self {
        TrainingMix {
            current_data: current.iter().collect(),
            buffer_data: buffer.iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.current_data.len() + self.buffer_data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, i: usize) -> &'a Sample {
        if i < self.current_data.len() {
            self.current_data[i]
        } else {
            self.buffer_data[i - self.current_data.len()]
        }
    }
}

/// Parameter gradients, laid out like [`Model`] layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

/// Builds a model with weights uniform in `±sqrt(6 / fan_in)` and zero biases.
pub fn init_model(layer_sizes: &[usize], seed: u64) -> Result<Model> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer sizes must have length >= 2 and entries >= 1, got {layer_sizes:?}"
        )));
    }
    let mut rng = seeded_rng(derive_seed(seed, &[stream::INIT]));
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
            Dense {
                weights,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(Model { layers })
}

fn relu_inplace(z: &mut Array2<f64>) {
    z.mapv_inplace(|v| v.max(0.0));
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Stacks sample features into a `batch x dim` matrix.
pub fn batch_matrix(samples: &[&Sample]) -> Array2<f64> {
    let dim = samples.first().map(|s| s.features.len()).unwrap_or(0);
    let mut x = Array2::zeros((samples.len(), dim));
    for (mut row, s) in x.rows_mut().into_iter().zip(samples) {
        for (dst, &src) in row.iter_mut().zip(&s.features) {
            *dst = src as f64;
        }
    }
    x
}

impl Model {
    /// Assembles a model from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("model needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!("layer {k}: bias length {} != {}", l.bias.len(), l.out_dim())));
            }
            if k > 0 && layers[k - 1].out_dim() != l.in_dim() {
                return Err(Error::Shape(format!(
                    "layer {k}: input {} does not match previous output {}",
                    l.in_dim(),
                    layers[k - 1].out_dim()
                )));
            }
        }
        Ok(Model { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Width of the penultimate layer, i.e. of the feature space.
    pub fn feature_dim(&self) -> usize {
        self.layers.last().unwrap().in_dim()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {dim} features, model expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Returns every layer's post-activation output; element 0 is the input.
    fn forward_all(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&layer.weights.t());
            z += &layer.bias;
            if k < last {
                relu_inplace(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    /// Logits for a `batch x input_dim` matrix.
    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_all(x).pop().unwrap()
    }

    /// Penultimate-layer activations for a batch.
    pub fn features(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for layer in &self.layers[..self.layers.len() - 1] {
            let mut z = h.dot(&layer.weights.t());
            z += &layer.bias;
            relu_inplace(&mut z);
            h = z;
        }
        h
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.logits(x).rows().into_iter().map(argmax).collect()
    }

    /// Mean softmax cross-entropy over the batch and its parameter gradients.
    pub fn loss_and_gradients(&self, x: ArrayView2<f64>, labels: &[usize]) -> (f64, Gradients) {
        let n = x.nrows();
        let acts = self.forward_all(x);
        let logits = acts.last().unwrap();
        let probs = softmax_rows(logits);

        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            // log-sum-exp form stays finite when a probability underflows
            let row = logits.row(i);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        loss /= n as f64;

        let mut delta = probs;
        for (i, &y) in labels.iter().enumerate() {
            delta[[i, y]] -= 1.0;
        }
        delta /= n as f64;

        let num = self.layers.len();
        let mut gw = Vec::with_capacity(num);
        let mut gb = Vec::with_capacity(num);
        for k in (0..num).rev() {
            gw.push(delta.t().dot(&acts[k]));
            gb.push(delta.sum_axis(Axis(0)));
            if k > 0 {
                let mut back = delta.dot(&self.layers[k].weights);
                // relu'(z) is 1 where the stored activation is positive
                ndarray::Zip::from(&mut back)
                    .and(&acts[k])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = back;
            }
        }
        gw.reverse();
        gb.reverse();
        (loss, Gradients { weights: gw, bias: gb })
    }

    fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
            layer.weights.scaled_add(-lr, gw);
            layer.bias.scaled_add(-lr, gb);
        }
    }

    /// Writes the checkpoint layout documented in the README.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let sizes = self.layer_sizes();
        let mut out = Vec::with_capacity(8 * (1 + sizes.len() + self.num_parameters()));
        out.extend_from_slice(&(sizes.len() as u64).to_le_bytes());
        for &s in &sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weights.iter().chain(layer.bias.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut words = bytes.chunks_exact(8).map(|c| c.try_into().unwrap());
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint(format!("length {} is not a multiple of 8", bytes.len())));
        }
        let mut next_u64 = || -> Result<u64> {
            words
                .next()
                .map(u64::from_le_bytes)
                .ok_or_else(|| Error::Checkpoint("unexpected end of header".into()))
        };
        let count = next_u64()? as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Checkpoint(format!("implausible layer count {count}")));
        }
        let sizes = (0..count)
            .map(|_| next_u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let header = 8 * (1 + count);
        let params: usize = sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        if bytes.len() != header + 8 * params {
            return Err(Error::Checkpoint(format!(
                "expected {} bytes for sizes {sizes:?}, found {}",
                header + 8 * params,
                bytes.len()
            )));
        }
        let mut values = bytes[header..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let layers = sizes
            .windows(2)
            .map(|w| {
                let weights = Array2::from_shape_fn((w[1], w[0]), |_| values.next().unwrap());
                let bias = Array1::from_shape_fn(w[1], |_| values.next().unwrap());
                Dense { weights, bias }
            })
            .collect();
        Model::from_layers(layers)
    }
}

/// Runs `cfg.epochs` passes of shuffled mini-batch SGD over the mix.
///
/// The shuffle for epoch `e` is seeded from `(cfg.seed, e)` only.
pub fn train_round(mut model: Model, mix: &TrainingMix<'_>, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    if mix.is_empty() {
        return Err(Error::InvalidArgument("training mix is empty".into()));
    }
    for s in mix.current_data.iter().chain(&mix.buffer_data) {
        model.check_dim(s.features.len())?;
        if s.label >= model.output_dim() {
            return Err(Error::Shape(format!(
                "label {} outside the {}-way head",
                s.label,
                model.output_dim()
            )));
        }
    }

    let mut order: Vec<usize> = (0..mix.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = seeded_rng(derive_seed(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| mix.get(i)).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let x = batch_matrix(&batch);
            let (loss, grads) = model.loss_and_gradients(x.view(), &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            model.sgd_step(&grads, cfg.learning_rate);
        }
        let mean = loss_sum / mix.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1, loss: mean });
        }
    }
    Ok(model)
}

const EVAL_CHUNK: usize = 1024;

/// Fraction of samples whose argmax over the full head matches the label.
pub fn evaluate(model: &Model, test_set: &[Sample]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty set".into()));
    }
    let mut correct = 0usize;
    for chunk in test_set.chunks(EVAL_CHUNK) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        if let Some(s) = refs.first() {
            model.check_dim(s.features.len())?;
        }
        let x = batch_matrix(&refs);
        correct += model
            .predict(x.view())
            .into_iter()
            .zip(chunk)
            .filter(|(p, s)| *p == s.label)
            .count();
    }
    Ok(correct as f64 / test_set.len() as f64)
}

/// Penultimate-layer activations for a single sample.
pub fn extract_features(model: &Model, sample: &Sample) -> Result<Vec<f64>> {
    model.check_dim(sample.features.len())?;
    let x = batch_matrix(&[sample]);
    Ok(model.features(x.view()).row(0).to_vec())
}
