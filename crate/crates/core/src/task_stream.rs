//! Task streams: IDX ingestion, class-disjoint task splitting and a seeded
//! synthetic generator.
//!
//! Classes are sorted ascending and assigned to tasks contiguously, so task
//! `k` (1-based) owns classes `(k-1)*m .. k*m` for `m = total / num_tasks`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, seeded_rng, stream};
use crate::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// One labelled example. Features lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    /// 1-based.
    pub task_id: usize,
    /// Sorted ascending.
    pub class_ids: Vec<usize>,
    pub train_set: Vec<Sample>,
    pub test_set: Vec<Sample>,
}

impl TaskSpec {
    pub fn owns(&self, label: usize) -> bool {
        self.class_ids.binary_search(&label).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<TaskSpec>,
    pub input_dim: usize,
    pub total_classes: usize,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Task by 1-based id.
    pub fn task(&self, task_id: usize) -> &TaskSpec {
        &self.tasks[task_id - 1]
    }

    /// Checks disjointness, label routing, id contiguity and feature widths.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, task) in self.tasks.iter().enumerate() {
            if task.task_id != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "task ids must be 1..N, found {} at position {}",
                    task.task_id, i
                )));
            }
            if task.train_set.is_empty() || task.test_set.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "task {} has an empty train or test set",
                    task.task_id
                )));
            }
            for &c in &task.class_ids {
                if !seen.insert(c) {
                    return Err(Error::InvalidArgument(format!(
                        "class {c} appears in more than one task"
                    )));
                }
            }
            for s in task.train_set.iter().chain(&task.test_set) {
                if !task.owns(s.label) {
                    return Err(Error::InvalidArgument(format!(
                        "sample with label {} routed to task {}",
                        s.label, task.task_id
                    )));
                }
                if s.features.len() != self.input_dim {
                    return Err(Error::Shape(format!(
                        "sample has {} features, stream expects {}",
                        s.features.len(),
                        self.input_dim
                    )));
                }
            }
        }
        if seen.len() != self.total_classes || seen.iter().next_back() != Some(&(self.total_classes - 1)) {
            return Err(Error::InvalidArgument(format!(
                "class sets do not cover 0..{}",
                self.total_classes
            )));
        }
        Ok(())
    }
}

/// Dimension sizes parsed from an IDX header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    fn header_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    fn payload_len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn parse_idx(path: &Path, bytes: &[u8], magic: u32, ndims: usize) -> Result<IdxHeader> {
    let found = read_u32_be(bytes, 0).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        expected: 4,
        actual: bytes.len(),
    })?;
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let mut dims = Vec::with_capacity(ndims);
    for k in 0..ndims {
        let d = read_u32_be(bytes, 4 + 4 * k).ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: 4 + 4 * ndims,
            actual: bytes.len(),
        })?;
        dims.push(d);
    }
    let header = IdxHeader { magic, dims };
    let expected = header.header_len() + header.payload_len();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(header)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads just the header of an IDX image (3 dims) or label (1 dim) file.
pub fn read_idx_header(path: impl AsRef<Path>) -> Result<IdxHeader> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    match read_u32_be(&bytes, 0) {
        Some(IDX_LABEL_MAGIC) => parse_idx(path, &bytes, IDX_LABEL_MAGIC, 1),
        _ => parse_idx(path, &bytes, IDX_IMAGE_MAGIC, 3),
    }
}

/// Loads an IDX image/label pair. Pixels are scaled by `1/255`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;

    let ih = parse_idx(images_path, &image_bytes, IDX_IMAGE_MAGIC, 3)?;
    let lh = parse_idx(labels_path, &label_bytes, IDX_LABEL_MAGIC, 1)?;

    let n_images = ih.dims[0] as usize;
    let n_labels = lh.dims[0] as usize;
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let item_len = ih.dims[1] as usize * ih.dims[2] as usize;
    let pixels = &image_bytes[ih.header_len()..];
    let labels = &label_bytes[lh.header_len()..];

    let samples = (0..n_images)
        .map(|i| Sample {
            features: pixels[i * item_len..(i + 1) * item_len]
                .iter()
                .map(|&p| p as f32 / 255.0)
                .collect(),
            label: labels[i] as usize,
        })
        .collect();
    Ok(samples)
}

/// Writes an IDX image file holding `count` images of `rows x cols` bytes.
pub fn write_idx_images(path: impl AsRef<Path>, count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let expected = count as usize * rows as usize * cols as usize;
    if pixels.len() != expected {
        return Err(Error::Shape(format!(
            "{} pixel bytes for {count}x{rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGE_MAGIC, count, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Splits labelled train/test samples into `num_tasks` class-disjoint tasks.
///
/// The label set must be exactly `0..C` with `C` divisible by `num_tasks`.
pub fn split_into_tasks(train: Vec<Sample>, test: Vec<Sample>, num_tasks: usize) -> Result<TaskStream> {
    if num_tasks == 0 {
        return Err(Error::InvalidArgument("num_tasks must be >= 1".into()));
    }
    let classes: BTreeSet<usize> = train.iter().chain(&test).map(|s| s.label).collect();
    let total_classes = classes.len();
    if total_classes == 0 {
        return Err(Error::InvalidArgument("no samples to split".into()));
    }
    if classes.iter().next_back() != Some(&(total_classes - 1)) {
        return Err(Error::InvalidArgument(format!(
            "labels must be contiguous from 0, found {total_classes} classes with max {}",
            classes.iter().next_back().unwrap()
        )));
    }
    if !total_classes.is_multiple_of(num_tasks) {
        return Err(Error::InvalidArgument(format!(
            "{total_classes} classes are not divisible into {num_tasks} tasks"
        )));
    }
    let input_dim = train
        .first()
        .or(test.first())
        .map(|s| s.features.len())
        .unwrap_or(0);

    let per_task = total_classes / num_tasks;
    let mut tasks: Vec<TaskSpec> = (0..num_tasks)
        .map(|k| TaskSpec {
            task_id: k + 1,
            class_ids: (k * per_task..(k + 1) * per_task).collect(),
            train_set: Vec::new(),
            test_set: Vec::new(),
        })
        .collect();
    for s in train {
        tasks[s.label / per_task].train_set.push(s);
    }
    for s in test {
        tasks[s.label / per_task].test_set.push(s);
    }

    let stream = TaskStream {
        tasks,
        input_dim,
        total_classes,
    };
    stream.validate()?;
    Ok(stream)
}

const NOISE_STD: f64 = 0.1;
const MEAN_JITTER: f64 = 0.1;

/// Builds a stream of isotropic Gaussian class clouds.
///
/// Class means sit on corners of the `[0.25, 0.75]^dim` cube, chosen without
/// repetition while enough corners exist, then shifted by a seeded jitter.
/// Each class contributes `samples_per_class` points, split 80/20 into
/// train/test (at least one test point). Values are clamped into `[0, 1]`.
pub fn make_synthetic_stream(
    num_tasks: usize,
    classes_per_task: usize,
    dim: usize,
    samples_per_class: usize,
    seed: u64,
) -> Result<TaskStream> {
    if num_tasks == 0 || classes_per_task == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "num_tasks, classes_per_task and dim must be >= 1".into(),
        ));
    }
    if samples_per_class < 2 {
        return Err(Error::InvalidArgument(
            "samples_per_class must be >= 2 so both train and test are nonempty".into(),
        ));
    }
    let total_classes = num_tasks * classes_per_task;
    let mut rng = seeded_rng(derive_seed(seed, &[stream::SYNTHETIC]));

    let corner_bits = dim.min(20);
    let n_corners = 1usize << corner_bits;
    let codes: Vec<usize> = if n_corners >= total_classes {
        let mut all: Vec<usize> = (0..n_corners).collect();
        all.partial_shuffle(&mut rng, total_classes).0.to_vec()
    } else {
        (0..total_classes).map(|_| rng.random_range(0..n_corners)).collect()
    };

    let means: Vec<Vec<f64>> = codes
        .iter()
        .map(|&code| {
            (0..dim)
                .map(|j| {
                    let corner = if j < corner_bits && (code >> j) & 1 == 1 { 0.75 } else { 0.25 };
                    corner + rng.random_range(-MEAN_JITTER..MEAN_JITTER)
                })
                .collect()
        })
        .collect();

    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let n_test = (samples_per_class / 5).max(1);
    let n_train = samples_per_class - n_test;

    let mut train = Vec::with_capacity(total_classes * n_train);
    let mut test = Vec::with_capacity(total_classes * n_test);
    for (label, mean) in means.iter().enumerate() {
        for i in 0..samples_per_class {
            let features = mean
                .iter()
                .map(|&m| (m + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32)
                .collect();
            let s = Sample { features, label };
            if i < n_train {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }
    split_into_tasks(train, test, num_tasks)
}
