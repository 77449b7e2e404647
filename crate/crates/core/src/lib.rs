//! Forgetting-aware replay for class-incremental learning.
//!
//! The crate is organised around the per-round pipeline of a replay-based
//! continual learner:
//!
//! 1. [`task_stream`] builds an ordered stream of class-disjoint tasks from
//!    IDX image files or a seeded synthetic generator.
//! 2. [`model`] trains a small MLP with a single shared head on the current
//!    task plus the replay buffer, and doubles as the feature extractor.
//! 3. [`forgetting`] records per-round accuracies and derives forgetting and
//!    interference rates.
//! 4. [`aqa`] turns those rates into attention, splits tasks into
//!    spaced-repetition and targeted-recall sets, and apportions buffer slots.
//! 5. [`qfds`] fills each task's slots with exemplars whose feature mean
//!    tracks the class mean, or uniformly at random for the baseline.
//! 6. [`harness`] runs strategies end to end, computes metrics, sweeps the
//!    spaced-repetition factor, runs ablations and writes reports.

pub mod aqa;
pub mod error;
pub mod forgetting;
pub mod harness;
pub mod model;
pub mod qfds;
pub mod rng;
pub mod task_stream;

pub use error::{Error, Result};
