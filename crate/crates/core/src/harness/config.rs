use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aqa::AqaConfig;
use crate::model::TrainConfig;
use crate::qfds::SelectionStrategy;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Synthetic {
        classes_per_task: usize,
        dim: usize,
        samples_per_class: usize,
    },
}

impl StreamSource {
    /// Standard MNIST file names under `dir`.
    pub fn mnist_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        StreamSource::Idx {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    fn default_hidden(&self) -> Vec<usize> {
        match self {
            StreamSource::Idx { .. } => vec![256],
            StreamSource::Synthetic { .. } => vec![64],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Core,
    Er,
    Naive,
    Joint,
    CoreNoAqa,
    CoreNoQfds,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Core,
        Strategy::Er,
        Strategy::Naive,
        Strategy::Joint,
        Strategy::CoreNoAqa,
        Strategy::CoreNoQfds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Core => "core",
            Strategy::Er => "er",
            Strategy::Naive => "naive",
            Strategy::Joint => "joint",
            Strategy::CoreNoAqa => "core_no_aqa",
            Strategy::CoreNoQfds => "core_no_qfds",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown strategy {name:?}")))
    }

    /// What a strategy actually does. `er` is defined as the full method with
    /// both the adaptive allocation and the feature-space selection removed.
    pub fn plan(self) -> RunPlan {
        match self {
            Strategy::Core => RunPlan::full(),
            Strategy::Er => RunPlan::full().ablate(true, true),
            Strategy::CoreNoAqa => RunPlan::full().ablate(true, false),
            Strategy::CoreNoQfds => RunPlan::full().ablate(false, true),
            Strategy::Naive => RunPlan::Naive,
            Strategy::Joint => RunPlan::Joint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationPolicy {
    Adaptive,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPlan {
    Replay {
        allocation: AllocationPolicy,
        selection: SelectionStrategy,
    },
    /// Fine-tuning with no buffer.
    Naive,
    /// One training phase over every task's data.
    Joint,
}

impl RunPlan {
    pub fn full() -> Self {
        RunPlan::Replay {
            allocation: AllocationPolicy::Adaptive,
            selection: SelectionStrategy::Qfds,
        }
    }

    /// Swaps adaptive allocation for uniform and/or feature-space selection
    /// for random. Non-replay plans are returned unchanged.
    pub fn ablate(self, drop_allocation: bool, drop_selection: bool) -> Self {
        match self {
            RunPlan::Replay { allocation, selection } => RunPlan::Replay {
                allocation: if drop_allocation { AllocationPolicy::Uniform } else { allocation },
                selection: if drop_selection { SelectionStrategy::Random } else { selection },
            },
            other => other,
        }
    }

    pub fn uses_buffer(self) -> bool {
        matches!(self, RunPlan::Replay { .. })
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

/// User-facing experiment configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: StreamSource,
    pub num_tasks: usize,
    pub strategy: Strategy,
    #[serde(default)]
    pub aqa: AqaConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Hidden layer widths; defaults to `[256]` for IDX data, `[64]` otherwise.
    #[serde(default)]
    pub hidden_layers: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn new(source: StreamSource, num_tasks: usize, strategy: Strategy) -> Self {
        ExperimentConfig {
            source,
            num_tasks,
            strategy,
            aqa: AqaConfig::default(),
            train: TrainConfig::default(),
            seeds: default_seeds(),
            hidden_layers: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        ExperimentConfig {
            strategy,
            ..self.clone()
        }
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        self.resolve_plan(self.strategy.plan())
    }

    /// Resolves with an explicit plan in place of the strategy's own.
    pub fn resolve_plan(&self, plan: RunPlan) -> Result<ResolvedConfig> {
        let resolved = ResolvedConfig {
            source: self.source.clone(),
            num_tasks: self.num_tasks,
            hidden_layers: self.hidden_layers.clone().unwrap_or_else(|| self.source.default_hidden()),
            plan,
            aqa: plan.uses_buffer().then_some(self.aqa),
            train: self.train.clone(),
            seeds: self.seeds.clone(),
        };
        resolved.validate()?;
        Ok(resolved)
    }
}

/// The effective plan of a run. Two configurations that resolve to the same
/// value run identically, whatever strategy name they were written with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub source: StreamSource,
    pub num_tasks: usize,
    pub hidden_layers: Vec<usize>,
    pub plan: RunPlan,
    /// Absent for plans without a buffer.
    pub aqa: Option<AqaConfig>,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

impl ResolvedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 {
            return Err(Error::Config("num_tasks must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layer widths must be >= 1".into()));
        }
        self.train.validate()?;
        match (self.plan.uses_buffer(), &self.aqa) {
            (true, Some(aqa)) => aqa.validate(),
            (true, None) => Err(Error::Config("replay plan without buffer settings".into())),
            (false, _) => Ok(()),
        }
    }

    /// Canonical JSON bytes.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
