use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use infilter_core::active_update::{PolicyKind, PolicySpec};
use infilter_core::feature_nets::FeatureNetSpec;
use infilter_core::filter_model::{FilterKind, LossKind, TrainConfig};
use infilter_core::filterability::{EstimateMode, Lemma};
use infilter_core::pipeline::{CostModel, DeploymentSpec, Goal};
use infilter_core::redundancy::{RedundancySpec, WorkloadConfig};
use infilter_core::reuse_cache::CacheConfig;
use serde::Deserialize;

use crate::Usage;

fn default_target() -> f64 {
    0.9
}

fn default_tasks() -> usize {
    1
}

/// One JSON file drives one command; each command reads the sections it needs.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,

    #[serde(default)]
    pub workload: Option<WorkloadConfig>,
    #[serde(default)]
    pub redundancy: Option<RedundancySpec>,
    #[serde(default)]
    pub n: Option<usize>,

    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub filter: Option<FilterSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,

    #[serde(default)]
    pub mode: Option<FilterKind>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub cache: Option<CacheConfig>,
    #[serde(default = "default_target")]
    pub target_accuracy: f64,
    #[serde(default)]
    pub baseline: Option<BaselineSection>,

    #[serde(default)]
    pub cost: Option<CostModel>,
    #[serde(default)]
    pub goal: Option<Goal>,
    #[serde(default)]
    pub deployment: Option<DeploymentSection>,

    #[serde(default)]
    pub policy: Option<PolicySpec>,
    #[serde(default)]
    pub policies: Option<Vec<PolicyKind>>,

    #[serde(default)]
    pub lemma: Option<Lemma>,
    #[serde(default)]
    pub instances: Option<usize>,
    #[serde(default)]
    pub estimate: Option<EstimateMode>,

    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub kind: FilterKind,
    /// Defaults to a vector net over the dataset's input shape.
    #[serde(default)]
    pub net: Option<FeatureNetSpec>,
    #[serde(default = "default_tasks")]
    pub tasks: usize,
}

/// Training hyper-parameters; the seed comes from the run seed.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub loss: Option<LossKind>,
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::with_seed(seed);
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed,
            loss: self.loss,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    /// Dataset whose labelled inputs serve as the nearest-neighbour pool.
    pub pool: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSection {
    pub spec: DeploymentSpec,
    /// Inputs per second of the inference model `h`.
    pub base_throughput: f64,
    /// Inputs per second of the filter `g`.
    pub filter_throughput: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Usage(format!("config {}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Relative paths are taken from the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn path(&self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        value
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Usage(format!("config is missing `{field}`")).into())
    }
}

pub fn required<'a, T>(field: &str, value: &'a Option<T>) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| Usage(format!("config is missing `{field}`")).into())
}
