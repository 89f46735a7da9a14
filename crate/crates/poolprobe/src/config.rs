//! Experiment configuration: one JSON document drives dataset choice,
//! model family, training schedule, seeds, and output locations.
//!
//! Validation is all-at-once: every offending field is listed in a single
//! error so a config can be fixed in one edit, and nothing is written to
//! disk before the config passes. TU datasets resolve their root directory
//! from the config itself or, when absent, from `POOLPROBE_DATA_DIR`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, DatasetMeta, FeatureSource};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{ModelSpec, PoolFamily};
use crate::train::TrainConfig;

/// Environment variable naming the directory that holds TU dataset folders.
pub const DATA_DIR_ENV: &str = "POOLPROBE_DATA_DIR";

/// Top-level document for `poolprobe train` / `analyze` / `sweep`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisSection,
    pub seeds: Vec<u64>,
    pub output: OutputSection,
    /// Grid axes for `poolprobe sweep`; ignored by the other commands.
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

/// Which corpus to run on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// A TU-format directory `<root>/<name>/<name>_*.txt`. When `dir` is
    /// omitted the root comes from `POOLPROBE_DATA_DIR`.
    Tu {
        #[serde(default)]
        dir: Option<PathBuf>,
        name: String,
    },
    Synthetic {
        task: SyntheticTask,
        #[serde(default = "default_n_graphs")]
        n_graphs: usize,
        #[serde(default = "default_min_nodes")]
        min_nodes: usize,
        #[serde(default = "default_max_nodes")]
        max_nodes: usize,
        /// Feature noise for `cycles_vs_grids`, edge probability for the
        /// random-graph tasks.
        #[serde(default)]
        noise: f64,
        #[serde(default = "default_edge_prob")]
        edge_prob: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_n_graphs() -> usize {
    500
}
fn default_min_nodes() -> usize {
    8
}
fn default_max_nodes() -> usize {
    16
}
fn default_edge_prob() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    CyclesVsGrids,
    TriangleCount,
    FeatureParity,
}

/// Model fields that do not depend on the dataset. Input width, output
/// width, and `n_max` are filled in from [`DatasetMeta`] at build time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(flatten)]
    pub family: PoolFamily,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_two")]
    pub initial_convs: usize,
    #[serde(default = "default_two")]
    pub pool_layers: usize,
    #[serde(default = "default_ratio")]
    pub cluster_ratio: f64,
    #[serde(default)]
    pub keys_per_layer: Vec<usize>,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_hidden() -> usize {
    16
}
fn default_two() -> usize {
    2
}
fn default_ratio() -> f64 {
    0.25
}
fn default_heads() -> usize {
    4
}
fn default_tau() -> f64 {
    1.0
}

impl ModelSection {
    /// Complete the spec against a concrete corpus and seed.
    pub fn to_spec(&self, meta: &DatasetMeta, seed: u64) -> ModelSpec {
        ModelSpec {
            family: self.family,
            in_dim: meta.feature_dim,
            hidden_dim: self.hidden_dim,
            out_dim: meta.task.out_dim(),
            initial_convs: self.initial_convs,
            pool_layers: self.pool_layers,
            cluster_ratio: self.cluster_ratio,
            n_max: meta.n_max,
            keys_per_layer: self.keys_per_layer.clone(),
            heads: self.heads,
            tau: self.tau,
            seed,
        }
    }
}

/// Knobs for `poolprobe analyze`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSection {
    /// Permutations sampled per graph for the invariance gap.
    pub invariance_perms: usize,
    /// How many test graphs to measure.
    pub analysis_graphs: usize,
    /// Also dump raw per-stage embedding matrices.
    pub dump_embeddings: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            invariance_perms: 20,
            analysis_graphs: 5,
            dump_embeddings: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}


/// Where results land.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSection {
    /// Metric-rows file (CSV or JSON per `format`).
    pub path: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
    /// When set, one checkpoint per seed is written here.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

/// Grid for `poolprobe sweep`: the cross-product of the axes is run for
/// both families, and a per-cell gap table compares them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSection {
    pub family_a: PoolFamily,
    pub family_b: PoolFamily,
    #[serde(default = "default_pool_axis")]
    pub pool_layers: Vec<usize>,
    #[serde(default = "default_hidden_axis")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_conv_axis")]
    pub initial_convs: Vec<usize>,
}

fn default_pool_axis() -> Vec<usize> {
    vec![1, 2]
}
fn default_hidden_axis() -> Vec<usize> {
    vec![16]
}
fn default_conv_axis() -> Vec<usize> {
    vec![2]
}

impl ExperimentConfig {
    /// Parse a JSON config file. I/O problems name the path; syntax
    /// problems come back as parse errors. Validation is separate.
    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
    }

    /// Check every field and report all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        if self.seeds.is_empty() {
            bad.push("seeds: must not be empty".into());
        }
        match &self.dataset {
            DatasetConfig::Tu { name, .. } => {
                if name.is_empty() {
                    bad.push("dataset.name: must not be empty".into());
                }
            }
            DatasetConfig::Synthetic {
                n_graphs,
                min_nodes,
                max_nodes,
                noise,
                edge_prob,
                ..
            } => {
                if *n_graphs < 10 {
                    bad.push(format!("dataset.n_graphs: need at least 10, got {n_graphs}"));
                }
                if min_nodes > max_nodes {
                    bad.push(format!(
                        "dataset.min_nodes: {min_nodes} exceeds max_nodes {max_nodes}"
                    ));
                }
                if *noise < 0.0 {
                    bad.push(format!("dataset.noise: must be nonnegative, got {noise}"));
                }
                if !(0.0..=1.0).contains(edge_prob) {
                    bad.push(format!(
                        "dataset.edge_prob: must lie in [0, 1], got {edge_prob}"
                    ));
                }
            }
        }
        if self.model.hidden_dim == 0 {
            bad.push("model.hidden_dim: must be positive".into());
        }
        if self.model.initial_convs == 0 {
            bad.push("model.initial_convs: need at least one convolution".into());
        }
        if !(self.model.cluster_ratio > 0.0 && self.model.cluster_ratio <= 1.0) {
            bad.push(format!(
                "model.cluster_ratio: must lie in (0, 1], got {}",
                self.model.cluster_ratio
            ));
        }
        let t = &self.train;
        if t.max_epochs == 0 {
            bad.push("train.max_epochs: must be positive".into());
        }
        if t.batch_size == 0 {
            bad.push("train.batch_size: must be positive".into());
        }
        if t.lr.is_nan() || t.lr <= 0.0 {
            bad.push(format!("train.lr: must be positive, got {}", t.lr));
        }
        if t.min_lr > t.lr {
            bad.push(format!(
                "train.min_lr: {} exceeds train.lr {}",
                t.min_lr, t.lr
            ));
        }
        if !(t.lr_decay_factor > 0.0 && t.lr_decay_factor <= 1.0) {
            bad.push(format!(
                "train.lr_decay_factor: must lie in (0, 1], got {}",
                t.lr_decay_factor
            ));
        }
        if self.analysis.invariance_perms == 0 {
            bad.push("analysis.invariance_perms: must be positive".into());
        }
        if self.output.path.as_os_str().is_empty() {
            bad.push("output.path: must not be empty".into());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.pool_layers.is_empty() {
                bad.push("sweep.pool_layers: must not be empty".into());
            }
            if sweep.hidden_dims.is_empty() {
                bad.push("sweep.hidden_dims: must not be empty".into());
            }
            if sweep.initial_convs.is_empty() {
                bad.push("sweep.initial_convs: must not be empty".into());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!("invalid config: {}", bad.join("; "))))
        }
    }

    /// Load (or generate) the corpus this config points at.
    pub fn load_dataset(&self) -> Result<(Vec<Graph>, DatasetMeta)> {
        match &self.dataset {
            DatasetConfig::Tu { dir, name } => {
                let dataset_dir = resolve_tu_dir(dir.as_deref(), name)?;
                if !dataset_dir.is_dir() {
                    return Err(Error::config(format!(
                        "dataset directory {} does not exist",
                        dataset_dir.display()
                    )));
                }
                let graphs = data::tu::load_tu(&dataset_dir)?;
                let source = if dataset_dir.join(format!("{name}_node_labels.txt")).exists() {
                    FeatureSource::NodeLabelOneHot
                } else {
                    FeatureSource::ConstantOnes
                };
                let meta = data::meta_from_graphs(name, source, &graphs)?;
                Ok((graphs, meta))
            }
            DatasetConfig::Synthetic {
                task,
                n_graphs,
                min_nodes,
                max_nodes,
                noise,
                edge_prob,
                seed,
            } => {
                let (graphs, name, source) = match task {
                    SyntheticTask::CyclesVsGrids => (
                        data::synthetic::cycles_vs_grids(
                            *n_graphs, *min_nodes, *max_nodes, *noise, *seed,
                        )?,
                        "cycles_vs_grids",
                        if *noise == 0.0 {
                            FeatureSource::ConstantOnes
                        } else {
                            FeatureSource::Continuous
                        },
                    ),
                    SyntheticTask::TriangleCount => (
                        data::synthetic::triangle_count(
                            *n_graphs, *min_nodes, *max_nodes, *edge_prob, *seed,
                        )?,
                        "triangle_count",
                        FeatureSource::ConstantOnes,
                    ),
                    SyntheticTask::FeatureParity => (
                        data::synthetic::feature_parity(
                            *n_graphs, *min_nodes, *max_nodes, *edge_prob, *seed,
                        )?,
                        "feature_parity",
                        FeatureSource::Continuous,
                    ),
                };
                let meta = data::meta_from_graphs(name, source, &graphs)?;
                Ok((graphs, meta))
            }
        }
    }
}

/// Dataset directory for a named TU corpus: `<root>/<name>` where the
/// root is the explicit `dir` or the `POOLPROBE_DATA_DIR` environment
/// variable.
pub fn resolve_tu_dir(dir: Option<&Path>, name: &str) -> Result<PathBuf> {
    match dir {
        Some(root) => Ok(root.join(name)),
        None => match std::env::var_os(DATA_DIR_ENV) {
            Some(root) => Ok(PathBuf::from(root).join(name)),
            None => Err(Error::config(format!(
                "dataset.dir not set and {DATA_DIR_ENV} is undefined; \
                 one of them must point at the dataset root"
            ))),
        },
    }
}
