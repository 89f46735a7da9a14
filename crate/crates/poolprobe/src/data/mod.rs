//! Datasets in and results out.
//!
//! [`synthetic`] builds seed-deterministic toy corpora whose ground truth
//! is known by construction; [`tu`] reads the plain-text benchmark layout
//! (`*_A.txt`, `*_graph_indicator.txt`, ...); [`results`] writes run
//! metrics as CSV or JSON under one fixed schema.

pub mod results;
pub mod synthetic;
pub mod tu;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Label};

/// What the labels mean, and how wide the model head must be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Classification { classes: usize },
    Regression,
}

impl TaskKind {
    pub fn out_dim(&self) -> usize {
        match self {
            TaskKind::Classification { classes } => *classes,
            TaskKind::Regression => 1,
        }
    }
}

/// Where node features came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    NodeLabelOneHot,
    ConstantOnes,
    Continuous,
}

/// Corpus statistics every model spec derives from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub num_graphs: usize,
    pub task: TaskKind,
    /// Exact maximum node count — fixed random assignments are sized by it.
    pub n_max: usize,
    pub feature_dim: usize,
    pub feature_source: FeatureSource,
}

/// Summarize a loaded corpus. Rejects empty corpora, mixed label kinds,
/// and uneven feature widths — each error names the first offending graph.
pub fn meta_from_graphs(
    name: &str,
    source: FeatureSource,
    graphs: &[Graph],
) -> Result<DatasetMeta> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::config(format!("dataset {name} is empty")))?;
    let feature_dim = first.feature_dim();
    let mut n_max = 0usize;
    let mut max_class = None;
    for g in graphs {
        if g.feature_dim() != feature_dim {
            return Err(Error::config(format!(
                "dataset {name}: graph {} has feature width {}, expected {}",
                g.id,
                g.feature_dim(),
                feature_dim
            )));
        }
        n_max = n_max.max(g.num_nodes());
        match (&g.label, &mut max_class) {
            (Label::Class(c), None) if matches!(first.label, Label::Class(_)) => {
                max_class = Some(*c)
            }
            (Label::Class(c), Some(m)) => *m = (*m).max(*c),
            (Label::Value(_), None) if matches!(first.label, Label::Value(_)) => {}
            _ => {
                return Err(Error::config(format!(
                    "dataset {name}: graph {} mixes label kinds",
                    g.id
                )))
            }
        }
    }
    let task = match max_class {
        Some(m) => TaskKind::Classification { classes: m + 1 },
        None => TaskKind::Regression,
    };
    Ok(DatasetMeta {
        name: name.to_string(),
        num_graphs: graphs.len(),
        task,
        n_max,
        feature_dim,
        feature_source: source,
    })
}
