//! Model assembly: one architecture, swappable pooling.
//!
//! Every model is `initial_convs` graph convolutions, then `pool_layers`
//! pooling blocks, then a global mean readout into a one-hidden-layer MLP.
//! What a pooling block looks like depends on the family:
//!
//! * `graclus` / `complement` — a hard partition from greedy matching (on
//!   the graph or its complement), max pooling of node features, hard
//!   coarsening of the adjacency, then one convolution on the coarse graph.
//!   The partition is recomputed per graph from a seed mixed with the graph
//!   id and layer index, so it is deterministic but data-dependent.
//! * `diffpool` — an embedding convolution, a soft assignment (learned from
//!   a convolution, or frozen random, or the feature-projected frozen kind
//!   that restores permutation invariance), then soft pooling of features
//!   and adjacency.
//! * `gmn` — a soft assignment addressed against key vectors (trainable
//!   keys under a student-t kernel, frozen keys under negated distances, or
//!   a frozen random assignment), then `ReLU(S^T q W)`.
//! * `global_mean` — no pooling at all: convolutions then readout, or, in
//!   the structure-agnostic variant, a readout of the raw features straight
//!   into the MLP.
//!
//! Frozen matrices are sampled once at construction and serialized with the
//! trainable parameters, so a checkpoint reproduces outputs exactly.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::clustering::{
    complement_matching, derive_seed, graclus_matching, rng_from, sample_random_assignment,
    RandomDist,
};
use crate::error::{Error, Result};
use crate::graph::{coarsen_hard, Graph, Partition};
use crate::layers::{
    basic_conv, distance_assign, feature_norm, global_mean_readout, kernel_assign, memory_pool,
    mlp_head, soft_pool,
};
use crate::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffPoolVariant {
    /// Assignment from a trained convolution.
    Learned,
    /// Frozen assignment sampled from U(0, 1).
    Uniform,
    /// Frozen assignment sampled from N(0, 1).
    Normal,
    /// Frozen assignment sampled from Bernoulli(0.3).
    Bernoulli,
    /// Frozen projection: the assignment is `X P` with `P` sampled from
    /// N(0, 1) once, which keeps pooling permutation-equivariant.
    InvariantNormal,
}

impl DiffPoolVariant {
    fn dist(self) -> Option<RandomDist> {
        match self {
            DiffPoolVariant::Learned => None,
            DiffPoolVariant::Uniform => Some(RandomDist::Uniform),
            DiffPoolVariant::Normal => Some(RandomDist::Normal),
            DiffPoolVariant::Bernoulli => Some(RandomDist::Bernoulli),
            DiffPoolVariant::InvariantNormal => Some(RandomDist::Normal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmnVariant {
    /// Trainable keys, student-t similarity, learned head mixing.
    Kernel,
    /// Frozen U(0,1) keys, negated euclidean distances.
    Distance,
    /// Frozen random row logits, no keys at all.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineVariant {
    /// Convolutions, then mean readout.
    Conv,
    /// Mean readout of raw features into the MLP; the graph structure is
    /// never consulted.
    Agnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum PoolFamily {
    Graclus,
    Complement,
    Diffpool { variant: DiffPoolVariant },
    Gmn { variant: GmnVariant },
    GlobalMean { variant: BaselineVariant },
}

impl PoolFamily {
    pub fn family_name(&self) -> &'static str {
        match self {
            PoolFamily::Graclus => "graclus",
            PoolFamily::Complement => "complement",
            PoolFamily::Diffpool { .. } => "diffpool",
            PoolFamily::Gmn { .. } => "gmn",
            PoolFamily::GlobalMean { .. } => "global_mean",
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            PoolFamily::Graclus | PoolFamily::Complement => "default",
            PoolFamily::Diffpool { variant } => match variant {
                DiffPoolVariant::Learned => "learned",
                DiffPoolVariant::Uniform => "uniform",
                DiffPoolVariant::Normal => "normal",
                DiffPoolVariant::Bernoulli => "bernoulli",
                DiffPoolVariant::InvariantNormal => "invariant_normal",
            },
            PoolFamily::Gmn { variant } => match variant {
                GmnVariant::Kernel => "kernel",
                GmnVariant::Distance => "distance",
                GmnVariant::Random => "random",
            },
            PoolFamily::GlobalMean { variant } => match variant {
                BaselineVariant::Conv => "conv",
                BaselineVariant::Agnostic => "agnostic",
            },
        }
    }
}

/// Everything needed to build a model deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: PoolFamily,
    /// Node feature dimension of the dataset.
    pub in_dim: usize,
    /// Width of convolutions and the MLP hidden layer.
    pub hidden_dim: usize,
    /// Classifier logits, or 1 for regression.
    pub out_dim: usize,
    /// Convolutions applied before the first pooling block.
    pub initial_convs: usize,
    /// Number of pooling blocks.
    pub pool_layers: usize,
    /// Shrink factor per diffpool level: `k_l = ceil(ratio * k_{l-1})`.
    pub cluster_ratio: f64,
    /// Largest node count the model must handle; sizes frozen assignments
    /// and the diffpool cluster schedule.
    pub n_max: usize,
    /// Keys (clusters) per gmn memory layer; length must equal
    /// `pool_layers` for the gmn family.
    pub keys_per_layer: Vec<usize>,
    /// Kernel heads for the gmn kernel variant.
    pub heads: usize,
    /// Student-t degrees of freedom.
    pub tau: f64,
    /// Master seed: parameter init, frozen matrices, and per-graph
    /// matching orders all derive from it.
    pub seed: u64,
}

/// Desk defaults, matching the config layer: a two-conv, two-pool graclus
/// model for 2-feature, 2-class data on graphs of up to 32 nodes.
impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            family: PoolFamily::Graclus,
            in_dim: 2,
            hidden_dim: 16,
            out_dim: 2,
            initial_convs: 2,
            pool_layers: 2,
            cluster_ratio: 0.25,
            n_max: 32,
            keys_per_layer: Vec::new(),
            heads: 4,
            tau: 1.0,
            seed: 0,
        }
    }
}

impl ModelSpec {
    /// Cluster counts per diffpool level, starting from `n_max`.
    pub fn diffpool_schedule(&self) -> Vec<usize> {
        let mut ks = Vec::with_capacity(self.pool_layers);
        let mut k = self.n_max;
        for _ in 0..self.pool_layers {
            k = ((self.cluster_ratio * k as f64).ceil() as usize).max(1);
            ks.push(k);
        }
        ks
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(msg));
        if self.in_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return fail("model dims must all be at least 1".to_string());
        }
        if self.n_max == 0 {
            return fail("n_max must be at least 1".to_string());
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        let agnostic = matches!(
            self.family,
            PoolFamily::GlobalMean {
                variant: BaselineVariant::Agnostic
            }
        );
        if !agnostic && self.initial_convs == 0 {
            return fail("initial_convs must be at least 1".to_string());
        }
        match self.family {
            PoolFamily::GlobalMean { .. } => {}
            PoolFamily::Gmn { .. } => {
                if self.keys_per_layer.len() != self.pool_layers {
                    return fail(format!(
                        "gmn: keys_per_layer has {} entries for {} pool layers",
                        self.keys_per_layer.len(),
                        self.pool_layers
                    ));
                }
                if self.pool_layers == 0 {
                    return fail("gmn: need at least one pool layer".to_string());
                }
                if self.keys_per_layer.contains(&0) {
                    return fail("gmn: every layer needs at least one key".to_string());
                }
                if self.heads == 0 {
                    return fail("gmn: heads must be at least 1".to_string());
                }
            }
            PoolFamily::Diffpool { .. } => {
                if self.pool_layers == 0 {
                    return fail("diffpool: need at least one pool layer".to_string());
                }
                if !(self.cluster_ratio > 0.0 && self.cluster_ratio <= 1.0) {
                    return fail(format!(
                        "diffpool: cluster_ratio must be in (0, 1], got {}",
                        self.cluster_ratio
                    ));
                }
            }
            PoolFamily::Graclus | PoolFamily::Complement => {
                if self.pool_layers == 0 {
                    return fail("matching families need at least one pool layer".to_string());
                }
            }
        }
        Ok(())
    }
}

/// A named tensor; frozen ones are constants, the rest are parameters.
#[derive(Debug)]
pub struct NamedParam {
    pub name: String,
    pub tensor: Tensor,
}

/// One graph pass, with everything the losses and analyses want to see.
#[derive(Debug)]
pub struct ForwardOut {
    /// Head output, 1 x out_dim.
    pub output: Tensor,
    /// Per soft pooling level: the adjacency fed into the level and the
    /// row-stochastic assignment it produced.
    pub soft_levels: Vec<(Tensor, Tensor)>,
    /// Hard partitions chosen by matching families, one per level.
    pub partitions: Vec<Partition>,
    /// Value snapshots of node embeddings after each named stage.
    pub embeddings: Vec<(String, Mat)>,
}

#[derive(Debug)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<NamedParam>,
    pool_seed: u64,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Model> {
        spec.validate()?;
        let mut rng = rng_from(&[spec.seed, 0x494e_4954]); // init stream
        let pool_seed = derive_seed(&[spec.seed, 0x504f_4f4c]); // matching stream
        let mut params: Vec<NamedParam> = Vec::new();
        let mut add = |name: String, mat: Mat, trainable: bool| {
            let tensor = if trainable {
                Tensor::parameter(mat)
            } else {
                Tensor::constant(mat)
            };
            params.push(NamedParam { name, tensor });
        };

        let agnostic = matches!(
            spec.family,
            PoolFamily::GlobalMean {
                variant: BaselineVariant::Agnostic
            }
        );

        let h = spec.hidden_dim;
        if !agnostic {
            for i in 0..spec.initial_convs {
                let d_in = if i == 0 { spec.in_dim } else { h };
                add(format!("conv{i}.w1"), glorot(d_in, h, &mut rng), true);
                add(format!("conv{i}.w2"), glorot(d_in, h, &mut rng), true);
            }
        }

        match spec.family {
            PoolFamily::Graclus | PoolFamily::Complement => {
                for l in 0..spec.pool_layers {
                    add(format!("pool{l}.conv.w1"), glorot(h, h, &mut rng), true);
                    add(format!("pool{l}.conv.w2"), glorot(h, h, &mut rng), true);
                }
            }
            PoolFamily::Diffpool { variant } => {
                let schedule = spec.diffpool_schedule();
                let mut rows = spec.n_max;
                for (l, &k) in schedule.iter().enumerate() {
                    add(format!("pool{l}.embed.w1"), glorot(h, h, &mut rng), true);
                    add(format!("pool{l}.embed.w2"), glorot(h, h, &mut rng), true);
                    match variant {
                        DiffPoolVariant::Learned => {
                            add(format!("pool{l}.assign.w1"), glorot(h, k, &mut rng), true);
                            add(format!("pool{l}.assign.w2"), glorot(h, k, &mut rng), true);
                        }
                        DiffPoolVariant::InvariantNormal => {
                            let dist = variant.dist().expect("random variant");
                            let proj = sample_random_assignment(h, k, dist, &mut rng);
                            add(format!("pool{l}.fixed_proj"), proj, false);
                        }
                        _ => {
                            let dist = variant.dist().expect("random variant");
                            let s = sample_random_assignment(rows, k, dist, &mut rng);
                            add(format!("pool{l}.fixed_s"), s, false);
                        }
                    }
                    rows = k;
                }
            }
            PoolFamily::Gmn { variant } => {
                let mut rows = spec.n_max;
                for (l, &k) in spec.keys_per_layer.iter().enumerate() {
                    match variant {
                        GmnVariant::Kernel => {
                            for head in 0..spec.heads {
                                let keys =
                                    sample_random_assignment(k, h, RandomDist::Uniform, &mut rng);
                                add(format!("pool{l}.key{head}"), keys, true);
                                add(
                                    format!("pool{l}.head{head}"),
                                    Mat::new(1, 1, vec![1.0 / spec.heads as f64])?,
                                    true,
                                );
                            }
                        }
                        GmnVariant::Distance => {
                            let keys =
                                sample_random_assignment(k, h, RandomDist::Uniform, &mut rng);
                            add(format!("pool{l}.keys"), keys, false);
                        }
                        GmnVariant::Random => {
                            let s =
                                sample_random_assignment(rows, k, RandomDist::Uniform, &mut rng);
                            add(format!("pool{l}.fixed_s"), s, false);
                        }
                    }
                    add(format!("pool{l}.w"), glorot(h, h, &mut rng), true);
                    rows = k;
                }
            }
            PoolFamily::GlobalMean { .. } => {}
        }

        let d_head = if agnostic { spec.in_dim } else { h };
        add("head.w1".to_string(), glorot(d_head, h, &mut rng), true);
        add("head.b1".to_string(), Mat::zeros(1, h), true);
        add("head.w2".to_string(), glorot(h, spec.out_dim, &mut rng), true);
        add("head.b2".to_string(), Mat::zeros(1, spec.out_dim), true);

        Ok(Model {
            spec,
            params,
            pool_seed,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn pool_seed(&self) -> u64 {
        self.pool_seed
    }

    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    fn get(&self, name: &str) -> &Tensor {
        &self
            .params
            .iter()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .tensor
    }

    /// Trainable tensors with names, in construction order.
    pub fn trainable(&self) -> Vec<(&str, Tensor)> {
        self.params
            .iter()
            .filter(|p| p.tensor.is_trainable())
            .map(|p| (p.name.as_str(), p.tensor.clone()))
            .collect()
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.trainable()
            .iter()
            .map(|(_, t)| t.rows() * t.cols())
            .sum()
    }

    /// Whether a parameter belongs to the memory addressing itself (keys
    /// and head mixing weights); the training alternation schedule treats
    /// these differently from all other parameters.
    pub fn is_key_param(name: &str) -> bool {
        name.contains(".key") || name.contains(".head")
    }

    pub fn forward(&self, t: &Tape, g: &Graph) -> Result<ForwardOut> {
        if g.feature_dim() != self.spec.in_dim {
            return Err(Error::contract(format!(
                "graph {} has {} feature columns, model expects {}",
                g.id,
                g.feature_dim(),
                self.spec.in_dim
            )));
        }
        if g.num_nodes() > self.spec.n_max {
            return Err(Error::contract(format!(
                "graph {} has {} nodes, model built for at most {}",
                g.id,
                g.num_nodes(),
                self.spec.n_max
            )));
        }
        let mut out = ForwardOut {
            output: Tensor::scalar(0.0),
            soft_levels: Vec::new(),
            partitions: Vec::new(),
            embeddings: Vec::new(),
        };

        let is_gmn = matches!(self.spec.family, PoolFamily::Gmn { .. });
        let agnostic = matches!(
            self.spec.family,
            PoolFamily::GlobalMean {
                variant: BaselineVariant::Agnostic
            }
        );

        let mut adj_mat = g.adj().clone();
        let mut adj = Tensor::constant(adj_mat.clone());
        let mut x = Tensor::constant(g.features().clone());

        if !agnostic {
            for i in 0..self.spec.initial_convs {
                let w1 = self.get(&format!("conv{i}.w1"));
                let w2 = self.get(&format!("conv{i}.w2"));
                x = basic_conv(t, &adj, &x, w1, w2)?;
                if is_gmn {
                    x = feature_norm(t, &x)?;
                }
                out.embeddings.push((format!("conv{i}"), x.value()));
            }
        }

        match self.spec.family {
            PoolFamily::Graclus | PoolFamily::Complement => {
                for l in 0..self.spec.pool_layers {
                    let mut rng = rng_from(&[self.pool_seed, g.id, l as u64]);
                    let part = match self.spec.family {
                        PoolFamily::Graclus => graclus_matching(&adj_mat, &mut rng)?,
                        _ => complement_matching(&adj_mat, &mut rng)?,
                    };
                    x = t.max_pool_rows(&x, part.assignment(), part.num_clusters())?;
                    adj_mat = coarsen_hard(&adj_mat, &part)?;
                    adj = Tensor::constant(adj_mat.clone());
                    out.partitions.push(part);
                    let w1 = self.get(&format!("pool{l}.conv.w1"));
                    let w2 = self.get(&format!("pool{l}.conv.w2"));
                    x = basic_conv(t, &adj, &x, w1, w2)?;
                    out.embeddings.push((format!("pool{l}"), x.value()));
                }
            }
            PoolFamily::Diffpool { variant } => {
                for (l, &k) in self.spec.diffpool_schedule().iter().enumerate() {
                    let z = basic_conv(
                        t,
                        &adj,
                        &x,
                        self.get(&format!("pool{l}.embed.w1")),
                        self.get(&format!("pool{l}.embed.w2")),
                    )?;
                    let s_raw = match variant {
                        DiffPoolVariant::Learned => basic_conv(
                            t,
                            &adj,
                            &x,
                            self.get(&format!("pool{l}.assign.w1")),
                            self.get(&format!("pool{l}.assign.w2")),
                        )?,
                        DiffPoolVariant::InvariantNormal => {
                            // frozen projection of a detached feature
                            // snapshot: equivariant rows, no gradient into
                            // the assignment path
                            let proj = self.get(&format!("pool{l}.fixed_proj")).value();
                            Tensor::constant(x.value().matmul(&proj)?)
                        }
                        _ => {
                            let full = self.get(&format!("pool{l}.fixed_s")).value();
                            Tensor::constant(full.head_rows(x.rows())?)
                        }
                    };
                    let _ = k;
                    let sp = soft_pool(t, &adj, &z, &s_raw)?;
                    out.soft_levels.push((adj.clone(), sp.s.clone()));
                    x = sp.x;
                    adj = sp.adj;
                    out.embeddings.push((format!("pool{l}"), x.value()));
                }
            }
            PoolFamily::Gmn { variant } => {
                for (l, _) in self.spec.keys_per_layer.iter().enumerate() {
                    let s = match variant {
                        GmnVariant::Kernel => {
                            let keys: Vec<Tensor> = (0..self.spec.heads)
                                .map(|hd| self.get(&format!("pool{l}.key{hd}")).clone())
                                .collect();
                            let weights: Vec<Tensor> = (0..self.spec.heads)
                                .map(|hd| self.get(&format!("pool{l}.head{hd}")).clone())
                                .collect();
                            kernel_assign(t, &x, &keys, &weights, self.spec.tau)?
                        }
                        GmnVariant::Distance => {
                            distance_assign(t, &x, self.get(&format!("pool{l}.keys")))?
                        }
                        GmnVariant::Random => {
                            let full = self.get(&format!("pool{l}.fixed_s")).value();
                            t.softmax_rows(&Tensor::constant(full.head_rows(x.rows())?))
                        }
                    };
                    out.soft_levels.push((adj.clone(), s.clone()));
                    x = memory_pool(t, &x, &s, self.get(&format!("pool{l}.w")))?;
                    out.embeddings.push((format!("pool{l}"), x.value()));
                }
            }
            PoolFamily::GlobalMean { .. } => {}
        }

        let pooled = global_mean_readout(t, &x)?;
        out.output = mlp_head(
            t,
            &pooled,
            self.get("head.w1"),
            self.get("head.b1"),
            self.get("head.w2"),
            self.get("head.b2"),
        )?;
        Ok(out)
    }

    // ── Checkpoints ─────────────────────────────────────────────────

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let tensors: BTreeMap<String, TensorData> = self
            .params
            .iter()
            .map(|p| {
                let m = p.tensor.value();
                (
                    p.name.clone(),
                    TensorData {
                        rows: m.rows(),
                        cols: m.cols(),
                        trainable: p.tensor.is_trainable(),
                        data: m.data().to_vec(),
                    },
                )
            })
            .collect();
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            tensors,
        };
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &ckpt)
            .map_err(|e| Error::config(format!("writing checkpoint {}: {e}", path.display())))?;
        Ok(())
    }

    /// Rebuild a model from a checkpoint, restoring every tensor.
    pub fn load_checkpoint(path: &Path) -> Result<Model> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::config(format!("reading checkpoint {}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "checkpoint {} has version {}, this build reads {}",
                path.display(),
                ckpt.version,
                CHECKPOINT_VERSION
            )));
        }
        let model = Model::new(ckpt.spec)?;
        if model.params.len() != ckpt.tensors.len() {
            return Err(Error::config(format!(
                "checkpoint {} holds {} tensors, model defines {}",
                path.display(),
                ckpt.tensors.len(),
                model.params.len()
            )));
        }
        for p in &model.params {
            let td = ckpt.tensors.get(&p.name).ok_or_else(|| {
                Error::config(format!(
                    "checkpoint {} is missing tensor {}",
                    path.display(),
                    p.name
                ))
            })?;
            let mat = Mat::new(td.rows, td.cols, td.data.clone())?;
            if mat.shape() != p.tensor.shape() {
                return Err(Error::config(format!(
                    "checkpoint tensor {} is {}x{}, model expects {}x{}",
                    p.name,
                    td.rows,
                    td.cols,
                    p.tensor.rows(),
                    p.tensor.cols()
                )));
            }
            p.tensor.set_value(mat);
        }
        Ok(model)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorData {
    rows: usize,
    cols: usize,
    trainable: bool,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    spec: ModelSpec,
    tensors: BTreeMap<String, TensorData>,
}
