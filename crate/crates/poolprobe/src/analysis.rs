//! Post-hoc measurements on trained (or fresh) models.
//!
//! Two questions drive this module. How similar are node embeddings by the
//! time pooling happens — if they are near-identical, any pooling support
//! yields the same pooled summary, which is the mechanism behind
//! interchangeable pooling operators. And does a model's output actually
//! ignore node order — measured empirically as a worst-case relative gap
//! over random relabelings, so equivariance claims are checkable numbers.

use crate::clustering::rng_from;
use crate::error::Result;
use crate::graph::{Graph, Permutation};
use crate::mat::Mat;
use crate::models::{Model, ModelSpec};
use crate::train::{split_dataset, train_run, RunResult, TrainConfig};

/// How alike the rows of an embedding matrix are.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homogeneity {
    /// Mean per-column variance across nodes, normalized by the mean
    /// squared entry. 0 means all rows are identical.
    pub norm_col_variance: f64,
    /// Mean cosine similarity over node pairs; rows of norm zero
    /// contribute 0. 1 means all rows point the same way.
    pub mean_pairwise_cosine: f64,
}

/// Row-similarity summary of one embedding matrix. A single row is
/// perfectly homogeneous by convention.
pub fn homogeneity(z: &Mat) -> Homogeneity {
    let (n, d) = z.shape();
    if n <= 1 {
        return Homogeneity {
            norm_col_variance: 0.0,
            mean_pairwise_cosine: 1.0,
        };
    }
    let mut var_sum = 0.0;
    for j in 0..d {
        let mean: f64 = (0..n).map(|i| z[(i, j)]).sum::<f64>() / n as f64;
        let var: f64 = (0..n).map(|i| (z[(i, j)] - mean).powi(2)).sum::<f64>() / n as f64;
        var_sum += var;
    }
    let mean_var = var_sum / d as f64;
    let mean_sq: f64 = z.data().iter().map(|v| v * v).sum::<f64>() / (n * d) as f64;
    let norm_col_variance = mean_var / (mean_sq + 1e-12);

    let norms: Vec<f64> = (0..n)
        .map(|i| z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut cos_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            pairs += 1;
            if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = z
                    .row(i)
                    .iter()
                    .zip(z.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                cos_sum += dot / (norms[i] * norms[j]);
            }
        }
    }
    Homogeneity {
        norm_col_variance,
        mean_pairwise_cosine: cos_sum / pairs as f64,
    }
}

/// Homogeneity after every named stage of one forward pass.
pub fn stage_homogeneity(model: &Model, g: &Graph) -> Result<Vec<(String, Homogeneity)>> {
    let t = crate::autodiff::Tape::new();
    let out = model.forward(&t, g)?;
    Ok(out
        .embeddings
        .iter()
        .map(|(name, z)| (name.clone(), homogeneity(z)))
        .collect())
}

/// Worst relative output change over `num_perms` random node relabelings:
/// `max_P ||f(Pg) - f(g)||_inf / (||f(g)||_inf + 1e-12)`.
pub fn invariance_gap(model: &Model, g: &Graph, num_perms: usize, seed: u64) -> Result<f64> {
    let t = crate::autodiff::Tape::new();
    let base = model.forward(&t, g)?.output.value();
    let base_inf = base.max_abs();
    let mut worst: f64 = 0.0;
    for m in 0..num_perms {
        let mut rng = rng_from(&[seed, 0x9e21, m as u64]);
        let perm = Permutation::random(g.num_nodes(), &mut rng);
        let pg = g.permute(&perm)?;
        let t = crate::autodiff::Tape::new();
        let out = model.forward(&t, &pg)?.output.value();
        let gap = out.max_abs_diff(&base) / (base_inf + 1e-12);
        worst = worst.max(gap);
    }
    Ok(worst)
}

/// One paired observation from the depth ablation.
#[derive(Debug, Clone)]
pub struct DepthComparison {
    pub seed: u64,
    pub shallow_convs: usize,
    pub deep_convs: usize,
    pub shallow: RunResult,
    pub deep: RunResult,
}

/// Train the same family at two convolution depths over several seeds,
/// holding everything else (splits, shuffles, init streams) paired.
pub fn conv_depth_ablation(
    base: &ModelSpec,
    cfg: &TrainConfig,
    graphs: &[Graph],
    depths: (usize, usize),
    seeds: &[u64],
) -> Result<Vec<DepthComparison>> {
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run_at = |convs: usize| -> Result<RunResult> {
            let mut spec = base.clone();
            spec.initial_convs = convs;
            spec.seed = seed;
            let model = Model::new(spec)?;
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let (tr, va, te) = split_dataset(graphs.len(), seed);
            train_run(&model, graphs, &tr, &va, &te, &cfg)
        };
        out.push(DepthComparison {
            seed,
            shallow_convs: depths.0,
            deep_convs: depths.1,
            shallow: run_at(depths.0)?,
            deep: run_at(depths.1)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::cycles_vs_grids;
    use crate::models::{BaselineVariant, DiffPoolVariant, PoolFamily};

    #[test]
    fn identical_rows_are_perfectly_homogeneous() {
        let z = Mat::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        let h = homogeneity(&z);
        assert_eq!(h.norm_col_variance, 0.0);
        assert!((h.mean_pairwise_cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_rows_match_hand_values() {
        let z = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let h = homogeneity(&z);
        // each column has variance 0.25; mean square entry is 0.5
        assert!((h.norm_col_variance - 0.5).abs() < 1e-9);
        assert_eq!(h.mean_pairwise_cosine, 0.0);
    }

    #[test]
    fn zero_matrix_and_single_row_conventions() {
        let h = homogeneity(&Mat::zeros(3, 2));
        assert_eq!(h.norm_col_variance, 0.0);
        assert_eq!(h.mean_pairwise_cosine, 0.0);

        let h = homogeneity(&Mat::from_rows(&[vec![4.0, -2.0]]));
        assert_eq!(h.norm_col_variance, 0.0);
        assert_eq!(h.mean_pairwise_cosine, 1.0);
    }

    fn base_spec(family: PoolFamily) -> ModelSpec {
        ModelSpec {
            family,
            in_dim: 1,
            hidden_dim: 4,
            out_dim: 2,
            initial_convs: 1,
            // two levels: with mean readout the last soft assignment always
            // cancels, so one level can't distinguish variants at the output
            pool_layers: 2,
            cluster_ratio: 0.5,
            n_max: 16,
            keys_per_layer: vec![4, 2],
            heads: 2,
            tau: 1.0,
            seed: 3,
        }
    }

    #[test]
    fn agnostic_readout_is_permutation_invariant() {
        let g = &cycles_vs_grids(2, 8, 12, 0.3, 1).unwrap()[1];
        let model = Model::new(base_spec(PoolFamily::GlobalMean {
            variant: BaselineVariant::Agnostic,
        }))
        .unwrap();
        let gap = invariance_gap(&model, g, 10, 5).unwrap();
        assert!(gap <= 1e-9, "gap {gap}");
    }

    #[test]
    fn positional_assignments_break_invariance() {
        let g = &cycles_vs_grids(2, 8, 12, 0.3, 1).unwrap()[1];
        let model = Model::new(base_spec(PoolFamily::Diffpool {
            variant: DiffPoolVariant::Normal,
        }))
        .unwrap();
        let gap = invariance_gap(&model, g, 10, 5).unwrap();
        assert!(gap > 1e-3, "gap {gap}");
    }

    #[test]
    fn projected_assignments_restore_invariance() {
        let g = &cycles_vs_grids(2, 8, 12, 0.3, 1).unwrap()[1];
        let model = Model::new(base_spec(PoolFamily::Diffpool {
            variant: DiffPoolVariant::InvariantNormal,
        }))
        .unwrap();
        let gap = invariance_gap(&model, g, 10, 5).unwrap();
        assert!(gap <= 1e-9, "gap {gap}");
    }

    #[test]
    fn stage_homogeneity_reports_every_stage() {
        let g = &cycles_vs_grids(2, 8, 12, 0.0, 1).unwrap()[0];
        let model = Model::new(base_spec(PoolFamily::Graclus)).unwrap();
        let stages = stage_homogeneity(&model, g).unwrap();
        let names: Vec<&str> = stages.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["conv0", "pool0", "pool1"]);
        // constant input features on a vertex-transitive graph: embeddings
        // identical across nodes
        assert!(stages[0].1.norm_col_variance < 1e-20);
    }

    #[test]
    fn depth_ablation_returns_paired_runs() {
        let graphs = cycles_vs_grids(40, 8, 12, 0.0, 2).unwrap();
        let spec = base_spec(PoolFamily::GlobalMean {
            variant: BaselineVariant::Conv,
        });
        let cfg = TrainConfig {
            max_epochs: 4,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let rows = conv_depth_ablation(&spec, &cfg, &graphs, (1, 3), &[1, 2]).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.shallow_convs, 1);
            assert_eq!(r.deep_convs, 3);
            assert_eq!(r.shallow.history.len(), 4);
            assert_eq!(r.deep.history.len(), 4);
        }
    }
}
