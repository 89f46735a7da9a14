//! Graphs, partitions, and coarsening at the matrix level.
//!
//! A [`Graph`] is a simple undirected graph stored as a dense 0/1 adjacency
//! matrix with a zero diagonal, plus a node-feature matrix and a graph-level
//! label. Construction validates all of that once, so downstream code can
//! lean on the invariants.
//!
//! Hard coarsening follows the matrix route: given the one-hot assignment
//! matrix `S` of a partition, the coarse adjacency is `binarize(S^T A S)`
//! with the diagonal zeroed. Tests check this against an independent
//! cross-edge scan.

use crate::error::{Error, Result};
use crate::mat::Mat;
use rand::seq::SliceRandom;
use rand::Rng;

/// Graph-level target of a dataset example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    /// Classification target, already remapped to `0..num_classes`.
    Class(usize),
    /// Regression target.
    Value(f64),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Label::Class(_) => None,
            Label::Value(v) => Some(*v),
        }
    }
}

/// Simple undirected graph with dense storage.
#[derive(Debug, Clone)]
pub struct Graph {
    /// Stable identifier within a dataset; seeds per-graph randomized
    /// decisions so results do not depend on evaluation order.
    pub id: u64,
    adj: Mat,
    features: Mat,
    pub label: Label,
}

impl Graph {
    /// Validate and build. The adjacency must be square, symmetric, 0/1,
    /// with a zero diagonal; features must have one row per node.
    pub fn new(id: u64, adj: Mat, features: Mat, label: Label) -> Result<Graph> {
        let (r, c) = adj.shape();
        if r != c {
            return Err(Error::contract(format!(
                "graph {id}: adjacency must be square, got {r}x{c}"
            )));
        }
        for i in 0..r {
            if adj[(i, i)] != 0.0 {
                return Err(Error::contract(format!(
                    "graph {id}: adjacency has a self-loop at node {i}"
                )));
            }
            for j in 0..c {
                let v = adj[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::contract(format!(
                        "graph {id}: adjacency entry ({i},{j}) = {v} is not 0/1"
                    )));
                }
                if adj[(i, j)] != adj[(j, i)] {
                    return Err(Error::contract(format!(
                        "graph {id}: adjacency not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if features.rows() != r {
            return Err(Error::contract(format!(
                "graph {id}: {} feature rows for {r} nodes",
                features.rows()
            )));
        }
        Ok(Graph {
            id,
            adj,
            features,
            label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn adj(&self) -> &Mat {
        &self.adj
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    /// Replace node features, keeping the node count.
    pub fn with_features(&self, features: Mat) -> Result<Graph> {
        Graph::new(self.id, self.adj.clone(), features, self.label)
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.num_nodes())
            .map(|i| self.adj.row(i).iter().sum())
            .collect()
    }

    /// Edges as (i, j) with i < j.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adj[(i, j)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    /// Complement graph: off-diagonal entries flipped, features and label
    /// untouched. An involution.
    pub fn complement(&self) -> Graph {
        let n = self.num_nodes();
        let adj = Mat::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                1.0 - self.adj[(i, j)]
            }
        });
        Graph {
            id: self.id,
            adj,
            features: self.features.clone(),
            label: self.label,
        }
    }

    /// Relabel nodes: node `i` of the result is node `perm[i]` of `self`.
    pub fn permute(&self, perm: &Permutation) -> Result<Graph> {
        let n = self.num_nodes();
        if perm.len() != n {
            return Err(Error::contract(format!(
                "permute: permutation of length {} applied to {n} nodes",
                perm.len()
            )));
        }
        let p = perm.as_slice();
        let adj = Mat::from_fn(n, n, |i, j| self.adj[(p[i], p[j])]);
        let d = self.feature_dim();
        let features = Mat::from_fn(n, d, |i, j| self.features[(p[i], j)]);
        Ok(Graph {
            id: self.id,
            adj,
            features,
            label: self.label,
        })
    }
}

/// A bijection on `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Permutation> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || seen[v] {
                return Err(Error::contract(format!(
                    "permutation {map:?} is not a bijection on 0..{n}"
                )));
            }
            seen[v] = true;
        }
        Ok(Permutation(map))
    }

    pub fn identity(n: usize) -> Permutation {
        Permutation((0..n).collect())
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Permutation {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Permutation(map)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Assignment of `n` nodes to `k` non-empty clusters labeled `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assign: Vec<usize>,
    k: usize,
}

impl Partition {
    /// Build from an assignment whose labels already are `0..k` with every
    /// cluster occupied.
    pub fn new(assign: Vec<usize>, k: usize) -> Result<Partition> {
        if assign.is_empty() || k == 0 {
            return Err(Error::contract(
                "partition: need at least one node and one cluster".to_string(),
            ));
        }
        let mut hit = vec![false; k];
        for (i, &c) in assign.iter().enumerate() {
            if c >= k {
                return Err(Error::contract(format!(
                    "partition: node {i} assigned to cluster {c}, only {k} clusters"
                )));
            }
            hit[c] = true;
        }
        if let Some(empty) = hit.iter().position(|h| !h) {
            return Err(Error::contract(format!(
                "partition: cluster {empty} is empty"
            )));
        }
        Ok(Partition { assign, k })
    }

    /// Compact arbitrary labels to `0..k` in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Result<Partition> {
        let mut remap: Vec<usize> = Vec::new();
        let mut assign = Vec::with_capacity(labels.len());
        for &l in labels {
            let c = match remap.iter().position(|&r| r == l) {
                Some(c) => c,
                None => {
                    remap.push(l);
                    remap.len() - 1
                }
            };
            assign.push(c);
        }
        let k = remap.len();
        Partition::new(assign, k)
    }

    pub fn num_nodes(&self) -> usize {
        self.assign.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assign
    }

    /// One-hot n x k assignment matrix S.
    pub fn assignment_matrix(&self) -> Mat {
        Mat::from_fn(self.assign.len(), self.k, |i, j| {
            if self.assign[i] == j {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &c in &self.assign {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Coarse adjacency `binarize(S^T A S)` with the diagonal zeroed.
pub fn coarsen_hard(adj: &Mat, partition: &Partition) -> Result<Mat> {
    if adj.rows() != partition.num_nodes() {
        return Err(Error::contract(format!(
            "coarsen_hard: partition covers {} nodes, adjacency has {}",
            partition.num_nodes(),
            adj.rows()
        )));
    }
    let s = partition.assignment_matrix();
    let coarse = s.transpose().matmul(adj)?.matmul(&s)?;
    let k = partition.num_clusters();
    Ok(Mat::from_fn(k, k, |i, j| {
        if i != j && coarse[(i, j)] > 0.0 {
            1.0
        } else {
            0.0
        }
    }))
}

/// Weighted coarse adjacency `S^T A S` for soft assignments; the diagonal
/// is kept.
pub fn coarsen_soft(adj: &Mat, s: &Mat) -> Result<Mat> {
    if adj.rows() != s.rows() {
        return Err(Error::Dim {
            op: "coarsen_soft",
            lhs_rows: adj.rows(),
            lhs_cols: adj.cols(),
            rhs_rows: s.rows(),
            rhs_cols: s.cols(),
        });
    }
    s.transpose().matmul(adj)?.matmul(s)
}

/// Per-cluster, per-column max of `features` under `partition`
/// (matrix-level twin of the differentiable op).
pub fn max_pool_features(features: &Mat, partition: &Partition) -> Result<Mat> {
    if features.rows() != partition.num_nodes() {
        return Err(Error::contract(format!(
            "max_pool_features: partition covers {} nodes, features have {} rows",
            partition.num_nodes(),
            features.rows()
        )));
    }
    let k = partition.num_clusters();
    let d = features.cols();
    let mut out = Mat::from_fn(k, d, |_, _| f64::NEG_INFINITY);
    for i in 0..features.rows() {
        let c = partition.assignment()[i];
        for j in 0..d {
            if features[(i, j)] > out[(c, j)] {
                out[(c, j)] = features[(i, j)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        // 0 - 1 - 2
        let adj = Mat::new(
            3,
            3,
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        Graph::new(7, adj, Mat::ones(3, 2), Label::Class(0)).unwrap()
    }

    #[test]
    fn construction_rejects_asymmetry_and_self_loops() {
        let asym = Mat::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let err = Graph::new(0, asym, Mat::ones(2, 1), Label::Class(0)).unwrap_err();
        assert!(err.to_string().contains("symmetric"));

        let looped = Mat::new(2, 2, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let err = Graph::new(0, looped, Mat::ones(2, 1), Label::Class(0)).unwrap_err();
        assert!(err.to_string().contains("self-loop"));

        let weighted = Mat::new(2, 2, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let err = Graph::new(0, weighted, Mat::ones(2, 1), Label::Class(0)).unwrap_err();
        assert!(err.to_string().contains("not 0/1"));
    }

    #[test]
    fn complement_is_an_involution() {
        let g = path3();
        let cc = g.complement().complement();
        assert_eq!(cc.adj().data(), g.adj().data());
    }

    #[test]
    fn complement_of_path_connects_endpoints() {
        let g = path3();
        let c = g.complement();
        assert_eq!(c.adj()[(0, 2)], 1.0);
        assert_eq!(c.adj()[(0, 1)], 0.0);
        assert_eq!(c.adj()[(1, 2)], 0.0);
    }

    #[test]
    fn permute_preserves_degree_multiset() {
        let g = path3();
        let perm = Permutation::new(vec![2, 0, 1]).unwrap();
        let p = g.permute(&perm).unwrap();
        let mut d0 = g.degrees();
        let mut d1 = p.degrees();
        d0.sort_by(f64::total_cmp);
        d1.sort_by(f64::total_cmp);
        assert_eq!(d0, d1);
    }

    #[test]
    fn permute_moves_features_with_nodes() {
        let adj = Mat::zeros(2, 2);
        let feats = Mat::new(2, 1, vec![10.0, 20.0]).unwrap();
        let g = Graph::new(0, adj, feats, Label::Class(0)).unwrap();
        let p = g.permute(&Permutation::new(vec![1, 0]).unwrap()).unwrap();
        assert_eq!(p.features()[(0, 0)], 20.0);
        assert_eq!(p.features()[(1, 0)], 10.0);
    }

    #[test]
    fn permutation_rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
    }

    #[test]
    fn partition_rejects_empty_cluster() {
        let err = Partition::new(vec![0, 0], 2).unwrap_err();
        assert!(err.to_string().contains("cluster 1 is empty"));
    }

    #[test]
    fn from_labels_compacts_in_first_appearance_order() {
        let p = Partition::from_labels(&[5, 5, 2, 9, 2]).unwrap();
        assert_eq!(p.assignment(), &[0, 0, 1, 2, 1]);
        assert_eq!(p.num_clusters(), 3);
    }

    #[test]
    fn coarsen_path_into_two_clusters() {
        // path 0-1-2 with {0,1} and {2}: edge crosses between clusters
        let g = path3();
        let p = Partition::new(vec![0, 0, 1], 2).unwrap();
        let coarse = coarsen_hard(g.adj(), &p).unwrap();
        assert_eq!(coarse.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn coarsen_to_single_cluster_has_no_edges() {
        // intra-cluster edges land on the diagonal, which is zeroed
        let g = path3();
        let p = Partition::new(vec![0, 0, 0], 1).unwrap();
        let coarse = coarsen_hard(g.adj(), &p).unwrap();
        assert_eq!(coarse.data(), &[0.0]);
    }

    #[test]
    fn coarsen_soft_keeps_diagonal_weight() {
        let g = path3();
        let p = Partition::new(vec![0, 0, 1], 2).unwrap();
        let s = p.assignment_matrix();
        let soft = coarsen_soft(g.adj(), &s).unwrap();
        // cluster 0 contains edge (0,1) twice in S^T A S
        assert_eq!(soft[(0, 0)], 2.0);
        assert_eq!(soft[(0, 1)], 1.0);
    }

    #[test]
    fn max_pool_picks_cluster_maxima() {
        let feats = Mat::new(3, 2, vec![1.0, 5.0, 4.0, 2.0, -1.0, 0.0]).unwrap();
        let p = Partition::new(vec![0, 0, 1], 2).unwrap();
        let pooled = max_pool_features(&feats, &p).unwrap();
        assert_eq!(pooled.data(), &[4.0, 5.0, -1.0, 0.0]);
    }

    #[test]
    fn assignment_matrix_rows_are_one_hot() {
        let p = Partition::new(vec![1, 0, 1], 2).unwrap();
        let s = p.assignment_matrix();
        for i in 0..3 {
            let sum: f64 = s.row(i).iter().sum();
            assert_eq!(sum, 1.0);
        }
        assert_eq!(s[(0, 1)], 1.0);
    }
}
