//! Non-differentiable cluster selection and the randomness behind it.
//!
//! Two kinds of product live here:
//!
//! * hard partitions from greedy edge matching, on the graph itself or on
//!   its complement;
//! * frozen random assignment matrices, sampled once at model construction
//!   and never trained.
//!
//! All randomness flows through [`rng_from`], a ChaCha8 stream keyed by
//! mixing caller-supplied parts (run seed, graph id, layer index) with
//! splitmix64. ChaCha8 is specified to be identical across platforms, which
//! is what makes byte-identical reruns possible.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Partition;
use crate::mat::Mat;

/// splitmix64 step; the standard 64-bit finalizer-style mixer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Fold several id parts into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x51a5_17ed_5e11_ba5eu64;
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// Deterministic, platform-stable generator keyed by `parts`.
pub fn rng_from(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Greedy heavy-edge matching with an explicit visit order.
///
/// Edge weight is `1/deg(i) + 1/deg(j)`. Each unmatched node in visit order
/// grabs its heaviest unmatched neighbor, lowest index on ties; nodes left
/// over stay singletons. Cluster labels are compacted in node-index order.
pub fn matching_with_order(adj: &Mat, order: &[usize]) -> Result<Partition> {
    let n = adj.rows();
    if order.len() != n {
        return Err(Error::contract(format!(
            "matching_with_order: visit order of length {} for {n} nodes",
            order.len()
        )));
    }
    let deg: Vec<f64> = (0..n).map(|i| adj.row(i).iter().sum()).collect();
    // mate[i] = partner, or i for singleton/unvisited
    let mut mate: Vec<usize> = (0..n).collect();
    let mut matched = vec![false; n];
    for &i in order {
        if matched[i] {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if adj[(i, j)] == 0.0 || matched[j] || j == i {
                continue;
            }
            let w = 1.0 / deg[i] + 1.0 / deg[j];
            // strict > keeps the lowest-index neighbor on ties
            let better = match best {
                None => true,
                Some((bw, _)) => w > bw,
            };
            if better {
                best = Some((w, j));
            }
        }
        if let Some((_, j)) = best {
            mate[i] = j;
            mate[j] = i;
            matched[i] = true;
            matched[j] = true;
        }
    }
    let labels: Vec<usize> = (0..n).map(|i| i.min(mate[i])).collect();
    Partition::from_labels(&labels)
}

/// Greedy matching with an rng-shuffled visit order.
pub fn graclus_matching(adj: &Mat, rng: &mut impl Rng) -> Result<Partition> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..adj.rows()).collect();
    order.shuffle(rng);
    matching_with_order(adj, &order)
}

/// Greedy matching on the complement graph. The resulting partition pairs
/// non-adjacent nodes of the original graph; callers still coarsen the
/// original adjacency with it.
pub fn complement_matching(adj: &Mat, rng: &mut impl Rng) -> Result<Partition> {
    let n = adj.rows();
    let comp = Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            1.0 - adj[(i, j)]
        }
    });
    graclus_matching(&comp, rng)
}

/// Family of distributions for frozen random assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomDist {
    /// U(0, 1)
    Uniform,
    /// N(0, 1)
    Normal,
    /// Bernoulli(0.3), as 0/1 values
    Bernoulli,
}

/// Sample a raw assignment matrix entry-wise from `dist`.
///
/// Sampling order is row-major, so a matrix for `n_max` rows has the same
/// leading rows as one sampled for fewer rows with the same rng state.
pub fn sample_random_assignment(
    rows: usize,
    cols: usize,
    dist: RandomDist,
    rng: &mut impl Rng,
) -> Mat {
    let mut data = Vec::with_capacity(rows * cols);
    match dist {
        RandomDist::Uniform => {
            for _ in 0..rows * cols {
                data.push(rng.gen::<f64>());
            }
        }
        RandomDist::Normal => {
            for _ in 0..rows * cols {
                let v: f64 = StandardNormal.sample(rng);
                data.push(v);
            }
        }
        RandomDist::Bernoulli => {
            let b = Bernoulli::new(0.3).expect("valid probability");
            for _ in 0..rows * cols {
                data.push(if b.sample(rng) { 1.0 } else { 0.0 });
            }
        }
    }
    Mat::new(rows, cols, data).expect("sampled data length")
}
