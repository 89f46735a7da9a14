//! Seed-deterministic synthetic graph tasks.
//!
//! Three tasks with known structure:
//!
//! * [`cycles_vs_grids`] — classify rings against rectangular grids. Node
//!   features are a constant column plus optional gaussian noise, so a
//!   reader of features alone sees the same distribution for both classes;
//!   only the wiring tells them apart.
//! * [`triangle_count`] — regress the number of triangles in sparse random
//!   graphs.
//! * [`feature_parity`] — classify by the parity of `1^T A^2 b` where `b`
//!   is the random 0/1 feature column; the label couples features and
//!   two-hop structure, so it rewards deeper convolution stacks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::clustering::rng_from;
use crate::error::{Error, Result};
use crate::graph::{Graph, Label};
use crate::mat::Mat;

fn cycle_adj(n: usize) -> Mat {
    let mut adj = Mat::zeros(n, n);
    for i in 0..n {
        let j = (i + 1) % n;
        adj[(i, j)] = 1.0;
        adj[(j, i)] = 1.0;
    }
    adj
}

fn grid_adj(rows: usize, cols: usize) -> Mat {
    let n = rows * cols;
    let mut adj = Mat::zeros(n, n);
    let id = |r: usize, c: usize| r * cols + c;
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                adj[(id(r, c), id(r, c + 1))] = 1.0;
                adj[(id(r, c + 1), id(r, c))] = 1.0;
            }
            if r + 1 < rows {
                adj[(id(r, c), id(r + 1, c))] = 1.0;
                adj[(id(r + 1, c), id(r, c))] = 1.0;
            }
        }
    }
    adj
}

/// Factorizations `rows x cols = n` with `2 <= rows <= cols`.
fn grid_shapes(n: usize) -> Vec<(usize, usize)> {
    let mut shapes = Vec::new();
    let mut r = 2;
    while r * r <= n {
        if n.is_multiple_of(r) {
            shapes.push((r, n / r));
        }
        r += 1;
    }
    shapes
}

fn noisy_ones(n: usize, noise: f64, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(n, 1, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        1.0 + noise * z
    })
}

/// Balanced cycle/grid classification corpus. Even ids are cycles
/// (class 0), odd ids are grids (class 1); node counts are drawn from
/// `[n_min, n_max]`, restricted for grids to sizes that factor as an
/// `r x c` block with both sides at least 2.
pub fn cycles_vs_grids(
    count: usize,
    n_min: usize,
    n_max: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<Graph>> {
    if n_min < 3 || n_min > n_max {
        return Err(Error::config(format!(
            "cycles_vs_grids: need 3 <= n_min <= n_max, got [{n_min}, {n_max}]"
        )));
    }
    let grid_ns: Vec<usize> = (n_min..=n_max)
        .filter(|&n| !grid_shapes(n).is_empty())
        .collect();
    if grid_ns.is_empty() {
        return Err(Error::config(format!(
            "cycles_vs_grids: no grid fits in [{n_min}, {n_max}]"
        )));
    }
    let mut rng = rng_from(&[seed, 0xc1c1]);
    let mut graphs = Vec::with_capacity(count);
    for id in 0..count as u64 {
        let (adj, label) = if id % 2 == 0 {
            let n = rng.gen_range(n_min..=n_max);
            (cycle_adj(n), Label::Class(0))
        } else {
            let n = grid_ns[rng.gen_range(0..grid_ns.len())];
            let shapes = grid_shapes(n);
            let (r, c) = shapes[rng.gen_range(0..shapes.len())];
            (grid_adj(r, c), Label::Class(1))
        };
        let n = adj.rows();
        graphs.push(Graph::new(id, adj, noisy_ones(n, noise, &mut rng), label)?);
    }
    Ok(graphs)
}

fn gnp_adj(n: usize, p: f64, rng: &mut impl Rng) -> Mat {
    let mut adj = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                adj[(i, j)] = 1.0;
                adj[(j, i)] = 1.0;
            }
        }
    }
    adj
}

fn triangle_count_of(adj: &Mat) -> f64 {
    // trace(A^3) / 6
    let a2 = adj.matmul(adj).expect("square");
    let a3 = a2.matmul(adj).expect("square");
    let mut trace = 0.0;
    for i in 0..adj.rows() {
        trace += a3[(i, i)];
    }
    trace / 6.0
}

/// Triangle-count regression over sparse random graphs; the label is the
/// exact triangle count as a float.
pub fn triangle_count(
    count: usize,
    n_min: usize,
    n_max: usize,
    edge_prob: f64,
    seed: u64,
) -> Result<Vec<Graph>> {
    if n_min < 3 || n_min > n_max {
        return Err(Error::config(format!(
            "triangle_count: need 3 <= n_min <= n_max, got [{n_min}, {n_max}]"
        )));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::config(format!(
            "triangle_count: edge_prob {edge_prob} outside [0, 1]"
        )));
    }
    let mut rng = rng_from(&[seed, 0x7514]);
    let mut graphs = Vec::with_capacity(count);
    for id in 0..count as u64 {
        let n = rng.gen_range(n_min..=n_max);
        let adj = gnp_adj(n, edge_prob, &mut rng);
        let label = Label::Value(triangle_count_of(&adj));
        graphs.push(Graph::new(id, adj, Mat::ones(n, 1), label)?);
    }
    Ok(graphs)
}

/// Parity classification: features are a 0/1 column `b` with exactly one
/// hot node, the label is `(1^T A^2 b) mod 2` — the parity of the hot
/// node's two-walk count. One aggregation round only reveals the hot
/// node's degree; decoding the label takes at least two. Keeping `b`
/// one-hot bounds the sum to a small range so the parity staircase stays
/// within reach of a small head.
pub fn feature_parity(
    count: usize,
    n_min: usize,
    n_max: usize,
    edge_prob: f64,
    seed: u64,
) -> Result<Vec<Graph>> {
    if n_min < 2 || n_min > n_max {
        return Err(Error::config(format!(
            "feature_parity: need 2 <= n_min <= n_max, got [{n_min}, {n_max}]"
        )));
    }
    let mut rng = rng_from(&[seed, 0xfa27]);
    let mut graphs = Vec::with_capacity(count);
    for id in 0..count as u64 {
        let n = rng.gen_range(n_min..=n_max);
        let adj = gnp_adj(n, edge_prob, &mut rng);
        let hot = rng.gen_range(0..n);
        let b = Mat::from_fn(n, 1, |i, _| if i == hot { 1.0 } else { 0.0 });
        let a2 = adj.matmul(&adj).expect("square");
        let a2b = a2.matmul(&b).expect("column");
        let total: f64 = a2b.data().iter().sum();
        let label = Label::Class((total as i64 % 2) as usize);
        graphs.push(Graph::new(id, adj, b, label)?);
    }
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycles_have_uniform_degree_two() {
        let graphs = cycles_vs_grids(20, 8, 16, 0.0, 1).unwrap();
        for g in graphs.iter().filter(|g| g.label == Label::Class(0)) {
            assert!(g.degrees().iter().all(|&d| d == 2.0), "graph {}", g.id);
            assert_eq!(g.num_edges(), g.num_nodes());
        }
    }

    #[test]
    fn grids_have_corner_edge_interior_degrees() {
        let graphs = cycles_vs_grids(40, 8, 16, 0.0, 2).unwrap();
        let mut saw_grid = false;
        for g in graphs.iter().filter(|g| g.label == Label::Class(1)) {
            saw_grid = true;
            let degs = g.degrees();
            assert!(degs.iter().all(|&d| (2.0..=4.0).contains(&d)));
            // exactly four corners in any r x c grid with r, c >= 2
            let corners = degs.iter().filter(|&&d| d == 2.0).count();
            assert_eq!(corners, 4, "graph {}", g.id);
        }
        assert!(saw_grid);
    }

    #[test]
    fn class_balance_and_size_range_hold() {
        let graphs = cycles_vs_grids(100, 8, 16, 0.1, 3).unwrap();
        let cycles = graphs
            .iter()
            .filter(|g| g.label == Label::Class(0))
            .count();
        assert_eq!(cycles, 50);
        assert!(graphs
            .iter()
            .all(|g| (8..=16).contains(&g.num_nodes())));
    }

    #[test]
    fn noiseless_features_are_exactly_ones() {
        let graphs = cycles_vs_grids(10, 8, 12, 0.0, 4).unwrap();
        for g in &graphs {
            assert!(g.features().data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn generation_is_reproducible_and_seed_sensitive() {
        let a = cycles_vs_grids(30, 8, 16, 0.2, 7).unwrap();
        let b = cycles_vs_grids(30, 8, 16, 0.2, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.adj().data(), y.adj().data());
            assert_eq!(x.features().data(), y.features().data());
        }
        let c = cycles_vs_grids(30, 8, 16, 0.2, 8).unwrap();
        assert!(a
            .iter()
            .zip(&c)
            .any(|(x, y)| x.adj().data() != y.adj().data()));
    }

    #[test]
    fn grid_shapes_enumerates_factor_pairs() {
        assert_eq!(grid_shapes(12), vec![(2, 6), (3, 4)]);
        assert_eq!(grid_shapes(9), vec![(3, 3)]);
        assert!(grid_shapes(13).is_empty());
        assert!(grid_shapes(7).is_empty());
    }

    #[test]
    fn triangle_labels_match_hand_counts() {
        // triangle plus pendant: exactly one triangle
        let mut adj = Mat::zeros(4, 4);
        for (i, j) in [(0, 1), (1, 2), (0, 2), (2, 3)] {
            adj[(i, j)] = 1.0;
            adj[(j, i)] = 1.0;
        }
        assert_eq!(triangle_count_of(&adj), 1.0);
        // K4 has 4 triangles
        let k4 = Mat::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(triangle_count_of(&k4), 4.0);

        let graphs = triangle_count(20, 5, 9, 0.4, 5).unwrap();
        for g in &graphs {
            let label = g.label.value().unwrap();
            assert_eq!(label, triangle_count_of(g.adj()));
            assert_eq!(label.fract(), 0.0);
        }
    }

    #[test]
    fn feature_parity_labels_are_recomputable() {
        let graphs = feature_parity(25, 4, 8, 0.4, 6).unwrap();
        let mut ones = 0;
        for g in &graphs {
            let hot: f64 = g.features().data().iter().sum();
            assert_eq!(hot, 1.0, "features must be one-hot");
            assert!(g.features().data().iter().all(|&v| v == 0.0 || v == 1.0));
            let a2 = g.adj().matmul(g.adj()).unwrap();
            let a2b = a2.matmul(g.features()).unwrap();
            let total: f64 = a2b.data().iter().sum();
            let expect = (total as i64 % 2) as usize;
            assert_eq!(g.label.class().unwrap(), expect);
            ones += expect;
        }
        // both classes occur
        assert!(ones > 0 && ones < 25);
    }
}
