//! Differentiable building blocks, written against the tape.
//!
//! Every function here is pure: it takes the tape plus input tensors and
//! returns output tensors, recording backward closures as a side effect.
//! Parameter creation and wiring live in the model layer; adjacency
//! matrices arrive as constants so no gradient flows into graph structure.
//!
//! Broadcasting is spelled out as multiplication with constant ones
//! matrices. That costs a few flops at desk scale and keeps the op set
//! small enough to gradient-check exhaustively.

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::mat::Mat;

/// Variance floor inside [`feature_norm`].
pub const NORM_EPS: f64 = 1e-5;

fn ones(rows: usize, cols: usize) -> Tensor {
    Tensor::constant(Mat::ones(rows, cols))
}

/// Broadcast an n x 1 column across `cols` columns.
fn bcast_col(t: &Tape, v: &Tensor, cols: usize) -> Result<Tensor> {
    t.matmul(v, &ones(1, cols))
}

/// Broadcast a 1 x k row across `rows` rows.
fn bcast_row(t: &Tape, v: &Tensor, rows: usize) -> Result<Tensor> {
    t.matmul(&ones(rows, 1), v)
}

/// Graph convolution `ReLU(X W1 + A X W2)`; no bias.
pub fn basic_conv(t: &Tape, adj: &Tensor, x: &Tensor, w1: &Tensor, w2: &Tensor) -> Result<Tensor> {
    let own = t.matmul(x, w1)?;
    let neigh = t.matmul(&t.matmul(adj, x)?, w2)?;
    Ok(t.relu(&t.add(&own, &neigh)?))
}

/// Per-column standardization over the rows of one graph:
/// `(x - mean) / sqrt(var + 1e-5)` with biased variance.
pub fn feature_norm(t: &Tape, x: &Tensor) -> Result<Tensor> {
    let (n, d) = x.shape();
    let inv_n = t.scale(&ones(1, n), 1.0 / n as f64);
    let mean = t.matmul(&inv_n, x)?; // 1 x d
    let centered = t.sub(x, &bcast_row(t, &mean, n)?)?;
    let var = t.matmul(&inv_n, &t.mul(&centered, &centered)?)?; // 1 x d
    let std = t.sqrt(&t.add_scalar(&var, NORM_EPS));
    t.div(&centered, &bcast_row(t, &std, n)?).inspect(|r| {
        debug_assert_eq!(r.shape(), (n, d));
    })
}

/// Column means over nodes: the permutation-invariant readout, 1 x d.
pub fn global_mean_readout(t: &Tape, x: &Tensor) -> Result<Tensor> {
    let n = x.rows();
    let inv_n = t.scale(&ones(1, n), 1.0 / n as f64);
    t.matmul(&inv_n, x)
}

/// One-hidden-layer classifier head: `relu(x W1 + b1) W2 + b2`.
///
/// The only biased linear maps in the whole architecture live here.
pub fn mlp_head(
    t: &Tape,
    x: &Tensor,
    w1: &Tensor,
    b1: &Tensor,
    w2: &Tensor,
    b2: &Tensor,
) -> Result<Tensor> {
    let h = t.relu(&t.add(&t.matmul(x, w1)?, b1)?);
    t.add(&t.matmul(&h, w2)?, b2)
}

/// Output of one soft-assignment pooling step.
pub struct SoftPool {
    /// Row-stochastic assignment, n x k.
    pub s: Tensor,
    /// Pooled features `S^T Z`, k x d.
    pub x: Tensor,
    /// Weighted coarse adjacency `S^T A S`, k x k, diagonal kept.
    pub adj: Tensor,
}

/// Soft pooling from raw assignment logits: softmax rows of `s_raw`, pool
/// embeddings and adjacency through the result.
pub fn soft_pool(t: &Tape, adj: &Tensor, z: &Tensor, s_raw: &Tensor) -> Result<SoftPool> {
    let s = t.softmax_rows(s_raw);
    let st = t.transpose(&s);
    let x = t.matmul(&st, z)?;
    let a = t.matmul(&t.matmul(&st, adj)?, &s)?;
    Ok(SoftPool { s, x, adj: a })
}

/// All-pairs squared euclidean distances between rows of `q` (n x d) and
/// rows of `keys` (k x d), as an n x k tensor.
///
/// Uses the expansion `|q|^2 + |k|^2 - 2 q.k`, clamped at zero to absorb
/// cancellation noise.
pub fn pairwise_sq_dists(t: &Tape, q: &Tensor, keys: &Tensor) -> Result<Tensor> {
    let (n, d) = q.shape();
    let k = keys.rows();
    let qs = t.matmul(&t.mul(q, q)?, &ones(d, 1))?; // n x 1
    let ks = t.matmul(&t.mul(keys, keys)?, &ones(d, 1))?; // k x 1
    let cross = t.matmul(q, &t.transpose(keys))?; // n x k
    let d2 = t.sub(
        &t.add(&bcast_col(t, &qs, k)?, &bcast_row(t, &t.transpose(&ks), n)?)?,
        &t.scale(&cross, 2.0),
    )?;
    Ok(t.clamp_min(&d2, 0.0))
}

/// Student-t similarity `(1 + d2/tau)^(-(tau+1)/2)`, row-normalized so each
/// query distributes unit mass over the keys.
pub fn student_t_kernel(t: &Tape, d2: &Tensor, tau: f64) -> Result<Tensor> {
    let k = d2.cols();
    let base = t.add_scalar(&t.scale(d2, 1.0 / tau), 1.0);
    let c = t.powf(&base, -(tau + 1.0) / 2.0);
    let rowsum = t.matmul(&c, &ones(k, 1))?;
    t.div(&c, &bcast_col(t, &rowsum, k)?)
}

/// Kernel-addressed soft assignment over multiple heads.
///
/// Each head owns a key matrix; per-head similarities are mixed by learned
/// 1x1 scalars (no bias) and pushed through a row softmax.
pub fn kernel_assign(
    t: &Tape,
    q: &Tensor,
    keys: &[Tensor],
    head_weights: &[Tensor],
    tau: f64,
) -> Result<Tensor> {
    assert_eq!(keys.len(), head_weights.len(), "one weight per head");
    assert!(!keys.is_empty(), "at least one head");
    let mut acc: Option<Tensor> = None;
    for (key, w) in keys.iter().zip(head_weights) {
        let d2 = pairwise_sq_dists(t, q, key)?;
        let c = student_t_kernel(t, &d2, tau)?;
        let scaled = t.scale_by(&c, w)?;
        acc = Some(match acc {
            None => scaled,
            Some(a) => t.add(&a, &scaled)?,
        });
    }
    Ok(t.softmax_rows(&acc.expect("non-empty heads")))
}

/// Distance-addressed assignment: row softmax of negated euclidean
/// distances to a frozen key matrix. Nothing here is trainable.
pub fn distance_assign(t: &Tape, q: &Tensor, keys: &Tensor) -> Result<Tensor> {
    let d2 = pairwise_sq_dists(t, q, keys)?;
    let dist = t.sqrt(&d2);
    Ok(t.softmax_rows(&t.scale(&dist, -1.0)))
}

/// Memory pooling step `q' = ReLU(S^T q W)`.
pub fn memory_pool(t: &Tape, q: &Tensor, s: &Tensor, w: &Tensor) -> Result<Tensor> {
    let pooled = t.matmul(&t.transpose(s), q)?;
    Ok(t.relu(&t.matmul(&pooled, w)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::assert_gradients;

    fn tens(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::constant(Mat::new(rows, cols, data).unwrap())
    }

    fn par(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::parameter(Mat::new(rows, cols, data).unwrap())
    }

    #[test]
    fn conv_two_node_hand_example() {
        // A = [[0,1],[1,0]], X = [1, 2]^T, W1 = W2 = [1]:
        // XW1 = [1,2]^T, AXW2 = [2,1]^T, sum = [3,3]^T
        let t = Tape::new();
        let adj = tens(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let x = tens(2, 1, vec![1.0, 2.0]);
        let w1 = par(1, 1, vec![1.0]);
        let w2 = par(1, 1, vec![1.0]);
        let y = basic_conv(&t, &adj, &x, &w1, &w2).unwrap();
        assert_eq!(y.value().data(), &[3.0, 3.0]);
    }

    #[test]
    fn conv_applies_relu() {
        let t = Tape::new();
        let adj = tens(1, 1, vec![0.0]);
        let x = tens(1, 1, vec![1.0]);
        let w1 = par(1, 1, vec![-2.0]);
        let w2 = par(1, 1, vec![0.0]);
        let y = basic_conv(&t, &adj, &x, &w1, &w2).unwrap();
        assert_eq!(y.value().data(), &[0.0]);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let adj = tens(3, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let x = tens(3, 2, vec![0.3, -1.0, 2.0, 0.5, -0.7, 1.2]);
        let w1 = par(2, 2, vec![0.4, -0.2, 0.9, 0.1]);
        let w2 = par(2, 2, vec![-0.5, 0.3, 0.2, 0.8]);
        assert_gradients(
            &[w1.clone(), w2.clone()],
            |t| {
                let y = basic_conv(t, &adj, &x, &w1, &w2)?;
                Ok(t.frobenius_norm(&y))
            },
            1e-4,
        )
        .unwrap();
    }

    #[test]
    fn feature_norm_matches_closed_form() {
        let t = Tape::new();
        let x = tens(3, 1, vec![1.0, 2.0, 3.0]);
        let y = feature_norm(&t, &x).unwrap();
        let var: f64 = 2.0 / 3.0;
        let denom = (var + NORM_EPS).sqrt();
        let expect = [-1.0 / denom, 0.0, 1.0 / denom];
        for (a, e) in y.value().data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn feature_norm_centers_each_column() {
        let t = Tape::new();
        let x = tens(4, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        let y = feature_norm(&t, &x).unwrap();
        let v = y.value();
        for j in 0..2 {
            let mean: f64 = (0..4).map(|i| v[(i, j)]).sum::<f64>() / 4.0;
            let var: f64 = (0..4).map(|i| (v[(i, j)] - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn feature_norm_survives_constant_column() {
        let t = Tape::new();
        let x = par(3, 1, vec![5.0, 5.0, 5.0]);
        let y = feature_norm(&t, &x).unwrap();
        assert!(y.value().all_finite());
        assert_eq!(y.value().data(), &[0.0, 0.0, 0.0]);
        let loss = t.sum(&y);
        t.backward(&loss).unwrap();
        assert!(x.grad().unwrap().all_finite());
    }

    #[test]
    fn feature_norm_gradients_match_finite_differences() {
        let x = par(4, 2, vec![0.5, -1.0, 2.0, 0.3, -0.2, 1.5, 0.9, -0.4]);
        assert_gradients(
            std::slice::from_ref(&x),
            |t| {
                let y = feature_norm(t, &x)?;
                let sq = t.mul(&y, &y)?;
                Ok(t.sum(&sq))
            },
            1e-4,
        )
        .unwrap();
    }

    #[test]
    fn readout_averages_rows() {
        let t = Tape::new();
        let x = tens(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let r = global_mean_readout(&t, &x).unwrap();
        assert_eq!(r.value().data(), &[2.0, 3.0]);
    }

    #[test]
    fn mlp_head_hand_example() {
        // x=[1,1], W1=I, b1=[1,-5], W2=ones, b2=[0.5]
        // h = relu([2,-4]) = [2,0]; out = 2 + 0.5
        let t = Tape::new();
        let x = tens(1, 2, vec![1.0, 1.0]);
        let w1 = par(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let b1 = par(1, 2, vec![1.0, -5.0]);
        let w2 = par(2, 1, vec![1.0, 1.0]);
        let b2 = par(1, 1, vec![0.5]);
        let y = mlp_head(&t, &x, &w1, &b1, &w2, &b2).unwrap();
        assert_eq!(y.value().data(), &[2.5]);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let x = tens(1, 3, vec![0.2, -0.8, 1.1]);
        let w1 = par(3, 2, vec![0.1, 0.4, -0.3, 0.7, 0.5, -0.6]);
        let b1 = par(1, 2, vec![0.05, -0.02]);
        let w2 = par(2, 2, vec![0.9, -0.1, 0.3, 0.2]);
        let b2 = par(1, 2, vec![0.0, 0.1]);
        assert_gradients(
            &[w1.clone(), b1.clone(), w2.clone(), b2.clone()],
            |t| {
                let y = mlp_head(t, &x, &w1, &b1, &w2, &b2)?;
                t.cross_entropy_logits(&y, 1)
            },
            1e-4,
        )
        .unwrap();
    }

    #[test]
    fn soft_pool_with_sharp_logits_selects_clusters() {
        // logits so large the softmax is effectively one-hot
        let t = Tape::new();
        let adj = tens(3, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let z = tens(3, 1, vec![1.0, 2.0, 4.0]);
        let s_raw = tens(3, 2, vec![50.0, 0.0, 50.0, 0.0, 0.0, 50.0]);
        let out = soft_pool(&t, &adj, &z, &s_raw).unwrap();
        let x = out.x.value();
        // cluster 0 sums nodes 0 and 1, cluster 1 is node 2
        assert!((x[(0, 0)] - 3.0).abs() < 1e-10);
        assert!((x[(1, 0)] - 4.0).abs() < 1e-10);
        let a = out.adj.value();
        // one intra-cluster edge (0,1) doubles on the diagonal
        assert!((a[(0, 0)] - 2.0).abs() < 1e-9);
        assert!((a[(0, 1)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn soft_pool_rows_are_stochastic() {
        let t = Tape::new();
        let adj = tens(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let z = tens(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let s_raw = tens(2, 3, vec![0.3, -0.8, 0.1, 1.2, 0.0, -0.4]);
        let out = soft_pool(&t, &adj, &z, &s_raw).unwrap();
        let s = out.s.value();
        for i in 0..2 {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_pool_gradients_match_finite_differences() {
        let adj = tens(3, 3, vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let z = par(3, 2, vec![0.4, -0.1, 0.8, 0.3, -0.5, 0.2]);
        let s_raw = par(3, 2, vec![0.1, 0.7, -0.3, 0.2, 0.5, -0.1]);
        assert_gradients(
            &[z.clone(), s_raw.clone()],
            |t| {
                let out = soft_pool(t, &adj, &z, &s_raw)?;
                let fx = t.frobenius_norm(&out.x);
                let fa = t.frobenius_norm(&out.adj);
                t.add(&fx, &fa)
            },
            1e-4,
        )
        .unwrap();
    }

    #[test]
    fn pairwise_dists_hand_example() {
        let t = Tape::new();
        let q = tens(2, 2, vec![0.0, 0.0, 3.0, 4.0]);
        let keys = tens(1, 2, vec![0.0, 0.0]);
        let d2 = pairwise_sq_dists(&t, &q, &keys).unwrap();
        assert!((d2.value()[(0, 0)]).abs() < 1e-12);
        assert!((d2.value()[(1, 0)] - 25.0).abs() < 1e-12);
    }

    #[test]
    fn student_t_at_zero_distance_is_one_before_normalization() {
        // single key: normalization divides by itself, row = 1
        let t = Tape::new();
        let d2 = tens(1, 1, vec![0.0]);
        let c = student_t_kernel(&t, &d2, 1.0).unwrap();
        assert_eq!(c.value().data(), &[1.0]);
    }

    #[test]
    fn student_t_rows_sum_to_one() {
        let t = Tape::new();
        let d2 = tens(2, 3, vec![0.0, 1.0, 4.0, 2.0, 2.0, 0.5]);
        let c = student_t_kernel(&t, &d2, 1.0).unwrap();
        let v = c.value();
        for i in 0..2 {
            let sum: f64 = v.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // tau = 1: raw similarity is 1/(1+d2)
        let raw = [1.0, 0.5, 0.2];
        let total: f64 = raw.iter().sum();
        assert!((v[(0, 0)] - raw[0] / total).abs() < 1e-12);
    }

    #[test]
    fn kernel_assign_gradients_match_finite_differences() {
        let q = par(3, 2, vec![0.5, 0.1, -0.4, 0.9, 0.2, -0.7]);
        let k1 = par(2, 2, vec![0.3, 0.3, -0.2, 0.6]);
        let k2 = par(2, 2, vec![-0.5, 0.1, 0.8, -0.3]);
        let w1 = Tensor::parameter(Mat::new(1, 1, vec![0.7]).unwrap());
        let w2 = Tensor::parameter(Mat::new(1, 1, vec![-0.4]).unwrap());
        assert_gradients(
            &[q.clone(), k1.clone(), k2.clone(), w1.clone(), w2.clone()],
            |t| {
                let s = kernel_assign(
                    t,
                    &q,
                    &[k1.clone(), k2.clone()],
                    &[w1.clone(), w2.clone()],
                    1.0,
                )?;
                // weighted sum keeps softmax jacobian non-trivial
                let probe = Tensor::constant(Mat::new(3, 2, vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.2]).unwrap());
                let prod = t.mul(&s, &probe)?;
                Ok(t.sum(&prod))
            },
            1e-4,
        )
        .unwrap();
    }

    #[test]
    fn distance_assign_prefers_nearest_key() {
        let t = Tape::new();
        let q = tens(1, 2, vec![1.0, 0.0]);
        let keys = tens(2, 2, vec![1.0, 0.0, 5.0, 5.0]);
        let s = distance_assign(&t, &q, &keys).unwrap();
        let v = s.value();
        assert!(v[(0, 0)] > v[(0, 1)]);
        assert!((v.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn memory_pool_gradients_match_finite_differences() {
        let q = par(3, 2, vec![0.6, -0.2, 0.1, 0.9, -0.5, 0.4]);
        let s = tens(3, 2, vec![0.7, 0.3, 0.5, 0.5, 0.2, 0.8]);
        let w = par(2, 2, vec![0.3, -0.6, 0.8, 0.2]);
        assert_gradients(
            &[q.clone(), w.clone()],
            |t| {
                let out = memory_pool(t, &q, &s, &w)?;
                Ok(t.frobenius_norm(&out))
            },
            1e-4,
        )
        .unwrap();
    }
}
