//! Supervised and auxiliary loss terms.
//!
//! Classification uses the fused stable cross-entropy op; regression uses
//! mean absolute error. The auxiliary terms all read a soft assignment
//! matrix: link prediction pulls `S S^T` toward the adjacency, the entropy
//! term pushes rows toward one-hot, and the purity term measures how far
//! the assignment is from a sharpened version of itself.

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::graph::Label;
use crate::mat::Mat;

/// Floor applied before logarithms of assignment entries.
pub const LOG_EPS: f64 = 1e-12;

/// Supervised loss for one graph: cross-entropy on class labels, absolute
/// error on regression targets. `output` is the 1 x c model head output.
pub fn supervised_loss(t: &Tape, output: &Tensor, label: &Label) -> Result<Tensor> {
    match label {
        Label::Class(c) => t.cross_entropy_logits(output, *c),
        Label::Value(v) => mae_loss(t, output, *v),
    }
}

/// |pred - target| for a 1 x 1 prediction; subgradient 0 at the tie.
pub fn mae_loss(t: &Tape, pred: &Tensor, target: f64) -> Result<Tensor> {
    let d = t.add_scalar(pred, -target);
    let a = t.abs(&d);
    Ok(t.sum(&a))
}

/// `||A - S S^T||_F / n^2`: how badly the soft assignment reconstructs the
/// adjacency, normalized by entry count. The norm itself, not its square.
pub fn link_prediction_loss(t: &Tape, adj: &Tensor, s: &Tensor) -> Result<Tensor> {
    let n = adj.rows();
    let sst = t.matmul(s, &t.transpose(s))?;
    let diff = t.sub(adj, &sst)?;
    let fro = t.frobenius_norm(&diff);
    Ok(t.scale(&fro, 1.0 / (n * n) as f64))
}

/// Mean over nodes of the row entropy `-sum_j s_ij ln(s_ij + eps)`.
/// Zero for one-hot rows, `ln k` for uniform rows.
pub fn entropy_loss(t: &Tape, s: &Tensor) -> Result<Tensor> {
    let n = s.rows();
    let lg = t.ln(&t.add_scalar(s, LOG_EPS));
    let prod = t.mul(s, &lg)?;
    Ok(t.scale(&t.sum(&prod), -1.0 / n as f64))
}

/// KL divergence from the assignment to its own sharpened target:
/// `P_ij = f_ij / sum_j f_ij` with `f_ij = s_ij^2 / sum_i s_ij`, and the
/// loss is `sum_ij P_ij ln(P_ij / s_ij)`. Exactly zero when every row of
/// `s` is uniform, because then `P = s`.
pub fn kl_purity_loss(t: &Tape, s: &Tensor) -> Result<Tensor> {
    let (n, k) = s.shape();
    let sc = t.clamp_min(s, LOG_EPS);
    let ones_n = Tensor::constant(Mat::ones(1, n));
    let ones_nk = Tensor::constant(Mat::ones(n, 1));
    let ones_k = Tensor::constant(Mat::ones(k, 1));
    let colsum = t.matmul(&ones_n, &sc)?; // 1 x k
    let colsum_b = t.matmul(&ones_nk, &colsum)?; // n x k
    let f = t.div(&t.mul(&sc, &sc)?, &colsum_b)?;
    let rowsum = t.matmul(&f, &ones_k)?; // n x 1
    let rowsum_b = t.matmul(&rowsum, &Tensor::constant(Mat::ones(1, k)))?;
    let p = t.div(&f, &rowsum_b)?;
    let ratio = t.sub(&t.ln(&t.clamp_min(&p, LOG_EPS)), &t.ln(&sc))?;
    Ok(t.sum(&t.mul(&p, &ratio)?))
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
    fn mae_matches_hand_values_and_sign() {
        let t = Tape::new();
        let p = par(1, 1, vec![3.0]);
        let l = mae_loss(&t, &p, 5.0).unwrap();
        assert_eq!(l.item(), 2.0);
        t.backward(&l).unwrap();
        assert_eq!(p.grad().unwrap().data(), &[-1.0]);

        let t = Tape::new();
        let p = par(1, 1, vec![5.0]);
        let l = mae_loss(&t, &p, 5.0).unwrap();
        assert_eq!(l.item(), 0.0);
        t.backward(&l).unwrap();
        // subgradient at the tie is zero
        assert_eq!(p.grad().unwrap().data(), &[0.0]);
    }

    #[test]
    fn supervised_dispatches_on_label() {
        let t = Tape::new();
        let out = tens(1, 2, vec![0.0, 0.0]);
        let l = supervised_loss(&t, &out, &Label::Class(1)).unwrap();
        assert!((l.item() - (2.0f64).ln()).abs() < 1e-12);

        let out = tens(1, 1, vec![1.5]);
        let l = supervised_loss(&t, &out, &Label::Value(1.0)).unwrap();
        assert!((l.item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn link_prediction_hand_example() {
        // one edge, identity assignment: ||A - I||_F = 2, / n^2 = 0.5
        let t = Tape::new();
        let adj = tens(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let s = tens(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let l = link_prediction_loss(&t, &adj, &s).unwrap();
        assert!((l.item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn link_prediction_gradients_match_finite_differences() {
        let adj = tens(3, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let s = par(3, 2, vec![0.6, 0.4, 0.3, 0.7, 0.8, 0.2]);
        assert_gradients(
            std::slice::from_ref(&s),
            |t| link_prediction_loss(t, &adj, &s),
            1e-4,
        )
        .unwrap();
    }

    #[test]
    fn entropy_of_one_hot_is_zero_and_uniform_is_ln_k() {
        let t = Tape::new();
        let onehot = tens(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let l = entropy_loss(&t, &onehot).unwrap();
        assert!(l.item().abs() < 1e-9);

        let u = 1.0 / 3.0;
        let uniform = tens(2, 3, vec![u; 6]);
        let l = entropy_loss(&t, &uniform).unwrap();
        assert!((l.item() - (3.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn entropy_gradients_match_finite_differences() {
        let s = par(2, 3, vec![0.5, 0.3, 0.2, 0.1, 0.6, 0.3]);
        assert_gradients(std::slice::from_ref(&s), |t| entropy_loss(t, &s), 1e-4).unwrap();
    }

    #[test]
    fn kl_purity_is_zero_on_uniform_rows() {
        for n in 1..=8usize {
            for k in 1..=8usize {
                let t = Tape::new();
                let s = Tensor::constant(Mat::from_fn(n, k, |_, _| 1.0 / k as f64));
                let l = kl_purity_loss(&t, &s).unwrap();
                assert!(l.item().abs() <= 1e-10, "n={n} k={k}: {}", l.item());
            }
        }
    }

    #[test]
    fn kl_purity_is_positive_on_mixed_rows() {
        let t = Tape::new();
        let s = tens(2, 2, vec![0.9, 0.1, 0.4, 0.6]);
        let l = kl_purity_loss(&t, &s).unwrap();
        assert!(l.item() > 0.0);
    }

    #[test]
    fn kl_purity_gradients_match_finite_differences() {
        // strictly interior so the clamp does not kink the probe
        let s = par(3, 2, vec![0.7, 0.3, 0.45, 0.55, 0.2, 0.8]);
        assert_gradients(std::slice::from_ref(&s), |t| kl_purity_loss(t, &s), 1e-4).unwrap();
    }

    #[test]
    fn kl_purity_single_row_is_a_fixed_point() {
        // with one row, colsum_j = s_j, so f = s and P = s: loss 0 for any
        // distribution, not just the uniform one
        let t = Tape::new();
        let s = tens(1, 4, vec![0.55, 0.25, 0.15, 0.05]);
        let l = kl_purity_loss(&t, &s).unwrap();
        assert!(l.item().abs() < 1e-12, "{}", l.item());
    }
}
