//! Dense-matrix reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every differentiable operation of one forward pass as a
//! node with a backward closure. [`Tape::backward`] replays the nodes in
//! reverse, accumulating gradients into every tensor that participates in
//! differentiation. Tensors detached from the tape (constants, frozen random
//! assignments) never receive gradient.
//!
//! The tape is per-forward-pass and single-owner: build one, run the forward
//! computation through it, call `backward`, drop it. Parameters survive across
//! tapes; their `grad` buffers are cleared explicitly between optimizer steps.
//!
//! Everything is `f64`. Storage is row-major dense; graphs at desk scale are
//! tens of nodes, so there are no sparse kernels.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::mat::Mat;

static TAPE_UID: AtomicU64 = AtomicU64::new(1);

struct TensorInner {
    mat: Mat,
    grad: Option<Mat>,
    trainable: bool,
    requires_grad: bool,
    /// (tape uid, node index) when this tensor is the output of a recorded op.
    tape_id: Option<(u64, usize)>,
}

/// Shared handle to a dense matrix participating in differentiation.
///
/// Cloning a `Tensor` clones the handle, not the storage; parameter updates
/// through one handle are visible through all of them.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorInner>>,
}

impl Tensor {
    fn from_inner(inner: TensorInner) -> Self {
        Tensor {
            inner: Rc::new(RefCell::new(inner)),
        }
    }

    /// A tensor outside the differentiation graph. Never receives gradient.
    pub fn constant(mat: Mat) -> Self {
        Tensor::from_inner(TensorInner {
            mat,
            grad: None,
            trainable: false,
            requires_grad: false,
            tape_id: None,
        })
    }

    /// A trainable leaf: receives gradient and is updated by the optimizer.
    pub fn parameter(mat: Mat) -> Self {
        Tensor::from_inner(TensorInner {
            mat,
            grad: None,
            trainable: true,
            requires_grad: true,
            tape_id: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::constant(Mat::new(1, 1, vec![v]).expect("1x1"))
    }

    pub fn rows(&self) -> usize {
        self.inner.borrow().mat.rows()
    }

    pub fn cols(&self) -> usize {
        self.inner.borrow().mat.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.inner.borrow().mat.shape()
    }

    /// Snapshot of the current value.
    pub fn value(&self) -> Mat {
        self.inner.borrow().mat.clone()
    }

    /// The single entry of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        let b = self.inner.borrow();
        assert_eq!(b.mat.shape(), (1, 1), "item() on non-scalar tensor");
        b.mat.data()[0]
    }

    pub fn is_trainable(&self) -> bool {
        self.inner.borrow().trainable
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Freeze or unfreeze a leaf. A frozen leaf is skipped by op recording,
    /// so nothing downstream of it is taped unless another input needs grad.
    pub fn set_trainable(&self, trainable: bool) {
        let mut b = self.inner.borrow_mut();
        b.trainable = trainable;
        b.requires_grad = trainable;
    }

    /// Accumulated gradient, if any backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Mat> {
        self.inner.borrow().grad.clone()
    }

    /// Gradient with missing treated as zero (disconnected parameters).
    pub fn grad_or_zeros(&self) -> Mat {
        let b = self.inner.borrow();
        b.grad
            .clone()
            .unwrap_or_else(|| Mat::zeros(b.mat.rows(), b.mat.cols()))
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Replace the stored value, keeping the shape. Used by the optimizer and
    /// by finite-difference probes.
    pub fn set_value(&self, mat: Mat) {
        let mut b = self.inner.borrow_mut();
        assert_eq!(b.mat.shape(), mat.shape(), "set_value shape");
        b.mat = mat;
    }

    /// In-place update of one entry (finite-difference probes).
    pub fn nudge(&self, i: usize, j: usize, delta: f64) {
        let mut b = self.inner.borrow_mut();
        b.mat[(i, j)] += delta;
    }

    /// A constant copy of the current value, cut off from the tape.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.value())
    }

    /// Scale the accumulated gradient in place (batch averaging).
    pub fn scale_grad(&self, factor: f64) {
        let mut b = self.inner.borrow_mut();
        if let Some(g) = b.grad.as_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    fn accumulate(&self, delta: &Mat) {
        let mut b = self.inner.borrow_mut();
        match b.grad.as_mut() {
            Some(g) => {
                for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gv += dv;
                }
            }
            None => b.grad = Some(delta.clone()),
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &b.mat.shape())
            .field("trainable", &b.trainable)
            .field("requires_grad", &b.requires_grad)
            .finish()
    }
}

struct Node {
    backward: Box<dyn Fn()>,
}

/// Ordered record of one forward pass.
pub struct Tape {
    uid: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            uid: TAPE_UID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Wrap an op result. Records a node only when some input requires
    /// gradient; otherwise the output is a plain constant and the whole
    /// subtree stays off the tape. `make_backward` receives the output
    /// handle so the closure can read the upstream gradient.
    fn emit<F>(&self, mat: Mat, needs_grad: bool, make_backward: F) -> Tensor
    where
        F: FnOnce(Tensor) -> Box<dyn Fn()>,
    {
        if !needs_grad {
            return Tensor::constant(mat);
        }
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        let out = Tensor::from_inner(TensorInner {
            mat,
            grad: None,
            trainable: false,
            requires_grad: true,
            tape_id: Some((self.uid, idx)),
        });
        let backward = make_backward(out.clone());
        nodes.push(Node { backward });
        out
    }

    /// Populate gradients of every tensor reachable from `loss`.
    ///
    /// `loss` must be a 1x1 tensor produced on this tape.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.shape() != (1, 1) {
            let (r, c) = loss.shape();
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got {r}x{c}"
            )));
        }
        let last = {
            let b = loss.inner.borrow();
            match b.tape_id {
                Some((uid, idx)) if uid == self.uid => idx,
                _ => {
                    return Err(Error::contract(
                        "backward: loss was not produced on this tape".to_string(),
                    ))
                }
            }
        };
        loss.accumulate(&Mat::ones(1, 1));
        let nodes = self.nodes.borrow();
        for node in nodes[..=last].iter().rev() {
            (node.backward)();
        }
        Ok(())
    }

    // ── Core operations ─────────────────────────────────────────────

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ar, ac) = a.shape();
        let (br, bc) = b.shape();
        if ac != br {
            return Err(Error::Dim {
                op: "matmul",
                lhs_rows: ar,
                lhs_cols: ac,
                rhs_rows: br,
                rhs_cols: bc,
            });
        }
        let out_mat = a.value().matmul(&b.value())?;
        let needs = a.requires_grad() || b.requires_grad();
        let (ah, bh) = (a.clone(), b.clone());
        Ok(self.emit(out_mat, needs, move |out| {
            Box::new(move || {
                let Some(g) = out.grad() else { return };
                let av = ah.value();
                let bv = bh.value();
                if ah.requires_grad() {
                    ah.accumulate(&g.matmul(&bv.transpose()).expect("matmul backward lhs"));
                }
                if bh.requires_grad() {
                    bh.accumulate(&av.transpose().matmul(&g).expect("matmul backward rhs"));
                }
            })
        }))
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip_op("add", a, b, |x, y| x + y, |_x, _y, g| (g, g))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip_op("sub", a, b, |x, y| x - y, |_x, _y, g| (g, -g))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip_op("mul", a, b, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip_op(
            "div",
            a,
            b,
            |x, y| x / y,
            |x, y, g| (g / y, -g * x / (y * y)),
        )
    }

    fn zip_op(
        &self,
        name: &'static str,
        a: &Tensor,
        b: &Tensor,
        fwd: impl Fn(f64, f64) -> f64 + 'static,
        bwd: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Result<Tensor> {
        let (ar, ac) = a.shape();
        let (br, bc) = b.shape();
        if (ar, ac) != (br, bc) {
            return Err(Error::Dim {
                op: name,
                lhs_rows: ar,
                lhs_cols: ac,
                rhs_rows: br,
                rhs_cols: bc,
            });
        }
        let out_mat = a.value().zip(&b.value(), &fwd)?;
        let needs = a.requires_grad() || b.requires_grad();
        let (ah, bh) = (a.clone(), b.clone());
        Ok(self.emit(out_mat, needs, move |out| {
            Box::new(move || {
                let Some(g) = out.grad() else { return };
                let av = ah.value();
                let bv = bh.value();
                let mut da = Mat::zeros(av.rows(), av.cols());
                let mut db = Mat::zeros(av.rows(), av.cols());
                for idx in 0..g.len() {
                    let (ga, gb) = bwd(av.data()[idx], bv.data()[idx], g.data()[idx]);
                    da.data_mut()[idx] = ga;
                    db.data_mut()[idx] = gb;
                }
                if ah.requires_grad() {
                    ah.accumulate(&da);
                }
                if bh.requires_grad() {
                    bh.accumulate(&db);
                }
            })
        }))
    }

    fn unary_op(
        &self,
        a: &Tensor,
        fwd: impl Fn(f64) -> f64 + 'static,
        // maps (input value, upstream grad) -> input grad
        bwd: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let out_mat = a.value().map(&fwd);
        let ah = a.clone();
        self.emit(out_mat, a.requires_grad(), move |out| {
            Box::new(move || {
                let Some(g) = out.grad() else { return };
                let av = ah.value();
                let mut da = Mat::zeros(av.rows(), av.cols());
                for idx in 0..g.len() {
                    da.data_mut()[idx] = bwd(av.data()[idx], g.data()[idx]);
                }
                ah.accumulate(&da);
            })
        })
    }

    /// max(0, x); the subgradient at exactly 0 is 0.
    pub fn relu(&self, a: &Tensor) -> Tensor {
        self.unary_op(a, |x| x.max(0.0), |x, g| if x > 0.0 { g } else { 0.0 })
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        self.unary_op(a, move |x| c * x, move |_x, g| c * g)
    }

    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Tensor {
        self.unary_op(a, move |x| x + c, |_x, g| g)
    }

    /// Natural log; callers guarantee positivity (clamp or shift first).
    pub fn ln(&self, a: &Tensor) -> Tensor {
        self.unary_op(a, |x| x.ln(), |x, g| g / x)
    }

    /// max(c, x); like relu, the boundary subgradient is 0.
    pub fn clamp_min(&self, a: &Tensor, c: f64) -> Tensor {
        self.unary_op(a, move |x| x.max(c), move |x, g| if x > c { g } else { 0.0 })
    }

    /// Elementwise square root; subgradient 0 at 0.
    pub fn sqrt(&self, a: &Tensor) -> Tensor {
        self.unary_op(
            a,
            |x| x.sqrt(),
            |x, g| if x > 0.0 { 0.5 * g / x.sqrt() } else { 0.0 },
        )
    }

    /// Elementwise x^p for strictly positive x.
    pub fn powf(&self, a: &Tensor, p: f64) -> Tensor {
        self.unary_op(a, move |x| x.powf(p), move |x, g| g * p * x.powf(p - 1.0))
    }

    /// |x| with subgradient 0 at the tie.
    pub fn abs(&self, a: &Tensor) -> Tensor {
        self.unary_op(a, |x| x.abs(), |x, g| g * sign0(x))
    }

    pub fn transpose(&self, a: &Tensor) -> Tensor {
        let out_mat = a.value().transpose();
        let ah = a.clone();
        self.emit(out_mat, a.requires_grad(), move |out| {
            Box::new(move || {
                let Some(g) = out.grad() else { return };
                ah.accumulate(&g.transpose());
            })
        })
    }

    /// Multiply a whole matrix by a 1x1 tensor (learned scalar).
    pub fn scale_by(&self, a: &Tensor, s: &Tensor) -> Result<Tensor> {
        if s.shape() != (1, 1) {
            let (r, c) = s.shape();
            return Err(Error::contract(format!(
                "scale_by: scale must be 1x1, got {r}x{c}"
            )));
        }
        let sv = s.item();
        let out_mat = a.value().map(|x| sv * x);
        let needs = a.requires_grad() || s.requires_grad();
        let (ah, sh) = (a.clone(), s.clone());
        Ok(self.emit(out_mat, needs, move |out| {
            Box::new(move || {
                let Some(g) = out.grad() else { return };
                let av = ah.value();
                let sv = sh.item();
                if ah.requires_grad() {
                    ah.accumulate(&g.map(|x| sv * x));
                }
                if sh.requires_grad() {
                    let dot: f64 = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).sum();
                    sh.accumulate(&Mat::new(1, 1, vec![dot]).expect("1x1"));
                }
            })
        }))
    }

    /// Row-wise softmax with per-row max subtraction for stability.
    pub fn softmax_rows(&self, a: &Tensor) -> Tensor {
        let av = a.value();
        let (n, c) = av.shape();
        let mut out_mat = Mat::zeros(n, c);
        for i in 0..n {
            let row = av.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                out_mat[(i, j)] = e;
                sum += e;
            }
            for j in 0..c {
                out_mat[(i, j)] /= sum;
            }
        }
        let ah = a.clone();
        let sv = out_mat.clone();
        self.emit(out_mat, a.requires_grad(), move |out| {
            Box::new(move || {
                let Some(g) = out.grad() else { return };
                let (n, c) = sv.shape();
                let mut da = Mat::zeros(n, c);
                for i in 0..n {
                    let dot: f64 = (0..c).map(|j| g[(i, j)] * sv[(i, j)]).sum();
                    for j in 0..c {
                        da[(i, j)] = sv[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                ah.accumulate(&da);
            })
        })
    }

    /// sqrt of the sum of squared entries, as a 1x1 tensor.
    pub fn frobenius_norm(&self, a: &Tensor) -> Tensor {
        let av = a.value();
        let norm = av.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let ah = a.clone();
        self.emit(
            Mat::new(1, 1, vec![norm]).expect("1x1"),
            a.requires_grad(),
            move |out| {
                Box::new(move || {
                    let Some(g) = out.grad() else { return };
                    let gs = g.data()[0];
                    let av = ah.value();
                    let norm = av.data().iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        ah.accumulate(&av.map(|x| gs * x / norm));
                    }
                })
            },
        )
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&self, a: &Tensor) -> Tensor {
        let total: f64 = a.value().data().iter().sum();
        let ah = a.clone();
        self.emit(
            Mat::new(1, 1, vec![total]).expect("1x1"),
            a.requires_grad(),
            move |out| {
                Box::new(move || {
                    let Some(g) = out.grad() else { return };
                    let gs = g.data()[0];
                    let (r, c) = ah.shape();
                    ah.accumulate(&Mat::from_fn(r, c, |_, _| gs));
                })
            },
        )
    }

    pub fn mean_all(&self, a: &Tensor) -> Tensor {
        let n = a.rows() * a.cols();
        let s = self.sum(a);
        self.scale(&s, 1.0 / n as f64)
    }

    /// Per-cluster, per-column max over rows. `assign[i]` is the cluster of
    /// row i; the gradient routes to the argmax row (lowest index on ties).
    pub fn max_pool_rows(&self, z: &Tensor, assign: &[usize], k: usize) -> Result<Tensor> {
        let zv = z.value();
        let (n, d) = zv.shape();
        if assign.len() != n {
            return Err(Error::contract(format!(
                "max_pool_rows: assignment length {} does not match {} rows",
                assign.len(),
                n
            )));
        }
        let mut hit = vec![false; k];
        for &c in assign {
            if c >= k {
                return Err(Error::contract(format!(
                    "max_pool_rows: cluster index {c} out of range 0..{k}"
                )));
            }
            hit[c] = true;
        }
        if hit.iter().any(|h| !h) {
            return Err(Error::contract(
                "max_pool_rows: empty cluster in partition".to_string(),
            ));
        }
        let mut out_mat = Mat::from_fn(k, d, |_, _| f64::NEG_INFINITY);
        let mut argmax = vec![usize::MAX; k * d];
        for i in 0..n {
            let c = assign[i];
            for j in 0..d {
                // strict > keeps the lowest-index winner on ties
                if zv[(i, j)] > out_mat[(c, j)] {
                    out_mat[(c, j)] = zv[(i, j)];
                    argmax[c * d + j] = i;
                }
            }
        }
        let zh = z.clone();
        Ok(self.emit(out_mat, z.requires_grad(), move |out| {
            Box::new(move || {
                let Some(g) = out.grad() else { return };
                let (n, d) = zh.shape();
                let mut dz = Mat::zeros(n, d);
                for c in 0..k {
                    for j in 0..d {
                        let i = argmax[c * d + j];
                        dz[(i, j)] += g[(c, j)];
                    }
                }
                zh.accumulate(&dz);
            })
        }))
    }

    /// Numerically stable −log softmax(logits)[label] for a 1xc logit row.
    pub fn cross_entropy_logits(&self, logits: &Tensor, label: usize) -> Result<Tensor> {
        let lv = logits.value();
        let (r, c) = lv.shape();
        if r != 1 {
            return Err(Error::contract(format!(
                "cross_entropy_logits: logits must be a single row, got {r}x{c}"
            )));
        }
        if label >= c {
            return Err(Error::contract(format!(
                "cross_entropy_logits: label {label} out of range for {c} classes"
            )));
        }
        let row = lv.row(0);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        let loss = lse - row[label];
        let lh = logits.clone();
        Ok(self.emit(
            Mat::new(1, 1, vec![loss]).expect("1x1"),
            logits.requires_grad(),
            move |out| {
                Box::new(move || {
                    let Some(g) = out.grad() else { return };
                    let gs = g.data()[0];
                    let lv = lh.value();
                    let row = lv.row(0);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    let k = row.len();
                    let mut dl = Mat::zeros(1, k);
                    for j in 0..k {
                        let soft = exps[j] / sum;
                        dl[(0, j)] = gs * (soft - if j == label { 1.0 } else { 0.0 });
                    }
                    lh.accumulate(&dl);
                })
            },
        ))
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
