//! Finite-difference validation of tape gradients.
//!
//! The numeric side only ever calls the forward evaluation, so it is an
//! oracle independent of the backward closures under test. Central
//! differences with h = 1e-5 resolve well against f64 noise for the loss
//! magnitudes used here.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// Default perturbation step.
pub const DEFAULT_H: f64 = 1e-5;

/// Worst observed deviation from a finite-difference probe.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Largest relative error over all checked entries.
    pub max_rel_err: f64,
    /// Index of the parameter holding the worst entry.
    pub param: usize,
    /// (row, col) of the worst entry.
    pub entry: (usize, usize),
    /// Analytic and numeric gradient at the worst entry.
    pub analytic: f64,
    pub numeric: f64,
    /// Total number of entries compared.
    pub entries: usize,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compare tape gradients against central differences.
///
/// `loss_fn` must rebuild the loss from scratch on the given tape each call,
/// reading the current values of `params`. Parameter values are restored
/// after probing.
pub fn check_gradients<F>(params: &[Tensor], mut loss_fn: F, h: f64) -> Result<GradReport>
where
    F: FnMut(&Tape) -> Result<Tensor>,
{
    // analytic pass
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = loss_fn(&tape)?;
    tape.backward(&loss)?;
    let analytic: Vec<_> = params.iter().map(|p| p.grad_or_zeros()).collect();
    drop(tape);

    // numeric probes: value-only forward evaluations
    let eval = |f: &mut F| -> Result<f64> {
        let tape = Tape::new();
        let loss = f(&tape)?;
        let v = loss.item();
        if !v.is_finite() {
            return Err(Error::NonFinite(
                "finite-difference probe produced a non-finite loss".to_string(),
            ));
        }
        Ok(v)
    };

    let mut report = GradReport {
        max_rel_err: 0.0,
        param: 0,
        entry: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        let (rows, cols) = p.shape();
        for i in 0..rows {
            for j in 0..cols {
                p.nudge(i, j, h);
                let up = eval(&mut loss_fn)?;
                p.nudge(i, j, -2.0 * h);
                let down = eval(&mut loss_fn)?;
                p.nudge(i, j, h);
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[pi][(i, j)];
                let e = rel_err(a, numeric);
                report.entries += 1;
                if e > report.max_rel_err {
                    report.max_rel_err = e;
                    report.param = pi;
                    report.entry = (i, j);
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}

/// [`check_gradients`] with the default step, failing above `tol`.
pub fn assert_gradients<F>(params: &[Tensor], loss_fn: F, tol: f64) -> Result<GradReport>
where
    F: FnMut(&Tape) -> Result<Tensor>,
{
    let report = check_gradients(params, loss_fn, DEFAULT_H)?;
    if report.max_rel_err > tol {
        return Err(Error::contract(format!(
            "gradient check failed: rel err {:.3e} > {:.1e} at param {} entry {:?} \
             (analytic {:.6e}, numeric {:.6e})",
            report.max_rel_err, tol, report.param, report.entry, report.analytic, report.numeric
        )));
    }
    Ok(report)
}
