//! Central finite differences for checking tape gradients.

use crate::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Worst relative error `|n - a| / max(|n|, |a|, 1e-6)` between `grads` and
/// central differences of `loss`, over every parameter entry.
///
/// `perturb(model, tensor, entry, delta)` nudges one parameter of a copy.
/// An entry that misses `tol` is retried once with a step ten times smaller,
/// since a wide step can straddle a ReLU kink.
pub fn max_relative_error<M: Clone>(
    model: &M,
    grads: &[Tensor],
    tol: f64,
    perturb: impl Fn(&mut M, usize, usize, f64),
    loss: impl Fn(&M) -> f64,
) -> f64 {
    let numeric = |t: usize, i: usize, h: f64| {
        let mut plus = model.clone();
        perturb(&mut plus, t, i, h);
        let mut minus = model.clone();
        perturb(&mut minus, t, i, -h);
        (loss(&plus) - loss(&minus)) / (2.0 * h)
    };
    let rel = |n: f64, a: f64| (n - a).abs() / n.abs().max(a.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    for (t, g) in grads.iter().enumerate() {
        for (i, &analytic) in g.data().iter().enumerate() {
            let mut err = rel(numeric(t, i, STEP), analytic);
            if err >= tol {
                err = rel(numeric(t, i, STEP / 10.0), analytic);
            }
            worst = worst.max(err);
        }
    }
    worst
}
