//! Training objectives built on the autodiff graph.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `w * MSE(a_t, a_s) + (1 - w) * MSE(h, h_hat)`. The endpoints `w = 0` and
/// `w = 1` build only the surviving term, so they coincide bitwise with the
/// plain losses.
fn blended<T: Scalar>(g: &mut Graph<T>, a_t: Var, a_s: Var, h: Var, h_hat: Var, w: f64, what: &'static str) -> Result<Var> {
    if g.value(a_t).shape() != g.value(a_s).shape() {
        return Err(Error::dim(what, g.value(a_t).shape(), g.value(a_s).shape()));
    }
    if g.value(h).shape() != g.value(h_hat).shape() {
        return Err(Error::dim(what, g.value(h).shape(), g.value(h_hat).shape()));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Usage(format!("{what} weight {w} is outside [0, 1]")));
    }
    if w == 0.0 {
        return g.mse(h, h_hat);
    }
    if w == 1.0 {
        return g.mse(a_t, a_s);
    }
    let distill = g.mse(a_t, a_s)?;
    let gt = g.mse(h, h_hat)?;
    let distill = g.scale(distill, T::from_f64(w));
    let gt = g.scale(gt, T::from_f64(1.0 - w));
    g.add(distill, gt)
}

/// Codeword-mimic objective; `v_t` should be a constant so the teacher
/// receives no gradient.
pub fn cm_loss<T: Scalar>(g: &mut Graph<T>, v_t: Var, v_s: Var, h: Var, h_hat: Var, alpha: f64) -> Result<Var> {
    blended(g, v_t, v_s, h, h_hat, alpha, "cm_loss")
}

/// Output-level distillation against a detached teacher reconstruction.
pub fn vanilla_kd_loss<T: Scalar>(g: &mut Graph<T>, h_t: Var, h_s: Var, h: Var, beta: f64) -> Result<Var> {
    blended(g, h_t, h_s, h, h_s, beta, "vanilla_kd_loss")
}
