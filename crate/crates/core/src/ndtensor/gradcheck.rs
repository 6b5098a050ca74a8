//! Central finite-difference verification of tape gradients (f64 only).
//! Uses the fourth-order stencil `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`
//! so that coordinates with tiny gradients are not swamped by rounding.

use crate::error::Result;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Max over coordinates of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(
        |t, vars| f(t, vars[0]),
        std::slice::from_ref(x),
        eps,
        None,
    )
}

/// Multi-input variant. When `max_coords` is set, only that many evenly
/// strided coordinates per input are probed.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_coords: Option<usize>,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, (x, v)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads.get_or_zeros(*v, x.shape());
        let n = x.numel();
        let stride = max_coords.map_or(1, |m| n.div_ceil(m.max(1)));
        for i in (0..n).step_by(stride) {
            let orig = x.data()[i];
            let mut at = |h: f64| -> Result<f64> {
                probe[k].data_mut()[i] = orig + h;
                eval(&probe)
            };
            let near = at(eps)? - at(-eps)?;
            let far = at(2.0 * eps)? - at(-2.0 * eps)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (8.0 * near - far) / (12.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
