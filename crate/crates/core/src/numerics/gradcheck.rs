//! Central finite-difference oracle for the autodiff tape.

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-6;

/// Compares the tape gradient of a scalar function of several inputs with
/// central differences. Returns the worst normwise relative error over the
/// inputs: `max|auto - numeric| / max|numeric|`.
pub fn finite_difference_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?.sum();
    let grads = tape.backward(out);
    let auto: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.sum().value().item())
    };

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, a) in auto.iter().enumerate() {
        let mut max_diff = 0.0f64;
        let mut max_ref = 0.0f64;
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            max_diff = max_diff.max((numeric - a.data()[i]).abs());
            max_ref = max_ref.max(numeric.abs());
        }
        let rel = if max_ref > 0.0 {
            max_diff / max_ref
        } else {
            max_diff
        };
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Single-input convenience wrapper around [`finite_difference_check`].
pub fn check_unary<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    finite_difference_check(|_, v| f(v[0]), std::slice::from_ref(x), h)
}
