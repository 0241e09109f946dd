use super::matrix::Matrix;
use super::tape::{Tape, Tensor};
use crate::error::Result;

/// Central-difference step used by [`gradcheck`].
pub const FD_STEP: f64 = 1e-5;

/// Derivative scale below which the relative error is measured against this
/// floor. Central differences at [`FD_STEP`] carry roundoff near
/// `ε·|f|/h ≈ 1e-11`, so smaller derivatives cannot be resolved relatively.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRAD_FLOOR)
}

/// Maximum relative error between the tape gradient of a scalar map and
/// central finite differences, over every entry of `x`.
pub fn gradcheck<F>(x: &Matrix, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, Tensor) -> Result<Tensor>,
{
    gradcheck_many(std::slice::from_ref(x), |tape, ts| f(tape, ts[0]))
}

/// As [`gradcheck`], for a map of several inputs.
pub fn gradcheck_many<F>(xs: &[Matrix], f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    let mut tape = Tape::new();
    let vars: Vec<Tensor> = xs.iter().map(|x| tape.variable(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |inputs: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let ts: Vec<Tensor> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &ts)?;
        Ok(tape.value(out).item())
    };

    let mut worst = 0.0f64;
    let mut probe: Vec<Matrix> = xs.to_vec();
    for (k, &var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(var);
        for e in 0..xs[k].as_slice().len() {
            let base = xs[k].as_slice()[e];
            probe[k].as_mut_slice()[e] = base + FD_STEP;
            let plus = eval(&probe)?;
            probe[k].as_mut_slice()[e] = base - FD_STEP;
            let minus = eval(&probe)?;
            probe[k].as_mut_slice()[e] = base;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.as_slice()[e], numeric));
        }
    }
    Ok(worst)
}
