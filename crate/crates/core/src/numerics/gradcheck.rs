//! Central finite-difference gradient checks.
//!
//! The numeric side only evaluates forward values, so it is independent of
//! the backward rules it is used to verify.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor so that near-zero coordinates are compared absolutely.
const REL_FLOOR: f64 = 1e-3;

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval(f: &impl Fn(&mut Tape, &[Var]) -> Result<Var>, inputs: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::Usage("gradient check needs a scalar function".into()));
    }
    Ok(v.item())
}

/// Analytic gradients of `f` with respect to every input.
pub fn analytic_gradients(
    f: &impl Fn(&mut Tape, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars.iter().map(|&v| grads.wrt(v)).collect())
}

/// Central-difference gradients of `f` with respect to every input.
pub fn numeric_gradients(
    f: &impl Fn(&mut Tape, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    step: f64,
) -> Result<Vec<Tensor>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(f, &work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(f, &work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest per-coordinate [`relative_error`] between analytic and
/// central-difference gradients of the scalar function `f`.
pub fn max_relative_error(
    f: &impl Fn(&mut Tape, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    step: f64,
) -> Result<f64> {
    let analytic = analytic_gradients(f, inputs)?;
    let numeric = numeric_gradients(f, inputs, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()).map(|(x, y)| relative_error(*x, *y)))
        .fold(0.0, f64::max))
}
