//! Numerical gradient verification.
//!
//! `check_gradients` compares analytic gradients against central finite
//! differences `(f(x+h) - f(x-h)) / 2h`, perturbing one parameter element at
//! a time. Use `f64` tensors here; `f32` has too little headroom for the
//! difference quotient.

use super::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};

/// Result of one parameter comparison that exceeded tolerance.
#[derive(Debug)]
pub struct GradMismatch {
    pub param: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative: f64,
}

/// Verify analytic gradients of `loss_fn` for every element of `params`.
///
/// `loss_fn` must rebuild the computation from scratch on the tape it is
/// given; it is invoked once for the analytic pass and twice per element for
/// the finite differences. Errors report the first mismatch above `rel_tol`
/// (relative to `max(|analytic|, |numeric|, 1e-8)`).
pub fn check_gradients<F: Scalar>(
    params: &[Tensor<F>],
    rel_tol: f64,
    step: f64,
    loss_fn: impl Fn(&Tape<F>) -> Result<Tensor<F>>,
) -> Result<()> {
    let tape = Tape::new();
    let loss = loss_fn(&tape)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| {
            p.grad()
                .map(|g| g.iter().map(|v| v.to_f64()).collect())
                .unwrap_or_else(|| vec![0.0; p.len()])
        })
        .collect();
    for p in params {
        p.clear_grad();
    }

    let eval = |tweaked: &Tensor<F>, element: usize, delta: f64| -> Result<f64> {
        let original = tweaked.to_vec();
        let mut bumped = original.clone();
        bumped[element] = F::from_f64(bumped[element].to_f64() + delta);
        tweaked.store(&bumped)?;
        let tape = Tape::no_grad();
        let value = loss_fn(&tape)?.item().to_f64();
        tweaked.store(&original)?;
        Ok(value)
    };

    for (pi, p) in params.iter().enumerate() {
        for (e, &got) in analytic[pi].iter().enumerate() {
            let plus = eval(p, e, step)?;
            let minus = eval(p, e, -step)?;
            let numeric = (plus - minus) / (2.0 * step);
            let scale = got.abs().max(numeric.abs()).max(1e-8);
            let relative = (got - numeric).abs() / scale;
            if relative > rel_tol {
                return Err(Error::contract(format!(
                    "gradient mismatch: param {pi} element {e}: analytic {got:.9e} vs numeric {numeric:.9e} (relative {relative:.3e})"
                )));
            }
        }
    }
    Ok(())
}
