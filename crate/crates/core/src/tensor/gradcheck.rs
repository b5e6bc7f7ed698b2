//! Central finite-difference verification of tape gradients.

use super::{Precision, Tape, Var};
use crate::error::{Error, Result};

/// Checks analytic gradients of a scalar-valued function against central
/// finite differences.
///
/// `build` reconstructs the computation on a fresh tape from leaf tensors
/// whose shapes and base values come from `init`. Runs in 64-bit mode
/// regardless of any training precision; `eps` must lie in `[1e-7, 1e-3]`.
///
/// Returns the maximum over all coordinates of
/// `|analytic - central_difference| / max(1, |analytic|)`.
///
/// A non-deterministic `build` (two identical evaluations that disagree) is
/// reported as an error rather than a spurious gradient mismatch.
pub fn grad_check<F>(build: F, init: &[(Vec<usize>, Vec<f64>)], eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }

    let eval = |values: &[Vec<f64>], want_grads: bool| -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let tape = Tape::new(Precision::F64);
        let vars: Vec<Var> = init
            .iter()
            .zip(values)
            .map(|((shape, _), data)| tape.leaf(shape.clone(), data.clone(), true))
            .collect();
        let loss = build(&tape, &vars)?;
        let value = loss.value();
        if !want_grads {
            return Ok((value, None));
        }
        tape.backward(&loss)?;
        Ok((value, Some(vars.iter().map(|v| v.grad()).collect())))
    };

    let base: Vec<Vec<f64>> = init.iter().map(|(_, d)| d.clone()).collect();
    let (v1, grads) = eval(&base, true)?;
    let (v2, _) = eval(&base, false)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::NonDeterministic { a: v1, b: v2 });
    }
    let grads = grads.expect("gradients requested");

    let mut max_rel = 0.0f64;
    let mut work = base.clone();
    for (pi, param) in base.iter().enumerate() {
        for ci in 0..param.len() {
            let orig = work[pi][ci];
            work[pi][ci] = orig + eps;
            let (plus, _) = eval(&work, false)?;
            work[pi][ci] = orig - eps;
            let (minus, _) = eval(&work, false)?;
            work[pi][ci] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads[pi][ci];
            let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
