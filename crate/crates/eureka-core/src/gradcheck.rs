//! Central finite-difference check of [`Tape::backward`].
//!
//! This is the independent oracle for gradient correctness: a scalar
//! function built on the tape is re-evaluated at `x ± h e_k` for every
//! coordinate and the central difference is compared against the analytic
//! gradient from the reverse pass.

use alloc::vec::Vec;

use crate::math;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Tensor, TensorError};

/// Builds the function under test on a fresh tape. The `NodeId` argument is
/// the leaf holding the evaluation point; the returned node must be the
/// scalar output.
pub trait ScalarFn {
    fn build(&self, tape: &mut Tape, point: NodeId) -> Result<NodeId, TensorError>;
}

impl<F> ScalarFn for F
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId, TensorError>,
{
    fn build(&self, tape: &mut Tape, point: NodeId) -> Result<NodeId, TensorError> {
        self(tape, point)
    }
}

/// Maximum over coordinates of the relative error between the analytic
/// gradient and central differences `(f(x + h e_k) - f(x - h e_k)) / 2h`.
///
/// The relative error of a coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F: ScalarFn>(
    function: F,
    point: &Tensor,
    step: f64,
) -> Result<f64, TensorError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(TensorError::InvalidStep);
    }

    let eval = |t: Tensor| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(t)?;
        let out = function.build(&mut tape, leaf)?;
        tape.value(out).item()
    };

    // Analytic gradient at the point.
    let analytic = {
        let mut tape = Tape::new();
        let leaf = tape.leaf(point.clone())?;
        let out = function.build(&mut tape, leaf)?;
        if !tape.value(out).is_scalar() {
            return Err(TensorError::NonScalarOutput {
                shape: tape.value(out).shape().to_vec(),
            });
        }
        tape.backward(out)?.get(&tape, leaf)
    };

    let mut max_rel = 0.0_f64;
    let base = point.data().to_vec();
    for k in 0..base.len() {
        let mut plus = base.clone();
        plus[k] += step;
        let mut minus = base.clone();
        minus[k] -= step;
        let f_plus = eval(Tensor::new(point.shape().to_vec(), plus)?)?;
        let f_minus = eval(Tensor::new(point.shape().to_vec(), minus)?)?;
        let numeric = (f_plus - f_minus) / (2.0 * step);
        let a = analytic.data()[k];
        let denom = math::abs(a).max(math::abs(numeric)).max(1e-8);
        let rel = math::abs(a - numeric) / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

/// Convenience wrapper: checks a function against its gradient on `point`
/// with the conventional step `1e-5`, returning the max relative error.
pub fn check_default<F: ScalarFn>(function: F, point: &Tensor) -> Result<f64, TensorError> {
    finite_difference_check(function, point, 1e-5)
}
