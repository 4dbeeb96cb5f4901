//! Finite-difference verification of tape gradients.

use super::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences at step `h`, returning the maximum relative error
/// `|analytic - numeric| / max(1, |numeric|)` over all coordinates.
///
/// The builder receives a fresh tape and the leaf holding `x` and must
/// return a scalar node. Input coordinates within `2h` of zero are nudged
/// away before checking so activations kinked at the origin do not poison
/// the difference quotient.
pub fn grad_check<S, F>(f: F, x: &[S], h: S) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, NodeId) -> Result<NodeId>,
{
    let two_h = h + h;
    let nudge = S::from_f64_lossy(3.0) * h;
    let x: Vec<S> = x
        .iter()
        .map(|&v| if v.abs() <= two_h { v + nudge } else { v })
        .collect();

    let eval = |data: Vec<S>| -> Result<S> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(data, vec![x.len()])?;
        let out = f(&mut tape, leaf)?;
        if tape.tensor(out).numel() != 1 {
            return Err(Error::Contract(
                "grad_check: function must be scalar-valued".to_string(),
            ));
        }
        Ok(tape.data(out)[0])
    };

    // Analytic gradient.
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), vec![x.len()])?;
    let out = f(&mut tape, leaf)?;
    if tape.tensor(out).numel() != 1 {
        return Err(Error::Contract(
            "grad_check: function must be scalar-valued".to_string(),
        ));
    }
    tape.backward(out)?;
    let analytic: Vec<S> = tape
        .grad(leaf)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![S::zero(); x.len()]);

    let mut worst = S::zero();
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus[i] += h;
        let mut minus = x.clone();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / two_h;
        let denom = S::one().max(numeric.abs());
        let err = (analytic[i] - numeric).abs() / denom;
        worst = worst.max(err);
    }
    Ok(worst)
}
