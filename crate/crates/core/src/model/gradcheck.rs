//! Finite-difference verification of the whole model, one parameter
//! tensor at a time.

use super::config::ModelConfig;
use super::forward::{forward_bound, DropoutRng, PreparedGraph};
use super::params::ModelParams;
use crate::error::Result;
use crate::tensor::grad_check;

/// Check d(sum of prediction)/d(tensor) against central differences for
/// every trainable tensor. Returns `(name, max relative error)` pairs.
/// Dropout stays off; stochastic masks are not differentiable.
pub fn model_grad_check(
    params: &ModelParams,
    config: &ModelConfig,
    prepared: &PreparedGraph,
    h: f64,
) -> Result<Vec<(String, f64)>> {
    let mut report = Vec::new();
    for (idx, tensor) in params.tensors().iter().enumerate() {
        if !tensor.trainable {
            continue;
        }
        let shape = tensor.shape.clone();
        let err = grad_check(
            |tape, x| {
                let shaped = tape.reshape(x, shape.clone())?;
                let bound = params.bind_with_override(tape, Some((idx, shaped)))?;
                let mut rng = DropoutRng::new(0);
                let pred = forward_bound(tape, prepared, params, &bound, config, false, &mut rng)?;
                Ok(tape.sum(pred))
            },
            &tensor.data,
            h,
        )?;
        report.push((tensor.name.clone(), err));
    }
    Ok(report)
}
