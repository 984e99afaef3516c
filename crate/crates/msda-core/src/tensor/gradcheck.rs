//! Central finite-difference validation of analytic gradients.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compare analytic parameter gradients of a scalar-valued graph fragment
/// against central finite differences.
///
/// `build` receives a fresh graph (fixed RNG seed, so stochastic ops repeat
/// identically) and the parameter leaves in order; it returns the scalar
/// output node. Returns `max_i |analytic_i − numeric_i| / max(1e-8, |numeric_i|)`.
pub fn grad_check<F>(build: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(0);
        let ids: Vec<NodeId> = values.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = build(&mut g, &ids)?;
        g.value(out).scalar_value()
    };

    // Analytic gradients once.
    let analytic: Vec<Tensor> = {
        let mut g = Graph::new(0);
        let ids: Vec<NodeId> = params.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = build(&mut g, &ids)?;
        if !g.value(out).is_scalar() {
            return Err(Error::InvalidArgument {
                what: "grad_check",
                msg: format!("output must be scalar, shape {:?}", g.value(out).shape()),
            });
        }
        g.backward(out)?;
        ids.iter()
            .enumerate()
            .map(|(i, &id)| {
                g.grad(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(params[i].shape()))
            })
            .collect()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for pi in 0..params.len() {
        for j in 0..params[pi].numel() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let f_plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let f_minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[pi].data()[j];
            let err = (a - numeric).abs() / numeric.abs().max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
