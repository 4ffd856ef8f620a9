use alloc::format;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Real;

/// `−log softmax(logits)[label]` for logits of shape `[K]` or `[1, K]`.
pub fn softmax_cross_entropy<T: Real>(g: &mut Graph<T>, logits: Var, label: usize) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    let k = match shape.as_slice() {
        [k] | [1, k] => *k,
        _ => {
            return Err(Error::shape("softmax_cross_entropy", "[K] or [1, K]", format!("{shape:?}")));
        }
    };
    if k < 2 {
        return Err(Error::contract("softmax_cross_entropy", format!("need at least 2 classes, got {k}")));
    }
    if label >= k {
        return Err(Error::contract(
            "softmax_cross_entropy",
            format!("label {label} out of range for {k} classes"),
        ));
    }
    let logp = g.log_softmax(logits)?;
    let picked = g.pick(logp, &[label])?;
    let nll = g.neg(picked)?;
    g.sum(nll)
}
