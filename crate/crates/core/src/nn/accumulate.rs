use alloc::format;

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::nn::Adam;
use crate::params::ParamStore;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccumulationReport {
    pub optimizer_steps: usize,
    pub mean_loss: f64,
}

/// Sum single-sample gradients over groups of `accumulation` samples, average
/// each group and take one Adam step per group. A short final group still
/// produces a step. `loss_and_grads` evaluates one sample against the current
/// parameters.
pub fn accumulate_gradients<T, S, F>(
    samples: &[S],
    accumulation: usize,
    store: &mut ParamStore<T>,
    adam: &mut Adam<T>,
    mut loss_and_grads: F,
) -> Result<AccumulationReport>
where
    T: Real,
    F: FnMut(&ParamStore<T>, &S) -> Result<(f64, Gradients<T>)>,
{
    if accumulation == 0 {
        return Err(Error::contract("accumulate_gradients", "accumulation size must be >= 1"));
    }
    if samples.is_empty() {
        log::warn!("accumulate_gradients called with an empty batch; no step taken");
        return Ok(AccumulationReport {
            optimizer_steps: 0,
            mean_loss: 0.0,
        });
    }
    let mut total = 0.0;
    let mut steps = 0;
    for group in samples.chunks(accumulation) {
        let mut acc = Gradients::default();
        for s in group {
            let (loss, grads) = loss_and_grads(store, s)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss {loss}")));
            }
            total += loss;
            acc.accumulate(&grads);
        }
        acc.scale(T::one() / T::of(group.len() as f64));
        adam.step(store, &acc)?;
        steps += 1;
    }
    Ok(AccumulationReport {
        optimizer_steps: steps,
        mean_loss: total / samples.len() as f64,
    })
}
