use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::attention::gamma_schedule;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{accumulate_gradients, softmax_cross_entropy, Adam, AdamConfig};
use crate::rng;
use crate::streams::{BiStreamNet, PreparedSample};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Epochs with γ = 0.
    pub main_epochs: usize,
    /// Epochs with γ ramped from 0.1 to 1.
    pub ramp_epochs: usize,
    /// Samples per optimizer step.
    pub accumulation: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            main_epochs: 12,
            ramp_epochs: 8,
            accumulation: 12,
            adam: AdamConfig::default(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Train on shuffled trimmed samples with cross-entropy, Adam and gradient
/// accumulation. The main phase runs with γ = 0; the ramp phase follows
/// [`gamma_schedule`]. `on_epoch` sees the epoch index and the net.
pub fn train_recognizer(
    net: &mut BiStreamNet<f32>,
    data: &[PreparedSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &BiStreamNet<f32>),
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::contract("train_recognizer", "empty training set"));
    }
    let mut shuffle = rng::seeded(rng::derive(cfg.seed, rng::label("shuffle")));
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.main_epochs + cfg.ramp_epochs {
        let phase = epoch.checked_sub(cfg.main_epochs);
        let gamma = gamma_schedule(phase, cfg.ramp_epochs);
        net.set_gamma(gamma);
        order.shuffle(&mut shuffle);
        let batch: Vec<&PreparedSample> = order.iter().map(|&i| &data[i]).collect();
        let model = net.clone();
        let r = accumulate_gradients(&batch, cfg.accumulation, &mut net.store, &mut adam, |store, s| {
            let mut g = Graph::new();
            let logits = model.logits(&mut g, store, s)?;
            let loss = softmax_cross_entropy(&mut g, logits, s.label)?;
            let v = g.value(loss).item()? as f64;
            Ok((v, g.backward(loss)?))
        })?;
        log::info!("epoch {epoch}: gamma {gamma:.2} loss {:.4}", r.mean_loss);
        report.epoch_loss.push(r.mean_loss);
        report.gamma.push(gamma);
        on_epoch(epoch, r.mean_loss, net);
    }
    Ok(report)
}
