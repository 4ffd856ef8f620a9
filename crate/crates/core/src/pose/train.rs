use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{Adam, AdamConfig};
use crate::pose::{wgan_gp_loss, Activation, Critic, Generator, HeatmapSample, NUM_JOINTS};
use crate::rng;
use crate::tensor::Tensor;

/// Adversarial training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub lambda_gp: f64,
    pub lr: f64,
    pub n_critic: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub critic_hidden: Vec<usize>,
    /// Weight of a supervised mean-squared coordinate error on the labelled
    /// subset, added to the generator loss. 0 gives the pure adversarial
    /// objective.
    pub anchor_weight: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            lambda_gp: 10.0,
            lr: 1e-4,
            n_critic: 5,
            beta1: 0.5,
            beta2: 0.99,
            epochs: 200,
            batch_size: 16,
            critic_hidden: alloc::vec![64, 64],
            anchor_weight: 100.0,
            seed: 7,
        }
    }
}

impl GanConfig {
    fn validate(&self) -> Result<()> {
        if self.n_critic == 0 || self.batch_size == 0 {
            return Err(Error::contract("train_gan", "n_critic and batch_size must be >= 1"));
        }
        if !(self.anchor_weight >= 0.0) {
            return Err(Error::contract("train_gan", format!("anchor_weight must be >= 0, got {}", self.anchor_weight)));
        }
        if self.lambda_gp < 0.0 {
            return Err(Error::contract("train_gan", format!("lambda_gp must be >= 0, got {}", self.lambda_gp)));
        }
        Ok(())
    }
}

/// Per-epoch mean losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GanReport {
    pub critic_loss: Vec<f64>,
    pub generator_loss: Vec<f64>,
}

/// Critic-loss magnitude beyond which training is aborted.
const DIVERGENCE_LIMIT: f64 = 1e6;

fn stack_inputs(data: &[HeatmapSample], idx: &[usize]) -> Result<Tensor<f32>> {
    let items: Vec<Tensor<f32>> = idx.iter().map(|&i| data[i].stacked()).collect();
    Tensor::stack(&items)
}

fn stack_truth(data: &[HeatmapSample], idx: &[usize]) -> Tensor<f32> {
    let n = 2 * NUM_JOINTS;
    Tensor::from_fn(&[idx.len(), n], |i| data[idx[i / n]].truth.coords()[i % n] as f32)
}

/// Supervised warm start: mean squared coordinate error on labelled
/// samples, Adam with default moments. Returns the mean loss per epoch.
pub fn pretrain_generator(
    gen: &mut Generator<f32>,
    labelled: &[HeatmapSample],
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if labelled.is_empty() {
        return Err(Error::contract("pretrain_generator", "empty labelled subset"));
    }
    let mut r = rng::seeded(seed);
    let mut adam = Adam::new(AdamConfig { lr, ..AdamConfig::default() });
    let mut order: Vec<usize> = (0..labelled.len()).collect();
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for batch in order.chunks(batch_size.max(1)) {
            let mut g = Graph::new();
            let x = g.constant(stack_inputs(labelled, batch)?);
            let y = g.constant(stack_truth(labelled, batch));
            let pred = gen.forward(&mut g, &gen.store, x)?;
            let d = g.sub(pred, y)?;
            let sq = g.square(d)?;
            let loss = g.mean(sq)?;
            let lv = g.value(loss).item()? as f64;
            if !lv.is_finite() {
                return Err(Error::Diverged(format!("pretraining loss {lv}")));
            }
            total += lv * batch.len() as f64;
            let grads = g.backward(loss)?;
            adam.step(&mut gen.store, &grads)?;
        }
        curve.push(total / labelled.len() as f64);
    }
    Ok(curve)
}

/// WGAN-GP training of `gen` against a fresh perceptron critic. Each
/// generator step is preceded by `n_critic` critic steps; the critic sees
/// true joint vectors of randomly drawn samples (unpaired with the images
/// the generator is fed). `on_epoch` receives the epoch index, the report so
/// far and the generator.
pub fn train_gan(
    gen: &mut Generator<f32>,
    data: &[HeatmapSample],
    labelled: &[HeatmapSample],
    cfg: &GanConfig,
    mut on_epoch: impl FnMut(usize, &GanReport, &Generator<f32>),
) -> Result<(Critic<f32>, GanReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("train_gan", "empty dataset"));
    }
    if cfg.anchor_weight > 0.0 && labelled.is_empty() {
        return Err(Error::contract("train_gan", "anchor term needs labelled samples"));
    }
    let mut r = rng::seeded(cfg.seed);
    let mut critic = Critic::<f32>::new(2 * NUM_JOINTS, &cfg.critic_hidden, Activation::Tanh, &mut r);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
    };
    let mut adam_c = Adam::new(adam_cfg);
    let mut adam_g = Adam::new(adam_cfg);
    let bs = cfg.batch_size.min(data.len());
    let steps_per_epoch = data.len().div_ceil(bs);
    let draw = |r: &mut rng::Rng| -> Vec<usize> { (0..bs).map(|_| r.random_range(0..data.len())).collect() };
    let mut report = GanReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let (mut c_total, mut g_total, mut c_count) = (0.0, 0.0, 0usize);
        for step in 0..steps_per_epoch {
            for _ in 0..cfg.n_critic {
                let fake_idx = draw(&mut r);
                let real_idx = draw(&mut r);
                let fake = {
                    let mut g = Graph::inference();
                    let x = g.constant(stack_inputs(data, &fake_idx)?);
                    let y = gen.forward(&mut g, &gen.store, x)?;
                    g.value(y).clone()
                };
                let mut g = Graph::new();
                let real = g.constant(stack_truth(data, &real_idx));
                let fake = g.constant(fake);
                let loss = wgan_gp_loss(&mut g, &critic, &critic.store, real, fake, cfg.lambda_gp, &mut r)?;
                let lv = g.value(loss).item()? as f64;
                if !lv.is_finite() || lv.abs() > DIVERGENCE_LIMIT {
                    return Err(Error::Diverged(format!("critic loss {lv} at epoch {epoch}")));
                }
                c_total += lv;
                c_count += 1;
                let grads = g.backward(loss)?;
                adam_c.step(&mut critic.store, &grads)?;
            }
            let start = step * bs;
            let idx: Vec<usize> = (0..bs).map(|k| order[(start + k) % order.len()]).collect();
            let mut g = Graph::new();
            let x = g.constant(stack_inputs(data, &idx)?);
            let fake = gen.forward(&mut g, &gen.store, x)?;
            let score = critic.score(&mut g, &critic.store, fake)?;
            let mean = g.mean(score)?;
            let mut loss = g.neg(mean)?;
            if cfg.anchor_weight > 0.0 {
                let li: Vec<usize> = (0..bs.min(labelled.len())).map(|_| r.random_range(0..labelled.len())).collect();
                let lx = g.constant(stack_inputs(labelled, &li)?);
                let ly = g.constant(stack_truth(labelled, &li));
                let pred = gen.forward(&mut g, &gen.store, lx)?;
                let d = g.sub(pred, ly)?;
                let sq = g.square(d)?;
                let mse = g.mean(sq)?;
                let anchor = g.scale(mse, cfg.anchor_weight as f32)?;
                loss = g.add(loss, anchor)?;
            }
            g_total += g.value(loss).item()? as f64;
            let mut grads = g.backward(loss)?;
            grads.retain_params(|id| gen.store.owns(id));
            adam_g.step(&mut gen.store, &grads)?;
        }
        report.critic_loss.push(c_total / c_count as f64);
        report.generator_loss.push(g_total / steps_per_epoch as f64);
        log::debug!(
            "gan epoch {epoch}: critic {:.4} generator {:.4}",
            report.critic_loss[epoch],
            report.generator_loss[epoch]
        );
        on_epoch(epoch, &report, gen);
    }
    Ok((critic, report))
}
