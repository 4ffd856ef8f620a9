use alloc::collections::BTreeMap;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use alloc::format;

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are created lazily per parameter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    t: u64,
    m: BTreeMap<ParamId, Tensor<T>>,
    v: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one step to every parameter that has a gradient. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in grads.params() {
            if !store.owns(id) {
                return Err(Error::contract("adam_update", "gradient for a parameter of another store"));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
            }
            if g.shape() != store.get(id).shape() {
                return Err(Error::shape(
                    "adam_update",
                    format!("{} {:?}", store.name(id), store.get(id).shape()),
                    format!("{:?}", g.shape()),
                ));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one, lr_t, eps_t) = (T::one(), T::of(lr), T::of(eps));
        let (bc1, bc2) = (T::of(bc1), T::of(bc2));
        for (id, g) in grads.params() {
            let shape = g.shape();
            let m = self.m.entry(id).or_insert_with(|| Tensor::zeros(shape));
            let v = self.v.entry(id).or_insert_with(|| Tensor::zeros(shape));
            let p = store.get_mut(id);
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr_t * mhat / (vhat.sqrt() + eps_t);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn grads_for(store: &ParamStore<f64>, id: ParamId, coeff: f64) -> Gradients<f64> {
        // d/dp (coeff · sum p) = coeff
        let mut g = Graph::new();
        let p = g.param(store, id);
        let s = g.sum(p).unwrap();
        let l = g.scale(s, coeff).unwrap();
        g.backward(l).unwrap()
    }

    #[test]
    fn defaults() {
        let c = AdamConfig::default();
        assert_eq!((c.lr, c.beta1, c.beta2, c.eps), (0.001, 0.9, 0.999, 1e-8));
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", Tensor::full(&[2], 0.25));
        let grads = grads_for(&store, id, 0.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get(id).data(), &[0.25, 0.25]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_is_lr_sized() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", Tensor::zeros(&[1]));
        let grads = grads_for(&store, id, 1.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &grads).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((store.get(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("head.weight", Tensor::zeros(&[1]));
        let mut grads = grads_for(&store, id, 1.0);
        grads.scale(f64::NAN);
        let mut adam = Adam::new(AdamConfig::default());
        match adam.step(&mut store, &grads) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("head.weight")),
            other => panic!("{other:?}"),
        }
        assert_eq!(store.get(id).data(), &[0.0]);
        assert_eq!(adam.steps(), 0);
    }
}
