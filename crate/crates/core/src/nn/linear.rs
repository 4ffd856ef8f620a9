use alloc::format;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{xavier_uniform, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Fully connected layer, weight stored as `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = xavier_uniform(&[out_dim, in_dim], in_dim, out_dim, rng);
        Linear {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    /// `x[b, in] -> [b, out]`
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let xs = g.shape(x);
        if xs.len() != 2 || xs[1] != self.in_dim {
            return Err(Error::shape("linear", format!("[B, {}]", self.in_dim), format!("{xs:?}")));
        }
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}
