use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{xavier_uniform, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// LSTM cell with gate blocks stacked in the order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    /// `[4h, d]`
    pub w_ih: ParamId,
    /// `[4h, h]`
    pub w_hh: ParamId,
    /// `[4h]`
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_ih = xavier_uniform(&[4 * hidden, input_dim], input_dim, 4 * hidden, rng);
        let w_hh = xavier_uniform(&[4 * hidden, hidden], hidden, 4 * hidden, rng);
        // forget gate starts open
        let bias = Tensor::from_fn(&[4 * hidden], |i| {
            if (hidden..2 * hidden).contains(&i) {
                T::one()
            } else {
                T::zero()
            }
        });
        LstmCell {
            w_ih: store.add(format!("{name}.w_ih"), w_ih),
            w_hh: store.add(format!("{name}.w_hh"), w_hh),
            bias: store.add(format!("{name}.bias"), bias),
            input_dim,
            hidden,
        }
    }

    fn as_row<T: Real>(&self, g: &mut Graph<T>, v: Var, dim: usize, what: &str) -> Result<Var> {
        let s = g.shape(v);
        if s == [dim] {
            g.reshape(v, &[1, dim])
        } else if s == [1, dim] {
            Ok(v)
        } else {
            Err(Error::shape("lstm_step", format!("{what} [{dim}]"), format!("{s:?}")))
        }
    }

    /// Recurrence given the precomputed input projection `x·W_ihᵀ + b` of
    /// shape `[1, 4h]`.
    fn recur<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, xproj: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let n = self.hidden;
        let w_hh = g.param(store, self.w_hh);
        let hproj = g.matmul_bt(h, w_hh)?;
        let z = g.add(xproj, hproj)?;
        let zi = g.slice(z, 1, 0, n)?;
        let zf = g.slice(z, 1, n, 2 * n)?;
        let zg = g.slice(z, 1, 2 * n, 3 * n)?;
        let zo = g.slice(z, 1, 3 * n, 4 * n)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let cand = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next)?;
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// One step. `x`, `h`, `c` may be `[n]` or `[1, n]`; results are `[1, h]`.
    pub fn step<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let x = self.as_row(g, x, self.input_dim, "x")?;
        let h = self.as_row(g, h, self.hidden, "h")?;
        let c = self.as_row(g, c, self.hidden, "c")?;
        let w_ih = g.param(store, self.w_ih);
        let b = g.param(store, self.bias);
        let xproj = g.linear(x, w_ih, Some(b))?;
        self.recur(g, store, xproj, h, c)
    }

    /// Run over a `[T, d]` sequence from zero state; returns the `T` hidden
    /// states, each `[1, h]`.
    pub fn run_sequence<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, xs: Var) -> Result<Vec<Var>> {
        let s = g.shape(xs).to_vec();
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(Error::shape("lstm_sequence", format!("[T, {}]", self.input_dim), format!("{s:?}")));
        }
        let w_ih = g.param(store, self.w_ih);
        let b = g.param(store, self.bias);
        let proj = g.linear(xs, w_ih, Some(b))?;
        let mut h = g.constant(Tensor::zeros(&[1, self.hidden]));
        let mut c = g.constant(Tensor::zeros(&[1, self.hidden]));
        let mut out = Vec::with_capacity(s[0]);
        for t in 0..s[0] {
            let xp = g.slice(proj, 0, t, t + 1)?;
            (h, c) = self.recur(g, store, xp, h, c)?;
            out.push(h);
        }
        Ok(out)
    }

    /// Eager single step on plain tensors.
    pub fn step_values<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        h: &Tensor<T>,
        c: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::inference();
        let (xv, hv, cv) = (g.constant(x.clone()), g.constant(h.clone()), g.constant(c.clone()));
        let (h2, c2) = self.step(&mut g, store, xv, hv, cv)?;
        let n = self.hidden;
        Ok((g.value(h2).clone().reshape(&[n])?, g.value(c2).clone().reshape(&[n])?))
    }
}
