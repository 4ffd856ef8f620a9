use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// Hidden-layer activation of a [`Critic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Softplus,
    /// Not differentiable at 0, so no closed-form input gradient.
    Relu,
}

impl Activation {
    fn apply<T: Real>(self, g: &mut Graph<T>, a: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(a),
            Activation::Tanh => g.tanh(a),
            Activation::Softplus => g.softplus(a),
            Activation::Relu => g.relu(a),
        }
    }

    /// Derivative given the pre-activation `a` and output `h`; `None` for
    /// the identity.
    fn derivative<T: Real>(self, g: &mut Graph<T>, a: Var, h: Var) -> Result<Option<Var>> {
        match self {
            Activation::Identity => Ok(None),
            Activation::Tanh => {
                let sq = g.square(h)?;
                let neg = g.neg(sq)?;
                Ok(Some(g.add_scalar(neg, T::one())?))
            }
            Activation::Softplus => Ok(Some(g.sigmoid(a)?)),
            Activation::Relu => Err(Error::contract(
                "critic_input_gradient",
                "relu has no smooth derivative; use tanh, softplus or identity",
            )),
        }
    }
}

/// Perceptron critic scoring a joint vector with an unbounded real value.
#[derive(Debug, Clone)]
pub struct Critic<T> {
    pub store: ParamStore<T>,
    /// Hidden layers followed by the `→ 1` output layer.
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

struct Trace {
    out: Var,
    pre: Vec<Var>,
    post: Vec<Var>,
}

impl<T: Real> Critic<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], activation: Activation, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for (i, &n) in hidden.iter().chain(core::iter::once(&1)).enumerate() {
            layers.push(Linear::new(&mut store, &format!("critic.l{i}"), prev, n, rng));
            prev = n;
        }
        Critic { store, layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    fn as_batch(&self, g: &mut Graph<T>, x: Var, op: &'static str) -> Result<(Var, bool)> {
        let n = self.input_dim();
        let s = g.shape(x);
        if s == [n] {
            Ok((g.reshape(x, &[1, n])?, true))
        } else if s.len() == 2 && s[1] == n {
            Ok((x, false))
        } else {
            Err(Error::shape(op, format!("[B, {n}]"), format!("{s:?}")))
        }
    }

    fn trace(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Trace> {
        let (mut h, _) = self.as_batch(g, x, "critic")?;
        let last = self.layers.len() - 1;
        let (mut pre, mut post) = (Vec::new(), Vec::new());
        for (i, layer) in self.layers.iter().enumerate() {
            let a = layer.forward(g, store, h)?;
            if i == last {
                return Ok(Trace { out: a, pre, post });
            }
            h = self.activation.apply(g, a)?;
            pre.push(a);
            post.push(h);
        }
        unreachable!("critic has an output layer")
    }

    /// `D(x)` for `x[B, n]`, giving `[B, 1]`.
    pub fn score(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.trace(g, store, x)?.out)
    }

    /// Eager scores of plain joint vectors.
    pub fn score_values(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::inference();
        let v = g.constant(x.clone());
        let s = self.score(&mut g, &self.store, v)?;
        Ok(g.value(s).data().to_vec())
    }
}

/// `∇ₓD(x)` built from forward primitives by the chain rule
/// `W_Lᵀ`, then `diag(act′(a_l))`, then `W_lᵀ`, layer by layer back to the
/// input, so the result is differentiable in the critic parameters.
/// Returns the same shape as `x` (`[n]` or `[B, n]`).
pub fn critic_input_gradient<T: Real>(g: &mut Graph<T>, critic: &Critic<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
    let (_, single) = critic.as_batch(g, x, "critic_input_gradient")?;
    let tr = critic.trace(g, store, x)?;
    let batch = g.shape(tr.out)[0];
    let ones = g.constant(Tensor::full(&[batch, 1], T::one()));
    let last = critic.layers.last().expect("output layer");
    let w_out = g.param(store, last.weight);
    // [B,1]·[1,n] repeats the output weights per sample
    let mut delta = g.matmul(ones, w_out)?;
    for l in (0..critic.layers.len() - 1).rev() {
        if let Some(d) = critic.activation.derivative(g, tr.pre[l], tr.post[l])? {
            delta = g.mul(delta, d)?;
        }
        let w = g.param(store, critic.layers[l].weight);
        delta = g.matmul(delta, w)?;
    }
    if single {
        let n = critic.input_dim();
        delta = g.reshape(delta, &[n])?;
    }
    Ok(delta)
}

fn mean_score<T: Real>(g: &mut Graph<T>, critic: &Critic<T>, store: &ParamStore<T>, x: Var, what: &str) -> Result<Var> {
    let s = critic.score(g, store, x)?;
    if !g.value(s).is_finite() {
        return Err(Error::NonFinite(format!("critic output on {what} samples")));
    }
    g.mean(s)
}

/// Critic loss `mean D(fake) − mean D(real) + λ·mean((‖∇D(x̂)‖₂ − 1)²)` with
/// `x̂ = ε·real + (1−ε)·fake` and one `ε` per sample pair.
pub fn wgan_gp_loss_with_eps<T: Real>(
    g: &mut Graph<T>,
    critic: &Critic<T>,
    store: &ParamStore<T>,
    real: Var,
    fake: Var,
    eps: &[f64],
    lambda: f64,
) -> Result<Var> {
    let (rs, fs) = (g.shape(real).to_vec(), g.shape(fake).to_vec());
    if rs != fs || rs.len() != 2 {
        return Err(Error::shape("wgan_gp_loss", format!("fake batch equal to real {rs:?}"), format!("{fs:?}")));
    }
    let (b, n) = (rs[0], rs[1]);
    if eps.len() != b {
        return Err(Error::contract("wgan_gp_loss", format!("{} interpolation weights for batch {b}", eps.len())));
    }
    if lambda < 0.0 {
        return Err(Error::contract("wgan_gp_loss", format!("penalty weight must be >= 0, got {lambda}")));
    }
    let e = g.constant(Tensor::from_fn(&[b, n], |i| T::of(eps[i / n])));
    let one_minus = g.constant(Tensor::from_fn(&[b, n], |i| T::of(1.0 - eps[i / n])));
    let a = g.mul(e, real)?;
    let c = g.mul(one_minus, fake)?;
    let x_hat = g.add(a, c)?;

    let d_fake = mean_score(g, critic, store, fake, "fake")?;
    let d_real = mean_score(g, critic, store, real, "real")?;
    let grad = critic_input_gradient(g, critic, store, x_hat)?;
    let sq = g.square(grad)?;
    let norm2 = g.sum_last(sq)?;
    let norm = g.sqrt(norm2)?;
    let dev = g.add_scalar(norm, -T::one())?;
    let dev2 = g.square(dev)?;
    let penalty = g.mean(dev2)?;
    let penalty = g.scale(penalty, T::of(lambda))?;
    let w = g.sub(d_fake, d_real)?;
    g.add(w, penalty)
}

/// [`wgan_gp_loss_with_eps`] with `ε ~ U[0, 1]` drawn per pair.
pub fn wgan_gp_loss<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    critic: &Critic<T>,
    store: &ParamStore<T>,
    real: Var,
    fake: Var,
    lambda: f64,
    rng: &mut R,
) -> Result<Var> {
    let b = g.shape(real).first().copied().unwrap_or(0);
    let eps: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
    wgan_gp_loss_with_eps(g, critic, store, real, fake, &eps, lambda)
}
