//! Embedded-Gaussian non-local block, temporal attention over recurrent
//! hidden states, feature-magnitude heatmaps and the γ ramp.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// Space-time self-attention with a residual output `x + γ·W_z(y)`.
///
/// θ, φ and g are 1×1 convolutions `C → C/2`, realised as linear maps over
/// the channel vector of each position.
#[derive(Debug, Clone)]
pub struct NonLocalBlock {
    pub theta: Linear,
    pub phi: Linear,
    pub g: Linear,
    pub w_z: Linear,
    pub channels: usize,
    /// Contribution weight in `[0, 1]`; not trained.
    pub gamma: f64,
}

impl NonLocalBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut R) -> Result<Self> {
        if channels == 0 || channels % 2 != 0 {
            return Err(Error::contract("nonlocal_block", format!("channel count must be even, got {channels}")));
        }
        let half = channels / 2;
        Ok(NonLocalBlock {
            theta: Linear::new(store, &format!("{name}.theta"), channels, half, rng),
            phi: Linear::new(store, &format!("{name}.phi"), channels, half, rng),
            g: Linear::new(store, &format!("{name}.g"), channels, half, rng),
            w_z: Linear::new(store, &format!("{name}.w_z"), half, channels, rng),
            channels,
            gamma: 0.0,
        })
    }

    /// `x[T,C,H,W] -> [T,C,H,W]`. With γ = 0 the input node is returned
    /// untouched.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape("nonlocal_forward", format!("[T, {}, H, W]", self.channels), format!("{s:?}")));
        }
        if self.gamma == 0.0 {
            return Ok(x);
        }
        let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
        let n = t * h * w;
        let pos = g.permute(x, &[0, 2, 3, 1])?;
        let pos = g.reshape(pos, &[n, c])?;
        let th = self.theta.forward(g, store, pos)?;
        let ph = self.phi.forward(g, store, pos)?;
        let gx = self.g.forward(g, store, pos)?;
        let scores = g.matmul_bt(th, ph)?;
        let weights = g.softmax(scores)?;
        let y = g.matmul(weights, gx)?;
        let z = self.w_z.forward(g, store, y)?;
        let z = g.scale(z, T::of(self.gamma))?;
        let z = g.reshape(z, &[t, h, w, c])?;
        let z = g.permute(z, &[0, 3, 1, 2])?;
        g.add(x, z)
    }

    /// Eager forward on a plain tensor.
    pub fn apply<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let v = g.constant(x.clone());
        let y = self.forward(&mut g, store, v)?;
        Ok(g.value(y).clone())
    }
}

/// Scores each hidden state with a linear map `h → 1`, softmaxes the scores
/// over time and returns the weighted sum of hidden states.
#[derive(Debug, Clone)]
pub struct TemporalAttention {
    pub score: Linear,
}

impl TemporalAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, hidden: usize, rng: &mut R) -> Self {
        TemporalAttention {
            score: Linear::new(store, &format!("{name}.score"), hidden, 1, rng),
        }
    }

    /// Returns `(h_out [1,h], weights [1,T])`. Each hidden state is `[1,h]`
    /// or `[h]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, hidden: &[Var]) -> Result<(Var, Var)> {
        if hidden.is_empty() {
            return Err(Error::contract("temporal_attend", "empty hidden-state sequence"));
        }
        let n = self.score.in_dim;
        let mut rows = Vec::with_capacity(hidden.len());
        for &h in hidden {
            let hs = g.shape(h);
            if hs == [n] {
                rows.push(g.reshape(h, &[1, n])?);
            } else if hs == [1, n] {
                rows.push(h);
            } else {
                return Err(Error::shape("temporal_attend", format!("[1, {n}]"), format!("{hs:?}")));
            }
        }
        let stacked = if rows.len() == 1 { rows[0] } else { g.concat(&rows, 0)? };
        let s = self.score.forward(g, store, stacked)?;
        let s = g.reshape(s, &[1, hidden.len()])?;
        let w = g.softmax(s)?;
        let out = g.matmul(w, stacked)?;
        Ok((out, w))
    }
}

/// Per-pixel channel sum of absolute activations of `[C,H,W]` features,
/// min-max normalised to `[0,1]`. A constant map normalises to all zeros.
pub fn attention_heatmap<T: Real>(features: &Tensor<T>) -> Result<Tensor<T>> {
    let s = features.shape();
    if s.len() != 3 {
        return Err(Error::shape("attention_heatmap", "[C, H, W]", format!("{s:?}")));
    }
    let (c, hw) = (s[0], s[1] * s[2]);
    let mut map = alloc::vec![T::zero(); hw];
    for ch in features.data().chunks(hw).take(c) {
        for (m, &v) in map.iter_mut().zip(ch) {
            *m += v.abs();
        }
    }
    let lo = map.iter().copied().fold(T::infinity(), T::min);
    let hi = map.iter().copied().fold(T::neg_infinity(), T::max);
    let range = hi - lo;
    for m in map.iter_mut() {
        *m = if range > T::zero() { (*m - lo) / range } else { T::zero() };
    }
    Tensor::new(&s[1..], map)
}

/// γ for a training epoch. `None` is the main phase (γ = 0); during the ramp
/// γ starts at 0.1 and reaches 1 on the last ramp epoch.
pub fn gamma_schedule(epoch_in_ramp: Option<usize>, ramp_epochs: usize) -> f64 {
    match epoch_in_ramp {
        None => 0.0,
        Some(e) if e + 1 >= ramp_epochs => 1.0,
        Some(e) => 0.1 + 0.9 * e as f64 / (ramp_epochs - 1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, grad_check_params, Coverage};
    use crate::rng::seeded;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = seeded(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn block(c: usize, gamma: f64, seed: u64) -> (ParamStore<f64>, NonLocalBlock) {
        let mut store = ParamStore::new();
        let mut rng = seeded(seed);
        let mut b = NonLocalBlock::new(&mut store, "nl", c, &mut rng).unwrap();
        // non-zero biases so they take part in every check
        for id in [b.theta.bias, b.phi.bias, b.g.bias, b.w_z.bias] {
            for v in store.get_mut(id).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        b.gamma = gamma;
        (store, b)
    }

    fn embed(l: &Linear, store: &ParamStore<f64>, x: &[f64]) -> Vec<f64> {
        let w = store.get(l.weight);
        let b = store.get(l.bias).data();
        (0..l.out_dim)
            .map(|o| b[o] + (0..l.in_dim).map(|i| w.get(&[o, i]) * x[i]).sum::<f64>())
            .collect()
    }

    /// The non-local sum written out position by position.
    fn literal(b: &NonLocalBlock, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (t, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let positions: Vec<(usize, usize, usize)> =
            (0..t).flat_map(|ti| (0..h).flat_map(move |yi| (0..w).map(move |xi| (ti, yi, xi)))).collect();
        let vec_at = |&(ti, yi, xi): &(usize, usize, usize)| -> Vec<f64> { (0..c).map(|ch| x.get(&[ti, ch, yi, xi])).collect() };
        let mut out = x.clone();
        for pi in &positions {
            let th = embed(&b.theta, store, &vec_at(pi));
            let mut norm = 0.0;
            let mut y = alloc::vec![0.0; c / 2];
            for pj in &positions {
                let xj = vec_at(pj);
                let ph = embed(&b.phi, store, &xj);
                let f = th.iter().zip(&ph).map(|(a, b)| a * b).sum::<f64>().exp();
                norm += f;
                for (yk, gk) in y.iter_mut().zip(embed(&b.g, store, &xj)) {
                    *yk += f * gk;
                }
            }
            for yk in y.iter_mut() {
                *yk /= norm;
            }
            let z = embed(&b.w_z, store, &y);
            for ch in 0..c {
                let off = out.offset(&[pi.0, ch, pi.1, pi.2]);
                out.data_mut()[off] += b.gamma * z[ch];
            }
        }
        out
    }

    #[test]
    fn odd_channels_rejected() {
        let mut store = ParamStore::<f64>::new();
        assert!(matches!(
            NonLocalBlock::new(&mut store, "nl", 3, &mut seeded(0)),
            Err(Error::Contract { .. })
        ));
    }

    #[test]
    fn zero_gamma_is_identity() {
        let (store, b) = block(4, 0.0, 1);
        let x = random(&[2, 4, 3, 3], 2);
        assert_eq!(b.apply(&store, &x).unwrap(), x);
    }

    #[test]
    fn single_position_reduces_to_g() {
        let (store, b) = block(4, 0.7, 3);
        let x = random(&[1, 4, 1, 1], 4);
        let got = b.apply(&store, &x).unwrap();
        let z = embed(&b.w_z, &store, &embed(&b.g, &store, x.data()));
        for ch in 0..4 {
            assert!((got.data()[ch] - (x.data()[ch] + 0.7 * z[ch])).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_literal_double_loop() {
        let (store, b) = block(2, 0.8, 5);
        let x = random(&[2, 2, 2, 2], 6);
        let got = b.apply(&store, &x).unwrap();
        let want = literal(&b, &store, &x);
        for (a, w) in got.data().iter().zip(want.data()) {
            assert!((a - w).abs() < 1e-10);
        }
    }

    #[test]
    fn block_gradients() {
        let (store, b) = block(4, 0.6, 7);
        let x = random(&[2, 4, 3, 3], 8);
        let loss = |g: &mut Graph<f64>, s: &ParamStore<f64>, xv: Var| -> Result<Var> {
            let y = b.forward(g, s, xv)?;
            let t = g.tanh(y)?;
            g.sum(t)
        };
        let r = grad_check(|g, xv| loss(g, &store, xv), &x, 1e-6, 1e-4).unwrap();
        assert!(r.passed(), "{:?}", r.worst());
        let r = grad_check_params(
            &store,
            |g, s| {
                let xv = g.constant(x.clone());
                loss(g, s, xv)
            },
            1e-6,
            1e-4,
            Coverage::All,
            None,
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r.worst());
    }

    fn attend(att: &TemporalAttention, store: &ParamStore<f64>, hs: &[Tensor<f64>]) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::inference();
        let vars: Vec<Var> = hs.iter().map(|h| g.constant(h.clone())).collect();
        let (out, w) = att.forward(&mut g, store, &vars).unwrap();
        (g.value(out).data().to_vec(), g.value(w).data().to_vec())
    }

    #[test]
    fn single_step_passthrough() {
        let mut store = ParamStore::new();
        let att = TemporalAttention::new(&mut store, "att", 5, &mut seeded(0));
        let h = random(&[1, 5], 1);
        let (out, w) = attend(&att, &store, &[h.clone()]);
        assert_eq!(out, h.data());
        assert_eq!(w, [1.0]);
    }

    #[test]
    fn identical_states_pass_through() {
        let mut store = ParamStore::new();
        let att = TemporalAttention::new(&mut store, "att", 4, &mut seeded(2));
        let h = random(&[4], 3);
        let (out, _) = attend(&att, &store, &[h.clone(), h.clone(), h.clone()]);
        for (a, b) in out.iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_manual_softmax() {
        let mut store = ParamStore::new();
        let att = TemporalAttention::new(&mut store, "att", 3, &mut seeded(4));
        store.set_by_name("att.score.bias", Tensor::new(&[1], alloc::vec![0.2]).unwrap()).unwrap();
        let hs: Vec<Tensor<f64>> = (0..3).map(|i| random(&[3], 10 + i)).collect();
        let w = store.get(att.score.weight).data().to_vec();
        let s: Vec<f64> = hs.iter().map(|h| 0.2 + h.data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        let want: Vec<f64> = (0..3).map(|k| hs.iter().zip(&s).map(|(h, sv)| sv.exp() / z * h.data()[k]).sum()).collect();
        let (out, weights) = attend(&att, &store, &hs);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut store = ParamStore::<f64>::new();
        let att = TemporalAttention::new(&mut store, "att", 3, &mut seeded(0));
        let mut g = Graph::inference();
        assert!(matches!(att.forward(&mut g, &store, &[]), Err(Error::Contract { .. })));
    }

    #[test]
    fn temporal_attention_gradients() {
        let mut store = ParamStore::new();
        let att = TemporalAttention::new(&mut store, "att", 4, &mut seeded(6));
        let hs = random(&[3, 4], 7);
        let loss = |g: &mut Graph<f64>, s: &ParamStore<f64>, h: Var| -> Result<Var> {
            let rows: Vec<Var> = (0..3).map(|t| g.slice(h, 0, t, t + 1)).collect::<Result<_>>()?;
            let (out, _) = att.forward(g, s, &rows)?;
            let sq = g.square(out)?;
            g.sum(sq)
        };
        let r = grad_check(|g, h| loss(g, &store, h), &hs, 1e-6, 1e-4).unwrap();
        assert!(r.passed(), "{:?}", r.worst());
        let r = grad_check_params(
            &store,
            |g, s| {
                let h = g.constant(hs.clone());
                loss(g, s, h)
            },
            1e-6,
            1e-4,
            Coverage::All,
            None,
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r.worst());
    }

    #[test]
    fn heatmap_single_channel_and_symmetry() {
        let v = Tensor::new(&[1, 2, 2], alloc::vec![-2.0, 1.0, 0.0, 4.0]).unwrap();
        let m = attention_heatmap(&v).unwrap();
        assert_eq!(m.data(), &[0.5, 0.25, 0.0, 1.0]);
        let pair = Tensor::concat(&[&v, &v.map(|x| -x)], 0).unwrap();
        assert_eq!(attention_heatmap(&pair).unwrap(), m);
    }

    #[test]
    fn heatmap_matches_channel_loop() {
        let f = random(&[4, 5, 5], 9);
        let m = attention_heatmap(&f).unwrap();
        let mut raw = [[0.0f64; 5]; 5];
        for (i, row) in raw.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                for c in 0..4 {
                    *cell += f.get(&[c, i, j]).abs();
                }
            }
        }
        let lo = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..5 {
            for j in 0..5 {
                assert!((m.get(&[i, j]) - (raw[i][j] - lo) / (hi - lo)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heatmap_of_zeros_is_zero() {
        let m = attention_heatmap(&Tensor::<f64>::zeros(&[3, 4, 4])).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_ramp() {
        assert_eq!(gamma_schedule(None, 10), 0.0);
        assert!((gamma_schedule(Some(0), 10) - 0.1).abs() < 1e-15);
        assert_eq!(gamma_schedule(Some(9), 10), 1.0);
        assert_eq!(gamma_schedule(Some(15), 10), 1.0);
        assert_eq!(gamma_schedule(Some(0), 1), 1.0);
        let ramp: Vec<f64> = (0..10).map(|e| gamma_schedule(Some(e), 10)).collect();
        assert!(ramp.windows(2).all(|w| w[0] < w[1]));
    }
}
