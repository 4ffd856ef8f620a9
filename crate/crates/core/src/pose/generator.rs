use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2dLayer, Linear};
use crate::params::ParamStore;
use crate::pose::{JointSet, NUM_JOINTS};
use crate::tensor::{Real, Tensor};

/// Joint regressor: three stride-2 conv stages with ReLU, a flattened
/// readout, a hidden perceptron layer and 12 sigmoid outputs.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub store: ParamStore<T>,
    pub convs: Vec<Conv2dLayer>,
    pub fc1: Linear,
    pub fc2: Linear,
    pub height: usize,
    pub width: usize,
}

impl<T: Real> Generator<T> {
    /// `channels` are the output widths of the three conv stages.
    pub fn new<R: Rng + ?Sized>(height: usize, width: usize, channels: [usize; 3], hidden: usize, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        let (mut c, mut h, mut w) = (4, height, width);
        for (i, &out) in channels.iter().enumerate() {
            let conv = Conv2dLayer::new(&mut store, &format!("gen.conv{i}"), c, out, 3, 2, 1, rng);
            (h, w) = conv
                .output_size(h, w)
                .ok_or_else(|| Error::contract("generator", format!("input {height}x{width} too small")))?;
            convs.push(conv);
            c = out;
        }
        let fc1 = Linear::new(&mut store, "gen.fc1", c * h * w, hidden, rng);
        let fc2 = Linear::new(&mut store, "gen.fc2", hidden, 2 * NUM_JOINTS, rng);
        Ok(Generator {
            store,
            convs,
            fc1,
            fc2,
            height,
            width,
        })
    }

    /// `x[B, 4, H, W] -> [B, 12]` in `(0, 1)`.
    pub fn forward(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != 4 || s[2] != self.height || s[3] != self.width {
            return Err(Error::shape(
                "regress_joints",
                format!("[B, 4, {}, {}]", self.height, self.width),
                format!("{s:?}"),
            ));
        }
        let mut h = x;
        for conv in &self.convs {
            let y = conv.forward(g, store, h)?;
            h = g.relu(y)?;
        }
        let flat = g.reshape(h, &[s[0], self.fc1.in_dim])?;
        let z = self.fc1.forward(g, store, flat)?;
        let z = g.relu(z)?;
        let z = self.fc2.forward(g, store, z)?;
        g.sigmoid(z)
    }

    /// Joint estimates for a `[B, 4, H, W]` batch.
    pub fn regress_batch(&self, x: &Tensor<T>) -> Result<Vec<JointSet>> {
        let mut g = Graph::inference();
        let v = g.constant(x.clone());
        let y = self.forward(&mut g, &self.store, v)?;
        Ok(g.value(y)
            .data()
            .chunks(2 * NUM_JOINTS)
            .map(|row| {
                let mut c = [0.0; 2 * NUM_JOINTS];
                for (o, v) in c.iter_mut().zip(row) {
                    *o = v.as_f64();
                }
                JointSet::clamped(c)
            })
            .collect())
    }

    /// Joint estimate for one `[4, H, W]` image-plus-heatmap stack.
    pub fn regress_joints(&self, input: &Tensor<T>) -> Result<JointSet> {
        let s = input.shape();
        if s.len() != 3 || s[0] != 4 {
            return Err(Error::contract("regress_joints", format!("expected a [4, H, W] stack, got {s:?}")));
        }
        let batch = input.clone().reshape(&[1, s[0], s[1], s[2]])?;
        Ok(self.regress_batch(&batch)?[0])
    }

    /// Joints of every frame of `frames [T, 3, H, W]` with its heatmaps
    /// `[T, 1, H, W]`.
    pub fn regress_sequence(&self, frames: &Tensor<T>, heatmaps: &Tensor<T>) -> Result<Vec<JointSet>> {
        let x = Tensor::concat(&[frames, heatmaps], 1)?;
        self.regress_batch(&x)
    }
}
