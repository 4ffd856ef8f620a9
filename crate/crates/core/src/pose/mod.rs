//! Joint coordinates, synthetic noisy joint heatmaps, the heatmap-argmax
//! baseline decoder and the WGAN-GP joint regressor.

#[cfg(not(feature = "std"))]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

mod critic;
mod generator;
mod train;

pub use critic::{critic_input_gradient, wgan_gp_loss, wgan_gp_loss_with_eps, Activation, Critic};
pub use generator::Generator;
pub use train::{pretrain_generator, train_gan, GanConfig, GanReport};

pub const NUM_JOINTS: usize = 6;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "left-shoulder",
    "right-shoulder",
    "left-elbow",
    "right-elbow",
    "left-wrist",
    "right-wrist",
];

/// Six `(x, y)` joint positions in normalised image coordinates, ordered as
/// [`JOINT_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSet([f64; 2 * NUM_JOINTS]);

impl JointSet {
    /// Coordinates must lie in `[0, 1]`.
    pub fn new(coords: [f64; 2 * NUM_JOINTS]) -> Result<Self> {
        if let Some(i) = coords.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract("joint_set", format!("coordinate {i} = {} outside [0, 1]", coords[i])));
        }
        Ok(JointSet(coords))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        let arr: [f64; 2 * NUM_JOINTS] = coords
            .try_into()
            .map_err(|_| Error::contract("joint_set", format!("need 12 coordinates, got {}", coords.len())))?;
        Self::new(arr)
    }

    /// Clamp each coordinate into `[0, 1]`.
    pub fn clamped(coords: [f64; 2 * NUM_JOINTS]) -> Self {
        JointSet(coords.map(|v| if v.is_nan() { 0.5 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn coords(&self) -> &[f64; 2 * NUM_JOINTS] {
        &self.0
    }

    pub fn joint(&self, j: usize) -> (f64, f64) {
        (self.0[2 * j], self.0[2 * j + 1])
    }

    pub fn joints(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..NUM_JOINTS).map(|j| self.joint(j))
    }

    /// Mean Euclidean joint distance in pixels on a `w`×`h` image.
    pub fn mean_pixel_error(&self, other: &JointSet, w: usize, h: usize) -> f64 {
        self.joints()
            .zip(other.joints())
            .map(|((ax, ay), (bx, by))| {
                let dx = (ax - bx) * w as f64;
                let dy = (ay - by) * h as f64;
                (dx * dx + dy * dy).sqrt()
            })
            .sum::<f64>()
            / NUM_JOINTS as f64
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_fn(&[2 * NUM_JOINTS], |i| self.0[i] as f32)
    }
}

/// Corruption applied by [`synth_heatmap`], in pixels of the heatmap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapNoise {
    pub sigma_px: f64,
    pub p_drop: f64,
    pub jitter_px: f64,
    pub n_spurious: usize,
}

impl Default for HeatmapNoise {
    fn default() -> Self {
        HeatmapNoise {
            sigma_px: 2.5,
            p_drop: 0.25,
            jitter_px: 3.0,
            n_spurious: 2,
        }
    }
}

impl HeatmapNoise {
    pub fn noiseless() -> Self {
        HeatmapNoise {
            p_drop: 0.0,
            jitter_px: 0.0,
            n_spurious: 0,
            ..Self::default()
        }
    }
}

/// Pixel-index position of a normalised coordinate (pixel centres sit at
/// half-integers in normalised space).
fn to_pixel(v: f64, size: usize) -> f64 {
    v * size as f64 - 0.5
}

fn from_pixel(p: f64, size: usize) -> f64 {
    ((p + 0.5) / size as f64).clamp(0.0, 1.0)
}

/// Stand-in for an off-the-shelf pose estimator's joint heatmap: Gaussian
/// bumps at jittered true joints, some dropped, plus spurious bumps, clipped
/// to `[0, 1]`. Deterministic in `seed`.
pub fn synth_heatmap(truth: &JointSet, h: usize, w: usize, noise: &HeatmapNoise, seed: u64) -> Tensor<f32> {
    let mut r = rng::seeded(seed);
    let mut centres: Vec<(f64, f64)> = Vec::with_capacity(NUM_JOINTS + noise.n_spurious);
    for (x, y) in truth.joints() {
        let dropped = r.random::<f64>() < noise.p_drop;
        let jx = rng::normal(&mut r) * noise.jitter_px;
        let jy = rng::normal(&mut r) * noise.jitter_px;
        if !dropped {
            centres.push((to_pixel(x, w) + jx, to_pixel(y, h) + jy));
        }
    }
    for _ in 0..noise.n_spurious {
        centres.push((r.random::<f64>() * (w - 1) as f64, r.random::<f64>() * (h - 1) as f64));
    }
    let inv = 1.0 / (2.0 * noise.sigma_px * noise.sigma_px);
    Tensor::from_fn(&[1, h, w], |i| {
        let (py, px) = ((i / w) as f64, (i % w) as f64);
        let v: f64 = centres
            .iter()
            .map(|&(cx, cy)| (-((px - cx).powi(2) + (py - cy).powi(2)) * inv).exp())
            .sum();
        v.min(1.0) as f32
    })
}

/// Image, noisy heatmap and true joints of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSample {
    /// `[3, H, W]` in `[0, 1]`
    pub image: Tensor<f32>,
    /// `[1, H, W]` in `[0, 1]`
    pub heatmap: Tensor<f32>,
    pub truth: JointSet,
}

impl HeatmapSample {
    pub fn new(image: Tensor<f32>, heatmap: Tensor<f32>, truth: JointSet) -> Result<Self> {
        let (is, hs) = (image.shape(), heatmap.shape());
        if is.len() != 3 || is[0] != 3 || hs != [1, is[1], is[2]] {
            return Err(Error::shape("heatmap_sample", "image [3,H,W] with heatmap [1,H,W]", format!("{is:?} / {hs:?}")));
        }
        if heatmap.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract("heatmap_sample", "heatmap values outside [0, 1]"));
        }
        Ok(HeatmapSample { image, heatmap, truth })
    }

    /// The `[4, H, W]` generator input.
    pub fn stacked(&self) -> Tensor<f32> {
        Tensor::concat(&[&self.image, &self.heatmap], 0).expect("shapes checked at construction")
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

/// Baseline decoder: for each joint, the heatmap argmax inside a square of
/// half-width `radius_px` around `hint` (first maximum in row-major order).
pub fn argmax_decode(heatmap: &Tensor<f32>, hint: &JointSet, radius_px: usize) -> Result<JointSet> {
    let s = heatmap.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::shape("argmax_decode", "[1, H, W]", format!("{s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = [0.0; 2 * NUM_JOINTS];
    for (j, (x, y)) in hint.joints().enumerate() {
        let cx = to_pixel(x, w).round().clamp(0.0, (w - 1) as f64) as usize;
        let cy = to_pixel(y, h).round().clamp(0.0, (h - 1) as f64) as usize;
        let (mut best, mut bx, mut by) = (f32::NEG_INFINITY, cx, cy);
        for py in cy.saturating_sub(radius_px)..=(cy + radius_px).min(h - 1) {
            for px in cx.saturating_sub(radius_px)..=(cx + radius_px).min(w - 1) {
                let v = heatmap.data()[py * w + px];
                if v > best {
                    (best, bx, by) = (v, px, py);
                }
            }
        }
        out[2 * j] = from_pixel(bx as f64, w);
        out[2 * j + 1] = from_pixel(by as f64, h);
    }
    Ok(JointSet(out))
}
