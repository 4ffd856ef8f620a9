//! The bi-stream recognizer and its inputs: binary joint and object maps,
//! frame-count subsampling and the per-frame two-stream network with a
//! shared LSTM and temporal attention.

#[cfg(not(feature = "std"))]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::pose::JointSet;
use crate::tensor::Tensor;

mod net;
mod train;

pub use net::{BiStreamNet, NetConfig, Readout, Variant};
pub use train::{train_recognizer, TrainConfig, TrainReport};

/// Longest sequence the recognizer accepts before subsampling.
pub const FRAME_LIMIT: usize = 40;

/// Pixel index of a normalised coordinate.
pub(crate) fn pixel_index(v: f64, size: usize) -> usize {
    ((v * size as f64).floor().max(0.0) as usize).min(size - 1)
}

/// 1 at pixels within `radius_px` (Euclidean, inclusive) of any joint
/// pixel, 0 elsewhere. Returns `[1, H, W]`.
pub fn build_joint_map(joints: &JointSet, h: usize, w: usize, radius_px: usize) -> Tensor<f32> {
    let mut map = Tensor::zeros(&[1, h, w]);
    let r = radius_px as isize;
    for (x, y) in joints.joints() {
        let (cx, cy) = (pixel_index(x, w) as isize, pixel_index(y, h) as isize);
        for dy in -r..=r {
            for dx in -r..=r {
                let (px, py) = (cx + dx, cy + dy);
                if dx * dx + dy * dy <= r * r && px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                    map.data_mut()[py as usize * w + px as usize] = 1.0;
                }
            }
        }
    }
    map
}

/// 1 inside the `box_px`-wide square centred on each object, clipped at the
/// borders. Returns `[1, H, W]`.
pub fn build_object_map(centres: &[(f64, f64)], h: usize, w: usize, box_px: usize) -> Result<Tensor<f32>> {
    if box_px == 0 {
        return Err(Error::contract("build_object_map", "box size must be >= 1"));
    }
    let mut map = Tensor::zeros(&[1, h, w]);
    for &(x, y) in centres {
        let x0 = pixel_index(x, w) as isize - (box_px / 2) as isize;
        let y0 = pixel_index(y, h) as isize - (box_px / 2) as isize;
        for py in y0.max(0)..(y0 + box_px as isize).min(h as isize) {
            for px in x0.max(0)..(x0 + box_px as isize).min(w as isize) {
                map.data_mut()[py as usize * w + px as usize] = 1.0;
            }
        }
    }
    Ok(map)
}

/// Indices kept by repeatedly dropping every second frame while more than
/// `limit` remain.
pub fn subsample_indices(len: usize, limit: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    while idx.len() > limit.max(1) {
        idx = idx.into_iter().step_by(2).collect();
    }
    idx
}

/// Apply the halving rule to a sequence.
pub fn subsample_sequence<X: Clone>(items: &[X], limit: usize) -> Vec<X> {
    subsample_indices(items.len(), limit).into_iter().map(|i| items[i].clone()).collect()
}

/// One trimmed activity clip.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    /// `[T, 3, H, W]` in `[0, 1]`
    pub frames: Tensor<f32>,
    /// `[T, 1, H, W]`, binary
    pub joint_map: Tensor<f32>,
    /// `[T, 1, H, W]`, binary
    pub object_map: Tensor<f32>,
    pub label: usize,
    pub fps: f64,
}

impl VideoSample {
    pub fn new(frames: Tensor<f32>, joint_map: Tensor<f32>, object_map: Tensor<f32>, label: usize, fps: f64) -> Result<Self> {
        let s = VideoSample {
            frames,
            joint_map,
            object_map,
            label,
            fps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let fs = self.frames.shape();
        if fs.len() != 4 || fs[1] != 3 {
            return Err(Error::shape("video_sample", "frames [T, 3, H, W]", format!("{fs:?}")));
        }
        let map_shape = [fs[0], 1, fs[2], fs[3]];
        for (name, m) in [("joint_map", &self.joint_map), ("object_map", &self.object_map)] {
            if m.shape() != map_shape {
                return Err(Error::shape("video_sample", format!("{name} {map_shape:?}"), format!("{:?}", m.shape())));
            }
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::contract("video_sample", format!("{name} is not binary")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    /// Frames `start..end` as a new sample with the same label.
    pub fn window(&self, start: usize, end: usize) -> Result<VideoSample> {
        Ok(VideoSample {
            frames: self.frames.slice_axis0(start, end)?,
            joint_map: self.joint_map.slice_axis0(start, end)?,
            object_map: self.object_map.slice_axis0(start, end)?,
            label: self.label,
            fps: self.fps,
        })
    }
}

/// Replace the joint map with one drawn from per-frame joint estimates.
pub fn substitute_joint_map(sample: &VideoSample, joints: &[JointSet], radius_px: usize) -> Result<VideoSample> {
    if joints.len() != sample.len() {
        return Err(Error::contract(
            "substitute_joint_map",
            format!("{} joint sets for {} frames", joints.len(), sample.len()),
        ));
    }
    let (h, w) = (sample.height(), sample.width());
    let maps: Vec<Tensor<f32>> = joints.iter().map(|j| build_joint_map(j, h, w, radius_px)).collect();
    let mut out = sample.clone();
    out.joint_map = Tensor::stack(&maps)?;
    Ok(out)
}

/// How a [`VideoSample`] is turned into network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputSpec {
    /// Average-pooling factor applied to every frame and map.
    pub pool: usize,
    pub frame_limit: usize,
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec {
            pool: 4,
            frame_limit: FRAME_LIMIT,
        }
    }
}

/// Network-ready inputs: subsampled to the frame limit and pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    /// `[T, 4, h, w]`: RGB then joint map.
    pub pose: Tensor<f32>,
    /// `[T, 1, h, w]`
    pub object: Tensor<f32>,
    pub label: usize,
}

impl PreparedSample {
    pub fn len(&self) -> usize {
        self.pose.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames `start..end`, subsampled to `limit` if longer.
    pub fn window(&self, start: usize, end: usize, limit: usize) -> Result<PreparedSample> {
        let idx: Vec<usize> = subsample_indices(end.saturating_sub(start), limit).into_iter().map(|i| i + start).collect();
        if idx.is_empty() || end > self.len() {
            return Err(Error::contract("prepared_window", format!("range {start}..{end} of {} frames", self.len())));
        }
        Ok(PreparedSample {
            pose: self.pose.select_axis0(&idx)?,
            object: self.object.select_axis0(&idx)?,
            label: self.label,
        })
    }
}

/// Pool the whole sequence without subsampling (for sliding windows).
pub fn prepare_full(sample: &VideoSample, pool: usize) -> Result<PreparedSample> {
    sample.validate()?;
    let stacked = Tensor::concat(&[&sample.frames, &sample.joint_map], 1)?;
    Ok(PreparedSample {
        pose: stacked.avg_pool2d(pool)?,
        object: sample.object_map.avg_pool2d(pool)?,
        label: sample.label,
    })
}

/// Subsample to the frame limit, then pool.
pub fn prepare(sample: &VideoSample, spec: &InputSpec) -> Result<PreparedSample> {
    let full = prepare_full(sample, spec.pool)?;
    full.window(0, full.len(), spec.frame_limit)
}
