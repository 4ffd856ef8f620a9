//! Deterministic synthetic shelf-side activity videos.
//!
//! A single person stands below a shelf. Six joints (shoulders, elbows,
//! wrists) follow a per-class trajectory template over the clip; frames are
//! rendered as a textured backdrop with a torso, head, arms, coloured joint
//! disks and an optional hand-held object. Every random choice comes from the
//! clip seed, so `(class, cfg, seed)` fixes the output bit for bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::eval::Segment;
use crate::pose::{synth_heatmap, HeatmapNoise, HeatmapSample, JointSet, NUM_JOINTS};
use crate::rng::{self, Rng};
use crate::streams::{build_joint_map, build_object_map, VideoSample};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

/// Whether a class carries an object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectRule {
    Never,
    /// Present with this probability, held in the active hand.
    Optional(f64),
    /// Always present, between both hands.
    Always,
}

/// Arm extension over normalised clip time `u ∈ [0, 1]`.
///
/// Extension 0 is a hanging arm, 1 an arm raised to the shelf line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionTemplate {
    pub start_ext: f64,
    pub end_ext: f64,
    /// Half-widths of the uniform random offsets added to the start and end
    /// extension.
    pub drift: (f64, f64),
    /// Sinusoidal extension wobble: amplitude and cycles per clip.
    pub wobble: (f64, f64),
    /// Sinusoidal sideways wrist motion: amplitude and cycles per clip.
    pub lateral: (f64, f64),
    /// Both arms follow the template and the wrists move toward the body
    /// centre by this amount.
    pub both_arms: Option<f64>,
    pub object: ObjectRule,
    /// Amplitude of the object's own oscillation about its anchor.
    pub object_wobble: f64,
}

impl MotionTemplate {
    const fn still(ext: f64) -> Self {
        MotionTemplate {
            start_ext: ext,
            end_ext: ext,
            drift: (0.0, 0.0),
            wobble: (0.0, 0.0),
            lateral: (0.0, 0.0),
            both_arms: None,
            object: ObjectRule::Never,
            object_wobble: 0.0,
        }
    }
}

/// Templates in label order: background, reach, retract, hand-in,
/// inspect-product, inspect-shelf.
pub fn default_templates() -> [MotionTemplate; NUM_CLASSES] {
    [
        MotionTemplate {
            drift: (0.06, 0.06),
            wobble: (0.04, 1.0),
            lateral: (0.02, 0.5),
            ..MotionTemplate::still(0.12)
        },
        MotionTemplate {
            start_ext: 0.25,
            end_ext: 0.8,
            drift: (0.2, 0.15),
            object: ObjectRule::Optional(0.5),
            ..MotionTemplate::still(0.0)
        },
        MotionTemplate {
            start_ext: 0.8,
            end_ext: 0.25,
            drift: (0.15, 0.2),
            object: ObjectRule::Optional(0.5),
            ..MotionTemplate::still(0.0)
        },
        MotionTemplate {
            wobble: (0.03, 2.0),
            lateral: (0.05, 1.5),
            object: ObjectRule::Optional(0.5),
            ..MotionTemplate::still(0.95)
        },
        MotionTemplate {
            both_arms: Some(0.09),
            object: ObjectRule::Always,
            object_wobble: 0.04,
            ..MotionTemplate::still(0.3)
        },
        MotionTemplate::still(0.5),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive clip length range before subsampling.
    pub min_len: usize,
    pub max_len: usize,
    pub joint_radius: usize,
    pub object_box: usize,
    pub fps: f64,
    /// Per-frame joint jitter in pixels.
    pub jitter_px: f64,
    pub seed: u64,
    pub templates: [MotionTemplate; NUM_CLASSES],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            min_len: 8,
            max_len: 40,
            joint_radius: 3,
            object_box: 12,
            fps: 15.0,
            jitter_px: 1.0,
            seed: 7,
            templates: default_templates(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::contract("synth_config", format!("frames must be >= 16x16, got {}x{}", self.height, self.width)));
        }
        if self.min_len < 1 || self.min_len > self.max_len || self.max_len > 200 {
            return Err(Error::contract(
                "synth_config",
                format!("length range {}..={} outside 1..=200", self.min_len, self.max_len),
            ));
        }
        if self.object_box == 0 || !(self.fps > 0.0) || !(self.jitter_px >= 0.0) {
            return Err(Error::contract("synth_config", "object box, fps and jitter must be positive"));
        }
        Ok(())
    }
}

/// Per-video appearance and body placement.
#[derive(Debug, Clone)]
struct Person {
    cx: f64,
    shoulder_y: f64,
    half_width: f64,
    /// -1 for the left arm (image left), +1 for the right.
    active: f64,
    shirt: [f32; 3],
    skin: [f32; 3],
    object_colour: [f32; 3],
    backdrop: Vec<f32>,
}

const JOINT_COLOURS: [[f32; 3]; NUM_JOINTS] = [
    [0.95, 0.15, 0.15],
    [0.15, 0.85, 0.15],
    [0.95, 0.6, 0.1],
    [0.1, 0.6, 0.95],
    [0.95, 0.95, 0.2],
    [0.85, 0.2, 0.85],
];

const OBJECT_COLOURS: [[f32; 3]; 3] = [[0.1, 0.9, 0.9], [0.2, 0.3, 1.0], [1.0, 0.45, 0.7]];

impl Person {
    fn sample(cfg: &SynthConfig, r: &mut Rng) -> Self {
        let cx = 0.5 + r.random_range(-0.08..=0.08);
        let shoulder_y = 0.78 + r.random_range(-0.03..=0.03);
        let active = if r.random::<bool>() { 1.0 } else { -1.0 };
        let shirt = [r.random_range(0.2..0.8f32), r.random_range(0.2..0.8f32), r.random_range(0.2..0.8f32)];
        let tone = r.random_range(-0.05..0.05f32);
        let skin = [0.85 + tone, 0.65 + tone, 0.5 + tone];
        let object_colour = OBJECT_COLOURS[r.random_range(0..OBJECT_COLOURS.len())];
        let backdrop = render_backdrop(cfg, &mut rng::seeded(rng::derive(cfg.seed, rng::label("backdrop"))));
        Person {
            cx,
            shoulder_y,
            half_width: 0.13,
            active,
            shirt,
            skin,
            object_colour,
            backdrop,
        }
    }

    fn shoulder(&self, side: f64) -> (f64, f64) {
        (self.cx + side * self.half_width, self.shoulder_y)
    }

    /// Joints for the given per-arm extension and sideways offset.
    fn joints(&self, arms: [(f64, f64); 2], pull: [f64; 2]) -> [f64; 2 * NUM_JOINTS] {
        let mut c = [0.0; 2 * NUM_JOINTS];
        for (k, side) in [-1.0, 1.0].into_iter().enumerate() {
            let (e, lat) = arms[k];
            let (sx, sy) = self.shoulder(side);
            let wx = sx + side * 0.04 * (1.0 - e) + lat - side * pull[k];
            let wy = sy + 0.14 - 0.70 * e;
            let ex = 0.5 * (sx + wx) + side * 0.05;
            let ey = 0.5 * (sy + wy) + 0.02;
            for (j, (x, y)) in [(sx, sy), (ex, ey), (wx, wy)].into_iter().enumerate() {
                c[2 * (2 * j + k)] = x;
                c[2 * (2 * j + k) + 1] = y;
            }
        }
        c
    }
}

/// Shelf with product bars above a textured floor. The scene is fixed by
/// the configuration seed, as for a static camera.
fn render_backdrop(cfg: &SynthConfig, r: &mut Rng) -> Vec<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let shelf_end = (0.21 * h as f64) as usize;
    let mut out = vec![0.0f32; 3 * h * w];
    let mut bars = Vec::new();
    let mut x = 0;
    while x < w {
        let width = r.random_range(2..=5).min(w - x);
        let colour = [r.random_range(0.2..1.0f32), r.random_range(0.2..1.0f32), r.random_range(0.2..1.0f32)];
        let top = r.random_range(0..shelf_end / 2 + 1);
        bars.push((x, x + width, top, colour));
        x += width + r.random_range(0..=1);
    }
    for py in 0..h {
        for px in 0..w {
            let mut c = if py < shelf_end {
                [0.45, 0.32, 0.2]
            } else {
                let shade = 0.35 + 0.25 * (py as f32 / h as f32);
                let check = if ((px / 4) + (py / 4)) % 2 == 0 { 0.04 } else { -0.04 };
                [shade + check; 3]
            };
            if py < shelf_end {
                for &(x0, x1, top, colour) in &bars {
                    if px >= x0 && px < x1 && py >= top && py + 1 < shelf_end {
                        c = colour;
                    }
                }
            }
            for ch in 0..3 {
                out[(ch * h + py) * w + px] = c[ch];
            }
        }
    }
    out
}

struct Canvas<'a> {
    h: usize,
    w: usize,
    data: &'a mut [f32],
}

impl Canvas<'_> {
    fn px(&self, v: (f64, f64)) -> (f64, f64) {
        (v.0 * self.w as f64 - 0.5, v.1 * self.h as f64 - 0.5)
    }

    fn paint(&mut self, inside: impl Fn(f64, f64) -> bool, colour: [f32; 3]) {
        for py in 0..self.h {
            for px in 0..self.w {
                if inside(px as f64, py as f64) {
                    for ch in 0..3 {
                        self.data[(ch * self.h + py) * self.w + px] = colour[ch];
                    }
                }
            }
        }
    }

    fn disk(&mut self, centre: (f64, f64), radius_px: f64, colour: [f32; 3]) {
        let (cx, cy) = self.px(centre);
        self.paint(|x, y| (x - cx).powi(2) + (y - cy).powi(2) <= radius_px * radius_px, colour);
    }

    fn capsule(&mut self, a: (f64, f64), b: (f64, f64), radius_px: f64, colour: [f32; 3]) {
        let (a, b) = (self.px(a), self.px(b));
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = (dx * dx + dy * dy).max(1e-12);
        self.paint(
            |x, y| {
                let t = (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0);
                let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
                (x - qx).powi(2) + (y - qy).powi(2) <= radius_px * radius_px
            },
            colour,
        );
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, colour: [f32; 3]) {
        let (p0, p1) = (self.px((x0, y0)), self.px((x1, y1)));
        self.paint(|x, y| x >= p0.0 && x <= p1.0 && y >= p0.1 && y <= p1.1, colour);
    }
}

fn render_frame(cfg: &SynthConfig, person: &Person, joints: &JointSet, object: Option<(f64, f64)>, out: &mut [f32]) {
    out.copy_from_slice(&person.backdrop);
    let mut cv = Canvas {
        h: cfg.height,
        w: cfg.width,
        data: out,
    };
    let scale = cfg.width as f64 / 64.0;
    let (ls, rs) = (joints.joint(0), joints.joint(1));
    cv.rect(ls.0, ls.1 - 0.02, rs.0, 1.0, person.shirt);
    cv.disk((person.cx, person.shoulder_y - 0.11), 5.0 * scale, person.skin);
    for k in 0..2 {
        let (s, e, w) = (joints.joint(k), joints.joint(2 + k), joints.joint(4 + k));
        cv.capsule(s, e, 2.6 * scale, person.shirt);
        cv.capsule(e, w, 2.2 * scale, person.skin);
    }
    for (j, colour) in JOINT_COLOURS.iter().enumerate() {
        cv.disk(joints.joint(j), 2.0 * scale, *colour);
    }
    if let Some(o) = object {
        cv.disk(o, 3.0 * scale, person.object_colour);
    }
}

/// Joint and object trajectory of one class over `len` frames, before
/// jitter.
fn trajectory(cfg: &SynthConfig, person: &Person, class: usize, len: usize, r: &mut Rng) -> (Vec<[f64; 12]>, Vec<Option<(f64, f64)>>) {
    let t = &cfg.templates[class];
    let mut offset = |d: f64| if d > 0.0 { r.random_range(-d..=d) } else { 0.0 };
    let (e0, e1) = (t.start_ext + offset(t.drift.0), t.end_ext + offset(t.drift.1));
    let wobble_phase = r.random_range(0.0..2.0 * PI);
    let lateral_phase = r.random_range(0.0..2.0 * PI);
    let rest = [r.random_range(0.0..0.05), r.random_range(0.0..0.05)];
    let has_object = match t.object {
        ObjectRule::Never => false,
        ObjectRule::Optional(p) => r.random::<f64>() < p,
        ObjectRule::Always => true,
    };
    let active = usize::from(person.active > 0.0);
    let mut joints = Vec::with_capacity(len);
    let mut objects = Vec::with_capacity(len);
    for i in 0..len {
        let u = if len > 1 { i as f64 / (len - 1) as f64 } else { 0.0 };
        let e = e0 + (e1 - e0) * u + t.wobble.0 * (2.0 * PI * t.wobble.1 * u + wobble_phase).sin();
        let lat = t.lateral.0 * (2.0 * PI * t.lateral.1 * u + lateral_phase).sin();
        let mut arms = [(rest[0], 0.0), (rest[1], 0.0)];
        let mut pull = [0.0; 2];
        match t.both_arms {
            Some(p) => {
                arms = [(e, -lat), (e, lat)];
                pull = [p, p];
            }
            None => arms[active] = (e, lat),
        }
        let c = person.joints(arms, pull);
        let obj = has_object.then(|| {
            let (lw, rw) = ((c[8], c[9]), (c[10], c[11]));
            let swing = t.object_wobble * (2.0 * PI * 2.0 * u).sin();
            if t.both_arms.is_some() {
                (0.5 * (lw.0 + rw.0) + swing, 0.5 * (lw.1 + rw.1) - 0.03)
            } else {
                let w = if active == 1 { rw } else { lw };
                (w.0 + swing, w.1 - 0.03)
            }
        });
        joints.push(c);
        objects.push(obj);
    }
    (joints, objects)
}

/// A generated clip together with its exact per-frame joints and object
/// centres.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub sample: VideoSample,
    pub joints: Vec<JointSet>,
    pub objects: Vec<Option<(f64, f64)>>,
}

fn render_clip(
    cfg: &SynthConfig,
    person: &Person,
    coords: &[[f64; 12]],
    objects: Vec<Option<(f64, f64)>>,
    label: usize,
    r: &mut Rng,
) -> Result<SynthClip> {
    let (h, w, len) = (cfg.height, cfg.width, coords.len());
    let plane = h * w;
    let mut frames = vec![0.0f32; len * 3 * plane];
    let mut jmap = vec![0.0f32; len * plane];
    let mut omap = vec![0.0f32; len * plane];
    let mut joints = Vec::with_capacity(len);
    let objects: Vec<Option<(f64, f64)>> = objects
        .into_iter()
        .map(|o| o.map(|(x, y)| (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0))))
        .collect();
    for (i, c) in coords.iter().enumerate() {
        let mut c = *c;
        for (k, v) in c.iter_mut().enumerate() {
            let size = if k % 2 == 0 { w } else { h };
            *v += rng::normal(r) * cfg.jitter_px / size as f64;
        }
        let js = JointSet::clamped(c);
        render_frame(cfg, person, &js, objects[i], &mut frames[i * 3 * plane..(i + 1) * 3 * plane]);
        jmap[i * plane..(i + 1) * plane].copy_from_slice(build_joint_map(&js, h, w, cfg.joint_radius).data());
        let centres: Vec<(f64, f64)> = objects[i].into_iter().collect();
        omap[i * plane..(i + 1) * plane].copy_from_slice(build_object_map(&centres, h, w, cfg.object_box)?.data());
        joints.push(js);
    }
    let sample = VideoSample::new(
        Tensor::new(&[len, 3, h, w], frames)?,
        Tensor::new(&[len, 1, h, w], jmap)?,
        Tensor::new(&[len, 1, h, w], omap)?,
        label,
        cfg.fps,
    )?;
    Ok(SynthClip { sample, joints, objects })
}

/// One trimmed clip of `class` with a length drawn from the configured
/// range.
pub fn gen_sequence(class: usize, cfg: &SynthConfig, seed: u64) -> Result<SynthClip> {
    cfg.validate()?;
    if class >= NUM_CLASSES {
        return Err(Error::contract("gen_sequence", format!("class {class} out of range 0..{NUM_CLASSES}")));
    }
    let mut r = rng::seeded(seed);
    let person = Person::sample(cfg, &mut r);
    let len = r.random_range(cfg.min_len..=cfg.max_len);
    let (coords, objects) = trajectory(cfg, &person, class, len, &mut r);
    render_clip(cfg, &person, &coords, objects, class, &mut r)
}

/// Ordered `(class, duration)` entries of an untrimmed video.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityScript {
    pub entries: Vec<(usize, usize)>,
    /// Row-stochastic transition matrix the script was drawn from, if any.
    pub bias: Option<Vec<Vec<f64>>>,
}

impl ActivityScript {
    pub fn new(entries: Vec<(usize, usize)>) -> Result<Self> {
        let s = ActivityScript { entries, bias: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::contract("activity_script", "script is empty"));
        }
        for &(class, d) in &self.entries {
            if class >= NUM_CLASSES || d == 0 {
                return Err(Error::contract("activity_script", format!("bad entry (class {class}, duration {d})")));
            }
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Draw `n` entries. The first class is uniform; each next class is
    /// drawn from the previous class's row of `matrix` (uniform over the
    /// other classes when `None`). Self-transitions must have zero weight.
    pub fn sample(matrix: Option<&[Vec<f64>]>, n: usize, durations: (usize, usize), seed: u64) -> Result<Self> {
        if n == 0 || durations.0 == 0 || durations.0 > durations.1 {
            return Err(Error::contract("activity_script", "need n >= 1 and a valid duration range"));
        }
        if let Some(m) = matrix {
            if m.len() != NUM_CLASSES || m.iter().any(|row| row.len() != NUM_CLASSES) {
                return Err(Error::contract("activity_script", "transition matrix must be K x K"));
            }
            for (a, row) in m.iter().enumerate() {
                if row[a] != 0.0 || row.iter().any(|&p| !(p >= 0.0)) || !(row.iter().sum::<f64>() > 0.0) {
                    return Err(Error::contract("activity_script", format!("row {a} must be non-negative with a zero diagonal")));
                }
            }
        }
        let mut r = rng::seeded(seed);
        let mut class = r.random_range(0..NUM_CLASSES);
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                class = match matrix {
                    Some(m) => {
                        let row = &m[class];
                        let mut x = r.random::<f64>() * row.iter().sum::<f64>();
                        let mut next = class;
                        for (b, &p) in row.iter().enumerate() {
                            if p > 0.0 {
                                next = b;
                                if x < p {
                                    break;
                                }
                                x -= p;
                            }
                        }
                        next
                    }
                    None => (class + r.random_range(1..NUM_CLASSES)) % NUM_CLASSES,
                };
            }
            entries.push((class, r.random_range(durations.0..=durations.1)));
        }
        Ok(ActivityScript {
            entries,
            bias: matrix.map(|m| m.to_vec()),
        })
    }
}

/// Transition weights between the five actions as observed in real
/// shelf-interaction footage, rows and columns in label order. Background
/// neither precedes nor follows any action. Rows are not normalised (the
/// sampler normalises them).
pub fn shelf_transition_bias() -> Vec<Vec<f64>> {
    let actions = [
        [0.0, 65.6, 31.3, 0.4, 0.7],
        [19.4, 0.0, 0.5, 44.76, 35.41],
        [0.084, 88.3, 0.0, 0.2, 0.6],
        [63.04, 2.5, 0.0, 0.0, 31.91],
        [99.1, 0.0, 0.2, 0.7, 0.0],
    ];
    let mut m = vec![vec![0.0; NUM_CLASSES]; NUM_CLASSES];
    for (a, row) in actions.iter().enumerate() {
        m[a + 1][1..].copy_from_slice(row);
    }
    // background only exits, uniformly, so scripts that start there leave it
    for v in &mut m[0][1..] {
        *v = 1.0;
    }
    m
}

/// An untrimmed video with its ground-truth segments.
#[derive(Debug, Clone, PartialEq)]
pub struct UntrimmedVideo {
    /// Label is the class of the first segment.
    pub clip: SynthClip,
    pub segments: Vec<Segment>,
}

/// Frames over which a boundary correction fades out.
const BLEND_FRAMES: usize = 4;

/// Concatenate the script's activities, performed by one person, with
/// joint trajectories kept continuous across boundaries.
pub fn gen_untrimmed(script: &ActivityScript, cfg: &SynthConfig, seed: u64) -> Result<UntrimmedVideo> {
    cfg.validate()?;
    script.validate()?;
    let mut r = rng::seeded(seed);
    let person = Person::sample(cfg, &mut r);
    let mut coords: Vec<[f64; 12]> = Vec::with_capacity(script.total_frames());
    let mut objects = Vec::with_capacity(script.total_frames());
    let mut segments = Vec::with_capacity(script.entries.len());
    for &(class, d) in &script.entries {
        let (mut c, o) = trajectory(cfg, &person, class, d, &mut r);
        if let Some(prev) = coords.last() {
            let delta: Vec<f64> = prev.iter().zip(&c[0]).map(|(a, b)| a - b).collect();
            for (i, frame) in c.iter_mut().enumerate().take(BLEND_FRAMES) {
                let k = 1.0 - i as f64 / BLEND_FRAMES as f64;
                for (v, dv) in frame.iter_mut().zip(&delta) {
                    *v += k * dv;
                }
            }
        }
        segments.push(Segment::new(coords.len(), coords.len() + d, class)?);
        coords.extend(c);
        objects.extend(o);
    }
    let clip = render_clip(cfg, &person, &coords, objects, script.entries[0].0, &mut r)?;
    Ok(UntrimmedVideo { clip, segments })
}

/// Per-frame labels of a segment tiling.
pub fn frame_labels(segments: &[Segment]) -> Vec<usize> {
    segments.iter().flat_map(|s| core::iter::repeat(s.class).take(s.len())).collect()
}

/// Balanced class assignment and per-sample seeds for a train/test split.
/// Test seeds come from a disjoint stream label range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPlan {
    pub train: Vec<(usize, u64)>,
    pub test: Vec<(usize, u64)>,
}

pub fn dataset_plan(seed: u64, n_train: usize, n_test: usize) -> Result<DatasetPlan> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::contract("gen_dataset", "both splits need at least one sample"));
    }
    let split = |n: usize, base: u64| (0..n).map(|i| (i % NUM_CLASSES, rng::derive(seed, base + i as u64))).collect();
    Ok(DatasetPlan {
        train: split(n_train, 0),
        test: split(n_test, 1 << 32),
    })
}

/// One noisy-heatmap training example for the joint regressor: a single
/// rendered frame of a random class, its true joints and a corrupted
/// heatmap.
pub fn gen_heatmap_sample(cfg: &SynthConfig, noise: &HeatmapNoise, seed: u64) -> Result<HeatmapSample> {
    let mut r = rng::seeded(seed);
    let class = r.random_range(0..NUM_CLASSES);
    let clip = gen_sequence(class, &SynthConfig { min_len: 1, max_len: 40, ..cfg.clone() }, rng::derive(seed, 1))?;
    let t = r.random_range(0..clip.sample.len());
    let truth = clip.joints[t];
    let image = clip.sample.frames.index_axis0(t);
    let heatmap = synth_heatmap(&truth, cfg.height, cfg.width, noise, rng::derive(seed, 2));
    HeatmapSample::new(image, heatmap, truth)
}

pub fn gen_heatmap_set(cfg: &SynthConfig, noise: &HeatmapNoise, n: usize, seed: u64) -> Result<Vec<HeatmapSample>> {
    (0..n).map(|i| gen_heatmap_sample(cfg, noise, rng::derive(seed, i as u64))).collect()
}
