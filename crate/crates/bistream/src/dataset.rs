//! On-disk datasets.
//!
//! A sample directory holds `frames.fgt` `[T,3,H,W]`, `jointmap.fgt` and
//! `objmap.fgt` `[T,1,H,W]`, `label.txt` (one integer), `joints.csv` (true
//! joints per frame) and `heatmap.fgt` `[T,1,H,W]` (noisy joint heatmaps for
//! generator refinement). Untrimmed videos add `segments.csv`
//! (`start,end,class`, end exclusive). A heatmap set directory holds
//! `images.fgt` `[N,3,H,W]`, `heatmaps.fgt` `[N,1,H,W]` and `truth.csv`.

use std::path::{Path, PathBuf};

use bistream_core::eval::Segment;
use bistream_core::pose::{HeatmapSample, JointSet, JOINT_NAMES, NUM_JOINTS};
use bistream_core::streams::VideoSample;
use bistream_core::Tensor;

use crate::error::{StoreError, StoreResult};
use crate::{fgt, fsutil};

pub const FRAMES: &str = "frames.fgt";
pub const JOINT_MAP: &str = "jointmap.fgt";
pub const OBJECT_MAP: &str = "objmap.fgt";
pub const LABEL: &str = "label.txt";
pub const JOINTS: &str = "joints.csv";
pub const HEATMAP: &str = "heatmap.fgt";
pub const SEGMENTS: &str = "segments.csv";
pub const IMAGES: &str = "images.fgt";
pub const HEATMAPS: &str = "heatmaps.fgt";
pub const TRUTH: &str = "truth.csv";

/// Frame rate assigned to samples read from disk.
pub const DEFAULT_FPS: f64 = 15.0;

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn csv_rows(path: &Path) -> StoreResult<Vec<csv::StringRecord>> {
    let bytes = fsutil::read(path)?;
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    rd.records()
        .collect::<Result<_, _>>()
        .map_err(|e| StoreError::format(path, e.to_string()))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> StoreResult<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| StoreError::format(path, format!("bad or missing field {i} in row {:?}", rec.iter().collect::<Vec<_>>())))
}

pub fn segments_csv(segments: &[Segment]) -> Vec<u8> {
    let header = ["start", "end", "class"].map(String::from);
    csv_bytes(&header, segments.iter().map(|s| vec![s.start.to_string(), s.end.to_string(), s.class.to_string()]))
}

pub fn write_segments(path: &Path, segments: &[Segment]) -> StoreResult<()> {
    fsutil::write_atomic(path, &segments_csv(segments))
}

pub fn read_segments(path: &Path) -> StoreResult<Vec<Segment>> {
    csv_rows(path)?
        .iter()
        .map(|r| Ok(Segment::new(field(r, 0, path)?, field(r, 1, path)?, field(r, 2, path)?)?))
        .collect()
}

fn joints_header(first: &str) -> Vec<String> {
    let mut h = vec![first.to_string()];
    for name in JOINT_NAMES {
        h.push(format!("{name}-x"));
        h.push(format!("{name}-y"));
    }
    h
}

fn joints_csv(first: &str, joints: &[JointSet]) -> Vec<u8> {
    csv_bytes(
        &joints_header(first),
        joints.iter().enumerate().map(|(i, j)| {
            std::iter::once(i.to_string()).chain(j.coords().iter().map(|v| v.to_string())).collect()
        }),
    )
}

fn read_joints(path: &Path) -> StoreResult<Vec<JointSet>> {
    csv_rows(path)?
        .iter()
        .map(|r| {
            let c: Vec<f64> = (1..=2 * NUM_JOINTS).map(|i| field(r, i, path)).collect::<StoreResult<_>>()?;
            Ok(JointSet::from_slice(&c)?)
        })
        .collect()
}

/// A sample read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub sample: VideoSample,
    pub joints: Vec<JointSet>,
    pub heatmap: Tensor<f32>,
    /// Present for untrimmed videos.
    pub segments: Option<Vec<Segment>>,
}

pub fn write_sample(dir: &Path, s: &StoredSample) -> StoreResult<()> {
    fsutil::create_dir(dir)?;
    fgt::write(&dir.join(FRAMES), &s.sample.frames)?;
    fgt::write(&dir.join(JOINT_MAP), &s.sample.joint_map)?;
    fgt::write(&dir.join(OBJECT_MAP), &s.sample.object_map)?;
    fgt::write(&dir.join(HEATMAP), &s.heatmap)?;
    fsutil::write_atomic(&dir.join(JOINTS), &joints_csv("frame", &s.joints))?;
    if let Some(segs) = &s.segments {
        write_segments(&dir.join(SEGMENTS), segs)?;
    }
    fsutil::write_atomic(&dir.join(LABEL), format!("{}\n", s.sample.label).as_bytes())
}

pub fn read_sample(dir: &Path) -> StoreResult<StoredSample> {
    let label_path = dir.join(LABEL);
    let label = fsutil::read_string(&label_path)?
        .trim()
        .parse()
        .map_err(|_| StoreError::format(&label_path, "expected a single integer"))?;
    let sample = VideoSample::new(
        fgt::read(&dir.join(FRAMES))?,
        fgt::read(&dir.join(JOINT_MAP))?,
        fgt::read(&dir.join(OBJECT_MAP))?,
        label,
        DEFAULT_FPS,
    )?;
    let joints = read_joints(&dir.join(JOINTS))?;
    let heatmap = fgt::read(&dir.join(HEATMAP))?;
    if joints.len() != sample.len() || heatmap.shape() != sample.joint_map.shape() {
        return Err(StoreError::format(dir, "joints or heatmap length disagrees with frames"));
    }
    let seg_path = dir.join(SEGMENTS);
    let segments = if seg_path.exists() { Some(read_segments(&seg_path)?) } else { None };
    Ok(StoredSample {
        sample,
        joints,
        heatmap,
        segments,
    })
}

/// `path` itself if it is a sample directory, otherwise its sample
/// subdirectories in name order.
pub fn sample_dirs(path: &Path) -> StoreResult<Vec<PathBuf>> {
    if path.join(LABEL).exists() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dirs: Vec<PathBuf> = fsutil::subdirs(path)?.into_iter().filter(|d| d.join(LABEL).exists()).collect();
    if dirs.is_empty() {
        return Err(StoreError::format(path, "no sample directories found"));
    }
    Ok(dirs)
}

pub fn read_samples(path: &Path) -> StoreResult<Vec<StoredSample>> {
    sample_dirs(path)?.iter().map(|d| read_sample(d)).collect()
}

pub fn write_heatmap_set(dir: &Path, set: &[HeatmapSample]) -> StoreResult<()> {
    if set.is_empty() {
        return Err(StoreError::Invalid("empty heatmap set".into()));
    }
    let images: Vec<Tensor<f32>> = set.iter().map(|s| s.image.clone()).collect();
    let maps: Vec<Tensor<f32>> = set.iter().map(|s| s.heatmap.clone()).collect();
    fgt::write(&dir.join(IMAGES), &Tensor::stack(&images)?)?;
    fgt::write(&dir.join(HEATMAPS), &Tensor::stack(&maps)?)?;
    let truth: Vec<JointSet> = set.iter().map(|s| s.truth).collect();
    fsutil::write_atomic(&dir.join(TRUTH), &joints_csv("id", &truth))
}

pub fn read_heatmap_set(dir: &Path) -> StoreResult<Vec<HeatmapSample>> {
    let images = fgt::read(&dir.join(IMAGES))?;
    let maps = fgt::read(&dir.join(HEATMAPS))?;
    let truth = read_joints(&dir.join(TRUTH))?;
    let n = truth.len();
    if images.shape().first() != Some(&n) || maps.shape().first() != Some(&n) {
        return Err(StoreError::format(dir, format!("{n} truth rows but tensors of shape {:?} and {:?}", images.shape(), maps.shape())));
    }
    (0..n)
        .map(|i| Ok(HeatmapSample::new(images.index_axis0(i), maps.index_axis0(i), truth[i])?))
        .collect()
}
