//! Sliding-window detection over untrimmed videos: window scoring,
//! per-frame probability averaging, segment extraction and the window/stride
//! grid search.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::eval::{f1_at_iou, without_class, DetectionCounts, Segment};
use crate::streams::{BiStreamNet, PreparedSample, FRAME_LIMIT};
use crate::tensor::{Real, Tensor};

pub const MIN_WINDOW: usize = 5;
pub const MAX_WINDOW: usize = FRAME_LIMIT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DetectorConfig {
    pub window: usize,
    pub stride: usize,
}

impl DetectorConfig {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if !(MIN_WINDOW..=MAX_WINDOW).contains(&window) || stride == 0 || stride > window {
            return Err(Error::contract(
                "detector_config",
                format!("need {MIN_WINDOW} <= window <= {MAX_WINDOW} and 1 <= stride <= window, got {window}/{stride}"),
            ));
        }
        Ok(DetectorConfig { window, stride })
    }
}

/// Window spans `[start, end)` over `len` frames: starts at multiples of
/// the stride, plus a final window clamped to end at `len` when the regular
/// ones stop short. A window longer than the video becomes `[0, len)`.
pub fn window_spans(len: usize, cfg: DetectorConfig) -> Vec<(usize, usize)> {
    if len == 0 {
        return Vec::new();
    }
    if cfg.window >= len {
        return vec![(0, len)];
    }
    let mut spans: Vec<(usize, usize)> = (0..=len - cfg.window)
        .step_by(cfg.stride)
        .map(|s| (s, s + cfg.window))
        .collect();
    if spans.last().map_or(true, |&(_, e)| e < len) {
        spans.push((len - cfg.window, len));
    }
    spans
}

/// Something that assigns class probabilities to a frame range of one
/// video.
pub trait WindowScorer {
    fn score(&self, start: usize, end: usize) -> Result<Vec<f64>>;
    fn len(&self) -> usize;
}

/// Scores windows of one prepared video with a recognizer. When frames are
/// encoded independently the per-frame features are computed once and
/// shared by every window.
pub struct NetScorer<'a, T> {
    net: &'a BiStreamNet<T>,
    video: &'a PreparedSample,
    features: Option<Tensor<T>>,
}

impl<'a, T: Real> NetScorer<'a, T> {
    pub fn new(net: &'a BiStreamNet<T>, video: &'a PreparedSample) -> Result<Self> {
        let features = if net.frames_independent() {
            Some(net.frame_features(video)?)
        } else {
            None
        };
        Ok(NetScorer { net, video, features })
    }
}

impl<T: Real> WindowScorer for NetScorer<'_, T> {
    fn score(&self, start: usize, end: usize) -> Result<Vec<f64>> {
        if end - start > FRAME_LIMIT {
            // longer windows are subsampled, which changes the frame set
            return self.net.classify(&self.video.window(start, end, FRAME_LIMIT)?);
        }
        match &self.features {
            Some(f) => self.net.classify_features(&f.slice_axis0(start, end)?),
            None => self.net.classify(&self.video.window(start, end, FRAME_LIMIT)?),
        }
    }

    fn len(&self) -> usize {
        self.video.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredWindow {
    pub start: usize,
    pub end: usize,
    pub probs: Vec<f64>,
}

pub fn slide_and_score<S: WindowScorer + ?Sized>(scorer: &S, cfg: DetectorConfig) -> Result<Vec<ScoredWindow>> {
    window_spans(scorer.len(), cfg)
        .into_iter()
        .map(|(start, end)| Ok(ScoredWindow { start, end, probs: scorer.score(start, end)? }))
        .collect()
}

/// Per-frame mean of the probability vectors of all covering windows.
pub fn fuse_probabilities(windows: &[ScoredWindow], len: usize) -> Result<Vec<Vec<f64>>> {
    let k = windows.first().map_or(0, |w| w.probs.len());
    let mut sums = vec![vec![0.0; k]; len];
    let mut counts = vec![0usize; len];
    for w in windows {
        if w.probs.len() != k || w.start >= w.end || w.end > len {
            return Err(Error::contract(
                "fuse_labels",
                format!("window {}..{} with {} classes over {len} frames", w.start, w.end, w.probs.len()),
            ));
        }
        for t in w.start..w.end {
            counts[t] += 1;
            for (s, p) in sums[t].iter_mut().zip(&w.probs) {
                *s += p;
            }
        }
    }
    if let Some(t) = counts.iter().position(|&c| c == 0) {
        return Err(Error::contract("fuse_labels", format!("frame {t} is not covered by any window")));
    }
    for (row, &n) in sums.iter_mut().zip(&counts) {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    Ok(sums)
}

/// First index of the maximum, so ties go to the lowest class.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-frame labels from averaged window probabilities.
pub fn fuse_labels(windows: &[ScoredWindow], len: usize) -> Result<Vec<usize>> {
    Ok(fuse_probabilities(windows, len)?.iter().map(|r| argmax(r)).collect())
}

/// Maximal runs of equal labels, omitting runs of `drop` if given.
pub fn extract_segments(labels: &[usize], drop: Option<usize>) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = 0;
    for t in 1..=labels.len() {
        if t == labels.len() || labels[t] != labels[start] {
            if drop != Some(labels[start]) {
                out.push(Segment {
                    start,
                    end: t,
                    class: labels[start],
                });
            }
            start = t;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub labels: Vec<usize>,
    /// Segments with the background class kept.
    pub segments: Vec<Segment>,
}

pub fn detect<S: WindowScorer + ?Sized>(scorer: &S, cfg: DetectorConfig) -> Result<Detection> {
    let windows = slide_and_score(scorer, cfg)?;
    let labels = fuse_labels(&windows, scorer.len())?;
    let segments = extract_segments(&labels, None);
    Ok(Detection { labels, segments })
}

/// Detection counts of one configuration summed over videos, with the
/// background class removed from both sides before matching.
pub fn score_detections(pred: &[Vec<Segment>], truth: &[Vec<Segment>], iou: f64, background: Option<usize>) -> Result<DetectionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::contract("score_detections", "one prediction list per video"));
    }
    let mut counts = DetectionCounts::default();
    for (p, t) in pred.iter().zip(truth) {
        let (p, t) = match background {
            Some(b) => (without_class(p, b), without_class(t, b)),
            None => (p.clone(), t.clone()),
        };
        counts.add(f1_at_iou(&p, &t, iou)?.counts);
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub config: DetectorConfig,
    pub counts: DetectionCounts,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub best: SurfacePoint,
    /// Every evaluated pair, window-major then stride.
    pub surface: Vec<SurfacePoint>,
}

/// Evaluate every `(window, stride)` with `window` from `windows` and
/// `stride` in `1..=window`; F1 at `iou` uses counts summed over all videos.
/// The best pair maximises F1, ties going to the smaller window and then
/// the smaller stride. Window scores are computed once per span and shared
/// across strides.
pub fn grid_search<S: WindowScorer>(
    videos: &[S],
    truth: &[Vec<Segment>],
    windows: &[usize],
    iou: f64,
    background: Option<usize>,
) -> Result<GridSearch> {
    if videos.is_empty() || videos.len() != truth.len() {
        return Err(Error::contract("grid_search", "need one ground-truth list per video and at least one video"));
    }
    let mut sizes: Vec<usize> = windows.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        return Err(Error::contract("grid_search", "empty window set"));
    }
    let mut surface = Vec::new();
    for &w in &sizes {
        DetectorConfig::new(w, 1)?;
        // memoised scores by window start, per video
        let mut memo: Vec<Vec<Option<Vec<f64>>>> = videos.iter().map(|v| vec![None; v.len().max(1)]).collect();
        for stride in 1..=w {
            let cfg = DetectorConfig::new(w, stride)?;
            let mut preds = Vec::with_capacity(videos.len());
            for (v, cache) in videos.iter().zip(memo.iter_mut()) {
                let mut scored = Vec::new();
                for (start, end) in window_spans(v.len(), cfg) {
                    let probs = match &cache[start] {
                        Some(p) => p.clone(),
                        None => {
                            let p = v.score(start, end)?;
                            cache[start] = Some(p.clone());
                            p
                        }
                    };
                    scored.push(ScoredWindow { start, end, probs });
                }
                preds.push(extract_segments(&fuse_labels(&scored, v.len())?, None));
            }
            let counts = score_detections(&preds, truth, iou, background)?;
            surface.push(SurfacePoint { config: cfg, counts, f1: counts.f1() });
        }
        log::debug!("grid search: window {w} done");
    }
    let mut best = surface[0].clone();
    for p in &surface[1..] {
        if p.f1 > best.f1 {
            best = p.clone();
        }
    }
    Ok(GridSearch { best, surface })
}

/// Closure scorer over a fixed-length video, for tests and custom models.
pub struct FnScorer<F> {
    pub len: usize,
    pub f: F,
}

impl<F: Fn(usize, usize) -> Result<Vec<f64>>> WindowScorer for FnScorer<F> {
    fn score(&self, start: usize, end: usize) -> Result<Vec<f64>> {
        (self.f)(start, end)
    }

    fn len(&self) -> usize {
        self.len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(w: usize, s: usize) -> DetectorConfig {
        DetectorConfig::new(w, s).unwrap()
    }

    #[test]
    fn spans_and_tail_clamp() {
        assert_eq!(window_spans(10, cfg(5, 5)), vec![(0, 5), (5, 10)]);
        assert_eq!(window_spans(12, cfg(5, 5)), vec![(0, 5), (5, 10), (7, 12)]);
        assert_eq!(window_spans(3, cfg(5, 2)), vec![(0, 3)]);
    }

    #[test]
    fn config_bounds() {
        assert!(DetectorConfig::new(4, 1).is_err());
        assert!(DetectorConfig::new(41, 1).is_err());
        assert!(DetectorConfig::new(10, 11).is_err());
        assert!(DetectorConfig::new(10, 0).is_err());
    }

    #[test]
    fn fusion_examples() {
        let one = [ScoredWindow { start: 0, end: 2, probs: vec![0.1, 0.9] }];
        assert_eq!(fuse_labels(&one, 2).unwrap(), vec![1, 1]);
        let two = [
            ScoredWindow { start: 0, end: 1, probs: vec![0.6, 0.4] },
            ScoredWindow { start: 0, end: 1, probs: vec![0.2, 0.8] },
        ];
        assert_eq!(fuse_labels(&two, 1).unwrap(), vec![1]);
        let tie = [ScoredWindow { start: 0, end: 1, probs: vec![0.5, 0.5] }];
        assert_eq!(fuse_labels(&tie, 1).unwrap(), vec![0]);
        assert!(fuse_labels(&one, 3).is_err());
    }

    #[test]
    fn segment_extraction() {
        assert_eq!(extract_segments(&[3; 7], None), vec![Segment { start: 0, end: 7, class: 3 }]);
        assert_eq!(
            extract_segments(&[0, 0, 1, 1, 1, 0], Some(0)),
            vec![Segment { start: 2, end: 5, class: 1 }]
        );
    }

    #[test]
    fn single_candidate_is_returned() {
        let v = FnScorer { len: 20, f: |_, _| Ok(vec![0.0, 1.0]) };
        let truth = vec![vec![Segment { start: 0, end: 20, class: 1 }]];
        let r = grid_search(&[v], &truth, &[5], 0.5, None).unwrap();
        assert_eq!(r.surface.len(), 5);
        assert_eq!(r.best.config, cfg(5, 1));
        assert_eq!(r.best.f1, 1.0);
    }
}
