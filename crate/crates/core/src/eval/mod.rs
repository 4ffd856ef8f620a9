//! Frame accuracy, segment IoU, F1 at an IoU threshold, transition matrices
//! and the ablation table.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};

mod ablation;
pub use ablation::{ablation_run, AblationRow, AblationTable, Variant};

/// Frames `start..end` labelled `class`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize, class: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::contract("segment", format!("empty span {start}..{end}")));
        }
        Ok(Segment { start, end, class })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Segments whose class differs from `class`.
pub fn without_class(segments: &[Segment], class: usize) -> Vec<Segment> {
    segments.iter().copied().filter(|s| s.class != class).collect()
}

/// Fraction of frames where the labels agree.
pub fn frame_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::contract(
            "frame_accuracy",
            format!("length mismatch: {} predicted vs {} true", pred.len(), truth.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::contract("frame_accuracy", "empty label sequences"));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Temporal intersection over union, ignoring class.
pub fn segment_iou(a: &Segment, b: &Segment) -> f64 {
    let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start));
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// True/false positive and false negative counts. Counts from several
/// videos can be summed before computing scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl DetectionCounts {
    pub fn add(&mut self, other: DetectionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    fn both_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn precision(&self) -> f64 {
        match (self.both_empty(), self.tp + self.fp) {
            (true, _) => 1.0,
            (false, 0) => 0.0,
            (false, n) => self.tp as f64 / n as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        match (self.both_empty(), self.tp + self.fn_) {
            (true, _) => 1.0,
            (false, 0) => 0.0,
            (false, n) => self.tp as f64 / n as f64,
        }
    }

    /// `2PR / (P + R)`; 1 when there is nothing to detect and nothing was
    /// detected, 0 whenever no prediction matched.
    pub fn f1(&self) -> f64 {
        if self.both_empty() {
            return 1.0;
        }
        if self.tp == 0 {
            return 0.0;
        }
        let (p, r) = (self.precision(), self.recall());
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: DetectionCounts,
    /// `(pred index, truth index, IoU)` for each matched pair.
    pub matches: Vec<(usize, usize, f64)>,
}

impl F1Report {
    /// Mean IoU over matched pairs, if any matched.
    pub fn mean_matched_iou(&self) -> Option<f64> {
        if self.matches.is_empty() {
            return None;
        }
        Some(self.matches.iter().map(|m| m.2).sum::<f64>() / self.matches.len() as f64)
    }
}

/// Greedy one-to-one matching: same-class pairs with IoU at least
/// `threshold` are taken in descending IoU order (ties by prediction, then
/// truth index). Every segment given takes part; filter background first
/// with [`without_class`] if it should not count.
pub fn f1_at_iou(pred: &[Segment], truth: &[Segment], threshold: f64) -> Result<F1Report> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::contract("f1_at_iou", format!("threshold must be in (0, 1], got {threshold}")));
    }
    let mut candidates = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            if p.class != t.class {
                continue;
            }
            let iou = segment_iou(p, t);
            if iou >= threshold {
                candidates.push((i, j, iou));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut pred_used = vec![false; pred.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut matches = Vec::new();
    for (i, j, iou) in candidates {
        if !pred_used[i] && !truth_used[j] {
            pred_used[i] = true;
            truth_used[j] = true;
            matches.push((i, j, iou));
        }
    }
    let counts = DetectionCounts {
        tp: matches.len(),
        fp: pred.len() - matches.len(),
        fn_: truth.len() - matches.len(),
    };
    Ok(F1Report {
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        counts,
        matches,
    })
}

/// Row-normalised percentages of class `a` being followed by class `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub classes: usize,
    /// Raw transition counts, row-major `[from][to]`.
    pub counts: Vec<usize>,
    /// Row percentages, row-major; rows without transitions are zero.
    pub percent: Vec<f64>,
}

impl TransitionMatrix {
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.percent[from * self.classes + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.percent[from * self.classes..(from + 1) * self.classes]
    }

    /// CSV with a header row of class names and one row per source class.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut out = String::from("from");
        for n in names.iter().take(self.classes) {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for a in 0..self.classes {
            out.push_str(names.get(a).copied().unwrap_or("?"));
            for v in self.row(a) {
                let _ = write!(out, ",{v:.2}");
            }
            out.push('\n');
        }
        out
    }
}

/// Count consecutive class changes within each video. Each inner list must
/// be sorted by start; neighbours of equal class are not transitions.
pub fn transition_matrix(videos: &[Vec<Segment>], classes: usize) -> Result<TransitionMatrix> {
    let mut counts = vec![0usize; classes * classes];
    for segs in videos {
        for pair in segs.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b.start < a.start {
                return Err(Error::contract("transition_matrix", "segments not sorted by start"));
            }
            if a.class >= classes || b.class >= classes {
                return Err(Error::contract("transition_matrix", format!("class out of range for {classes} classes")));
            }
            if a.class != b.class {
                counts[a.class * classes + b.class] += 1;
            }
        }
    }
    let mut percent = vec![0.0; classes * classes];
    for a in 0..classes {
        let row = &counts[a * classes..(a + 1) * classes];
        let total: usize = row.iter().sum();
        if total > 0 {
            for (p, &c) in percent[a * classes..(a + 1) * classes].iter_mut().zip(row) {
                *p = 100.0 * c as f64 / total as f64;
            }
        }
    }
    Ok(TransitionMatrix { classes, counts, percent })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(s: usize, e: usize, c: usize) -> Segment {
        Segment::new(s, e, c).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(frame_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(frame_accuracy(&[1, 1], &[2, 2]).unwrap(), 0.0);
        let truth = [0, 1, 2, 3, 4, 5, 0, 1, 2, 3];
        let mut pred = truth;
        for p in pred.iter_mut().skip(5) {
            *p = 9;
        }
        assert_eq!(frame_accuracy(&pred, &truth).unwrap(), 0.5);
        assert!(frame_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn iou_examples() {
        assert_eq!(segment_iou(&seg(3, 9, 0), &seg(3, 9, 4)), 1.0);
        assert_eq!(segment_iou(&seg(0, 5, 1), &seg(5, 9, 1)), 0.0);
        // frames 5..10 shared out of 0..15
        let v = segment_iou(&seg(0, 10, 1), &seg(5, 15, 1));
        assert!((v - 5.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_detection() {
        let t = [seg(0, 5, 1), seg(5, 9, 2)];
        let r = f1_at_iou(&t, &t, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn one_of_two_found() {
        let truth = [seg(0, 10, 1), seg(10, 20, 2)];
        let r = f1_at_iou(&[seg(1, 10, 1)], &truth, 0.5).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_conventions() {
        assert_eq!(f1_at_iou(&[], &[], 0.5).unwrap().f1, 1.0);
        assert_eq!(f1_at_iou(&[seg(0, 2, 1)], &[], 0.5).unwrap().f1, 0.0);
        assert_eq!(f1_at_iou(&[], &[seg(0, 2, 1)], 0.5).unwrap().f1, 0.0);
        assert!(f1_at_iou(&[], &[], 0.0).is_err());
        assert!(f1_at_iou(&[], &[], 1.5).is_err());
    }

    #[test]
    fn class_must_match() {
        let r = f1_at_iou(&[seg(0, 10, 2)], &[seg(0, 10, 1)], 0.5).unwrap();
        assert_eq!(r.counts, DetectionCounts { tp: 0, fp: 1, fn_: 1 });
    }

    #[test]
    fn transition_examples() {
        let m = transition_matrix(&[vec![seg(0, 4, 2)]], 6).unwrap();
        assert!(m.percent.iter().all(|&v| v == 0.0));
        let abab = vec![seg(0, 2, 1), seg(2, 4, 2), seg(4, 6, 1), seg(6, 8, 2)];
        let m = transition_matrix(&[abab], 3).unwrap();
        assert_eq!(m.get(1, 2), 100.0);
        assert_eq!(m.get(2, 1), 100.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert!(transition_matrix(&[], 4).unwrap().percent.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transition_csv_has_header() {
        let m = transition_matrix(&[vec![seg(0, 1, 0), seg(1, 2, 1)]], 2).unwrap();
        let csv = m.to_csv(&["a", "b"]);
        assert_eq!(csv, "from,a,b\na,0.00,100.00\nb,0.00,0.00\n");
    }
}
