//! Property tests for attention, subsampling, detection fusion, segment
//! metrics and the synthetic generator.

use bistream_core::attention::{NonLocalBlock, TemporalAttention};
use bistream_core::detector::{extract_segments, fuse_labels, window_spans, DetectorConfig, ScoredWindow};
use bistream_core::eval::{f1_at_iou, segment_iou, transition_matrix, Segment};
use bistream_core::streams::{subsample_indices, subsample_sequence};
use bistream_core::synth::{frame_labels, gen_sequence, ActivityScript, SynthConfig};
use bistream_core::{rng, Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn block(channels: usize, gamma: f64, seed: u64) -> (ParamStore<f64>, NonLocalBlock) {
    let mut store = ParamStore::new();
    let mut b = NonLocalBlock::new(&mut store, "nl", channels, &mut rng::seeded(seed)).unwrap();
    b.gamma = gamma;
    (store, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn zero_gamma_nonlocal_is_bitwise_identity(
        seed in any::<u64>(), t in 1usize..3, half in 1usize..4, h in 1usize..4, w in 1usize..4,
    ) {
        let (store, b) = block(2 * half, 0.0, seed);
        let x = uniform(&[t, 2 * half, h, w], seed.wrapping_add(1));
        prop_assert_eq!(b.apply(&store, &x).unwrap(), x);
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..9, spread in 0.1f64..30.0) {
        let mut g = Graph::<f64>::inference();
        let x = g.constant(uniform(&[rows, cols], seed).map(|v| v * spread));
        let s = g.softmax(x).unwrap();
        for row in g.value(s).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn temporal_attention_stays_in_convex_hull(seed in any::<u64>(), t in 1usize..8, hidden in 1usize..6) {
        let mut store = ParamStore::new();
        let att = TemporalAttention::new(&mut store, "att", hidden, &mut rng::seeded(seed));
        let states: Vec<Tensor<f64>> = (0..t).map(|i| uniform(&[1, hidden], seed ^ (i as u64 + 1)).map(|v| 3.0 * v)).collect();
        let mut g = Graph::inference();
        let vars: Vec<_> = states.iter().map(|s| g.constant(s.clone())).collect();
        let (out, w) = att.forward(&mut g, &store, &vars).unwrap();
        prop_assert!((g.value(w).data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (k, &v) in g.value(out).data().iter().enumerate() {
            let lo = states.iter().map(|s| s.data()[k]).fold(f64::INFINITY, f64::min);
            let hi = states.iter().map(|s| s.data()[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn subsampling_is_bounded_and_idempotent(len in 1usize..400, limit in 1usize..60) {
        let once = subsample_sequence(&(0..len).collect::<Vec<_>>(), limit);
        prop_assert!(once.len() <= limit);
        prop_assert_eq!(once[0], 0);
        prop_assert_eq!(subsample_sequence(&once, limit), once.clone());
        if len <= limit {
            prop_assert_eq!(once.len(), len);
        }
        prop_assert_eq!(subsample_indices(len, limit), once);
    }

    #[test]
    fn windows_cover_every_frame(len in 1usize..200, window in 5usize..=40, stride_frac in 0.0f64..1.0) {
        let stride = 1 + (stride_frac * (window - 1) as f64) as usize;
        let spans = window_spans(len, DetectorConfig::new(window, stride).unwrap());
        let mut covered = vec![0usize; len];
        for &(s, e) in &spans {
            prop_assert!(s < e && e <= len);
            prop_assert_eq!(e - s, window.min(len));
            covered[s..e].iter_mut().for_each(|c| *c += 1);
        }
        prop_assert!(covered.iter().all(|&c| c >= 1));
        prop_assert_eq!(spans.last().unwrap().1, len);
    }

    #[test]
    fn fused_labels_match_per_frame_enumeration(
        seed in any::<u64>(), len in 1usize..60, window in 5usize..=12, stride in 1usize..=5, classes in 2usize..5,
    ) {
        let mut r = rng::seeded(seed);
        let cfg = DetectorConfig::new(window, stride.min(window)).unwrap();
        // coarse probabilities make ties common, exercising the tie rule
        let windows: Vec<ScoredWindow> = window_spans(len, cfg)
            .into_iter()
            .map(|(start, end)| {
                let raw: Vec<f64> = (0..classes).map(|_| r.random_range(0..4) as f64).collect();
                let z: f64 = raw.iter().sum::<f64>().max(1.0);
                ScoredWindow { start, end, probs: raw.iter().map(|v| v / z).collect() }
            })
            .collect();
        let got = fuse_labels(&windows, len).unwrap();
        for t in 0..len {
            let covering: Vec<&ScoredWindow> = windows.iter().filter(|w| w.start <= t && t < w.end).collect();
            let mean: Vec<f64> = (0..classes)
                .map(|k| covering.iter().map(|w| w.probs[k]).sum::<f64>() / covering.len() as f64)
                .collect();
            let best = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let want = mean.iter().position(|&v| v == best).unwrap();
            prop_assert_eq!(got[t], want, "frame {}", t);
        }
    }

    #[test]
    fn segments_round_trip_labels(labels in proptest::collection::vec(0usize..4, 1..80)) {
        let segs = extract_segments(&labels, None);
        prop_assert_eq!(frame_labels(&segs), labels.clone());
        prop_assert!(segs.windows(2).all(|w| w[0].end == w[1].start && w[0].class != w[1].class));
        let kept = extract_segments(&labels, Some(0));
        prop_assert!(kept.iter().all(|s| s.class != 0));
        prop_assert_eq!(kept.len(), segs.iter().filter(|s| s.class != 0).count());
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in 0usize..50, la in 1usize..30, b in 0usize..50, lb in 1usize..30) {
        let (s, t) = (Segment::new(a, a + la, 1).unwrap(), Segment::new(b, b + lb, 1).unwrap());
        let (x, y) = (segment_iou(&s, &t), segment_iou(&t, &s));
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(segment_iou(&s, &s), 1.0);
    }

    #[test]
    fn f1_is_monotone_in_threshold(pred in segment_lists(), truth in segment_lists()) {
        let mut last = f64::INFINITY;
        for step in 1..=9 {
            let f1 = f1_at_iou(&pred, &truth, step as f64 / 10.0).unwrap().f1;
            prop_assert!(f1 <= last + 1e-15);
            last = f1;
        }
    }

    #[test]
    fn greedy_matching_equals_exhaustive(pred in segment_lists(), truth in segment_lists(), th in 0.05f64..0.95) {
        let ious: Vec<f64> = pred
            .iter()
            .flat_map(|p| truth.iter().filter(move |t| t.class == p.class).map(move |t| segment_iou(p, t)))
            .filter(|&v| v >= th)
            .collect();
        let mut sorted = ious.clone();
        sorted.sort_by(f64::total_cmp);
        // only instances whose candidate IoUs are distinct
        prop_assume!(sorted.windows(2).all(|w| w[0] != w[1]));
        let greedy = f1_at_iou(&pred, &truth, th).unwrap().counts.tp;
        prop_assert_eq!(greedy, exhaustive_matches(&pred, &truth, th));
    }

    #[test]
    fn transition_rows_sum_to_one_hundred(seed in any::<u64>(), n in 2usize..30) {
        let script = ActivityScript::sample(None, n, (1, 3), seed).unwrap();
        let mut start = 0;
        let segs: Vec<Segment> = script
            .entries
            .iter()
            .map(|&(c, d)| {
                let s = Segment::new(start, start + d, c).unwrap();
                start += d;
                s
            })
            .collect();
        let m = transition_matrix(&[segs], 6).unwrap();
        for a in 0..6 {
            let sum: f64 = m.row(a).iter().sum();
            prop_assert!(sum == 0.0 || (sum - 100.0).abs() < 0.1);
        }
    }
}

/// Up to six segments over a short timeline with random classes.
fn segment_lists() -> impl Strategy<Value = Vec<Segment>> {
    proptest::collection::vec((0usize..40, 1usize..15, 1usize..3), 0..=6)
        .prop_map(|v| v.into_iter().map(|(s, l, c)| Segment::new(s, s + l, c).unwrap()).collect())
}

/// Largest number of disjoint same-class pairs with IoU at least `th`, by
/// trying every assignment.
fn exhaustive_matches(pred: &[Segment], truth: &[Segment], th: f64) -> usize {
    fn go(i: usize, pred: &[Segment], truth: &[Segment], used: &mut Vec<bool>, th: f64) -> usize {
        if i == pred.len() {
            return 0;
        }
        let mut best = go(i + 1, pred, truth, used, th);
        for j in 0..truth.len() {
            if !used[j] && pred[i].class == truth[j].class && segment_iou(&pred[i], &truth[j]) >= th {
                used[j] = true;
                best = best.max(1 + go(i + 1, pred, truth, used, th));
                used[j] = false;
            }
        }
        best
    }
    go(0, pred, truth, &mut vec![false; truth.len()], th)
}

/// Non-local output at permuted positions equals the permuted output.
#[test]
fn nonlocal_is_position_equivariant() {
    let (store, b) = block(4, 0.7, 3);
    let (t, c, h, w) = (2, 4, 3, 2);
    let n = t * h * w;
    let x = uniform(&[t, c, h, w], 9);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut r = rng::seeded(4);
    for i in (1..n).rev() {
        perm.swap(i, r.random_range(0..=i));
    }
    // flat position p = (ti, hi, wi); element (ti, ch, hi, wi)
    let at = |p: usize, ch: usize| {
        let (ti, rest) = (p / (h * w), p % (h * w));
        ti * c * h * w + ch * h * w + rest
    };
    let mut xp = Tensor::zeros(&[t, c, h, w]);
    for p in 0..n {
        for ch in 0..c {
            xp.data_mut()[at(perm[p], ch)] = x.data()[at(p, ch)];
        }
    }
    let (y, yp) = (b.apply(&store, &x).unwrap(), b.apply(&store, &xp).unwrap());
    for p in 0..n {
        for ch in 0..c {
            assert!((yp.data()[at(perm[p], ch)] - y.data()[at(p, ch)]).abs() < 1e-12);
        }
    }
}

#[test]
fn synthetic_samples_obey_value_and_length_contracts() {
    let cfg = SynthConfig {
        max_len: 90,
        ..SynthConfig::default()
    };
    for class in 0..6 {
        for seed in 0..4u64 {
            let clip = gen_sequence(class, &cfg, seed).unwrap();
            let s = &clip.sample;
            assert!((cfg.min_len..=cfg.max_len).contains(&s.len()));
            assert!(s.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
            for m in [&s.joint_map, &s.object_map] {
                assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
            }
            assert!(subsample_indices(s.len(), 40).len() <= 40);
        }
    }
}
