use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use bistream::cli::run;
use bistream::dataset;
use bistream_core::eval::{f1_at_iou, without_class, DetectionCounts};

fn bistream(args: &[&str]) -> i32 {
    let mut full = vec!["bistream"];
    full.extend_from_slice(args);
    run(full)
}

fn ok(args: &[&str]) {
    assert_eq!(bistream(args), 0, "command failed: {args:?}");
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Relative path to file bytes for everything under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const SMALL_DATA: &[&str] = &[
    "--train", "12", "--test", "6", "--videos", "2", "--segments", "3", "--min-duration", "6", "--max-duration", "10",
    "--heatmap-train", "24", "--heatmap-test", "8", "--min-len", "5", "--max-len", "9",
];

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    model: PathBuf,
    generator: PathBuf,
    data_snapshot: BTreeMap<PathBuf, Vec<u8>>,
}

/// A small generated dataset with a generator and a recognizer trained on
/// it, shared by the tests below.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        let mut args = vec!["gen-data", "--seed", "7", "--out", p(&data)];
        args.extend_from_slice(SMALL_DATA);
        ok(&args);
        let data_snapshot = tree(&data);
        let generator = root.join("gen");
        ok(&[
            "train-gan", "--data", p(&data), "--out", p(&generator), "--epochs", "1", "--pretrain-epochs", "2", "--n-critic", "2",
        ]);
        let model = root.join("model");
        ok(&[
            "train", "--data", p(&data), "--out", p(&model), "--variant", "bi-stream+att", "--epochs", "1", "--gamma-ramp", "2",
            "--accumulation", "4",
        ]);
        Fixture {
            _dir: dir,
            root,
            data,
            model,
            generator,
            data_snapshot,
        }
    })
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut args = vec!["gen-data", "--seed", "3", "--out", p(out)];
        args.extend_from_slice(SMALL_DATA);
        ok(&args);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() > 10);
    assert_eq!(ta, tb);
    let cfg = fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(cfg.contains("seed=3\n") && cfg.contains("train=12\n"), "{cfg}");
    // balanced classes: 12 samples over 6 classes
    let labels: Vec<usize> = dataset::read_samples(&a.join("train")).unwrap().iter().map(|s| s.sample.label).collect();
    for k in 0..6 {
        assert_eq!(labels.iter().filter(|&&l| l == k).count(), 2);
    }
}

#[test]
fn training_writes_checkpoint_metrics_and_snapshot() {
    let f = fixture();
    for file in ["model.txt", "manifest.txt", "loss.csv", "metrics.json", "config.txt"] {
        assert!(f.model.join(file).exists(), "{file}");
    }
    let loss = fs::read_to_string(f.model.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 3);
    let m = json(&f.model.join("metrics.json"));
    assert_eq!(m["test_samples"], 6);
    let acc = m["test_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let g = json(&f.generator.join("metrics.json"));
    assert_eq!(g["test_samples"], 8);
    assert!(g["generator_error_px"].as_f64().unwrap().is_finite());
    // unset flags take their defaults: a 0.5% labelled subset
    let snap = fs::read_to_string(f.generator.join("config.txt")).unwrap();
    assert!(snap.lines().any(|l| l == "labelled-fraction=0.005"), "{snap}");
}

#[test]
fn recognize_reports_distributions() {
    let f = fixture();
    let out = f.root.join("rec");
    ok(&["recognize", "--model", p(&f.model), "--input", p(&f.data.join("test")), "--out", p(&out)]);
    let text = fs::read_to_string(out.join("predictions.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let probs: Vec<f64> = row.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
        assert_eq!(probs.len(), 6);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert_eq!(json(&out.join("summary.json"))["samples"], 6);
}

#[test]
fn detect_emits_tiling_segments_and_summary() {
    let f = fixture();
    let video = f.data.join("videos").join("000");
    let out = f.root.join("det");
    ok(&["detect", "--model", p(&f.model), "--video", p(&video), "--window", "6", "--stride", "3", "--out", p(&out)]);
    let segs = dataset::read_segments(&out.join("segments.csv")).unwrap();
    let frames = dataset::read_sample(&video).unwrap().sample.len();
    assert_eq!(segs.first().unwrap().start, 0);
    assert_eq!(segs.last().unwrap().end, frames);
    assert!(segs.windows(2).all(|w| w[0].end == w[1].start && w[0].class != w[1].class));
    let s = json(&out.join("summary.json"));
    assert_eq!(s["window"], 6);
    assert_eq!(s["stride"], 3);
    assert_eq!(s["frames"], frames);
    let total: u64 = s["segments_per_class"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total as usize, segs.len());
}

#[test]
fn gridsearch_best_matches_offline_rescoring() {
    let f = fixture();
    let out = f.root.join("grid");
    ok(&[
        "gridsearch", "--model", p(&f.model), "--videos", p(&f.data.join("videos")), "--min-window", "5", "--max-window", "8",
        "--out", p(&out),
    ]);
    let surface = fs::read_to_string(out.join("surface.csv")).unwrap();
    // strides 1..=w for w in 5..=8
    assert_eq!(surface.lines().count(), 1 + 5 + 6 + 7 + 8);
    let best = json(&out.join("best.json"));
    let (w, s) = (best["window"].as_u64().unwrap(), best["stride"].as_u64().unwrap());
    let max_f1 = surface
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .fold(f64::MIN, f64::max);
    assert_eq!(best["f1"].as_f64().unwrap(), max_f1);

    // re-run detection with the reported config and score it independently
    let mut counts = DetectionCounts::default();
    for video in dataset::sample_dirs(&f.data.join("videos")).unwrap() {
        let det = f.root.join(format!("regrid-{}", video.file_name().unwrap().to_string_lossy()));
        ok(&["detect", "--model", p(&f.model), "--video", p(&video), "--window", &w.to_string(), "--stride", &s.to_string(), "--out", p(&det)]);
        let pred = without_class(&dataset::read_segments(&det.join("segments.csv")).unwrap(), 0);
        let truth = without_class(&dataset::read_segments(&video.join("segments.csv")).unwrap(), 0);
        counts.add(f1_at_iou(&pred, &truth, 0.5).unwrap().counts);
    }
    assert_eq!(counts.f1(), best["f1"].as_f64().unwrap());
    assert_eq!(counts.tp as u64, best["tp"].as_u64().unwrap());
}

#[test]
fn eval_detection_and_transitions() {
    let f = fixture();
    let video = f.data.join("videos").join("001");
    let out = f.root.join("eval-self");
    ok(&["eval", "--pred", p(&video), "--truth", p(&video), "--out", p(&out)]);
    let m = json(&out.join("metrics.json"));
    assert_eq!(m["f1"], 1.0);
    assert_eq!(m["frame_accuracy"], 1.0);
    let sweep = fs::read_to_string(out.join("iou_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 10);

    let out = f.root.join("eval-trans");
    ok(&["eval", "--task", "transitions", "--truth", p(&f.data.join("videos")), "--out", p(&out)]);
    let text = fs::read_to_string(out.join("transitions.csv")).unwrap();
    for row in text.lines().skip(1) {
        let sum: f64 = row.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!(sum == 0.0 || (sum - 100.0).abs() < 0.1, "{row}");
    }
}

#[test]
fn viz_attention_writes_maps_and_weights() {
    let f = fixture();
    let sample = dataset::sample_dirs(&f.data.join("test")).unwrap().remove(0);
    let len = dataset::read_sample(&sample).unwrap().sample.len();
    let out = f.root.join("viz");
    ok(&["viz-attention", "--model", p(&f.model), "--sample", p(&sample), "--out", p(&out)]);
    let pgms = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm")).count();
    assert_eq!(pgms, 2 * len);
    let first = fs::read(out.join("frame000-stage1.pgm")).unwrap();
    assert!(first.starts_with(b"P5\n8 8\n255\n"));
    let weights = fs::read_to_string(out.join("temporal_weights.csv")).unwrap();
    let sum: f64 = weights.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-5);
}

#[test]
fn generator_substitution_is_carried_by_the_model() {
    let f = fixture();
    let model = f.root.join("model-gen");
    ok(&[
        "train", "--data", p(&f.data), "--out", p(&model), "--variant", "pose-stream", "--epochs", "1", "--gamma-ramp", "1",
        "--generator", p(&f.generator),
    ]);
    assert!(model.join("generator").join("manifest.txt").exists());
    let cfg = fs::read_to_string(model.join("model.txt")).unwrap();
    assert!(cfg.contains("generator=true"));
    let out = f.root.join("rec-gen");
    ok(&["recognize", "--model", p(&model), "--input", p(&f.data.join("test")), "--out", p(&out)]);
}

#[test]
fn config_file_merging() {
    let f = fixture();
    let cfg = f.root.join("eval.cfg");
    fs::write(&cfg, "iou=0.3\nkeep-background=true\n").unwrap();
    let video = f.data.join("videos").join("000");
    let out = f.root.join("eval-cfg");
    ok(&["eval", "--config", p(&cfg), "--iou", "0.7", "--pred", p(&video), "--truth", p(&video), "--out", p(&out)]);
    let snap = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(snap.contains("iou=0.7\n") && snap.contains("keep-background=true\n"), "{snap}");

    fs::write(&cfg, "iou=0.3\nwindow=4\n").unwrap();
    let out = f.root.join("eval-bad");
    assert_eq!(bistream(&["eval", "--config", p(&cfg), "--pred", p(&video), "--truth", p(&video), "--out", p(&out)]), 1);
}

#[test]
fn commands_do_not_modify_inputs() {
    let f = fixture();
    // run something that reads data after the fixture has trained on it
    let out = f.root.join("rec-again");
    ok(&["recognize", "--model", p(&f.model), "--input", p(&f.data.join("videos").join("000")), "--out", p(&out)]);
    assert_eq!(tree(&f.data), f.data_snapshot);
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bistream")).args(args).output().unwrap()
}

#[test]
fn exit_codes_and_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary(&["detect", "--bogus-flag", "1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = binary(&["detect", "--model", p(&dir.path().join("missing")), "--video", "v", "--window", "5", "--stride", "1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].contains("does not exist"));

    let out = binary(&["gen-data", "--out", p(&dir.path().join("d")), "--train", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}
