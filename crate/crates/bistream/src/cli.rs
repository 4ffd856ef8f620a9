//! The `bistream` command line: data generation, training, inference,
//! detection, evaluation and attention visualisation.
//!
//! Every command takes `--out`, `--seed` and `--config`; the resolved
//! settings are written to `<out>/config.txt`. Settings in a config file use
//! the flag names without the leading dashes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use bistream_core::detector::{self, DetectorConfig, NetScorer, MAX_WINDOW, MIN_WINDOW};
use bistream_core::eval::{self, ablation_run, AblationTable, DetectionCounts, Segment};
use bistream_core::pose::{
    argmax_decode, pretrain_generator, synth_heatmap, train_gan, GanConfig, Generator, HeatmapNoise, HeatmapSample,
};
use bistream_core::streams::{
    prepare, prepare_full, substitute_joint_map, train_recognizer, BiStreamNet, InputSpec, NetConfig, PreparedSample,
    Readout, TrainConfig, Variant, FRAME_LIMIT,
};
use bistream_core::synth::{
    dataset_plan, gen_heatmap_set, gen_sequence, gen_untrimmed, shelf_transition_bias, ActivityScript, SynthConfig,
};
use bistream_core::{attention, nn::AdamConfig, rng, Tensor, CLASS_NAMES, NUM_CLASSES};

use crate::checkpoint::{load_generator, save_generator, Recognizer};
use crate::dataset::{self, StoredSample};
use crate::settings::{parse_list, render_list, write_kv, Resolver};
use crate::{fsutil, pgm};

pub const CONFIG_SNAPSHOT: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(name = "bistream", version, about = "Bi-stream attentive action detection pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate trimmed train/test splits, untrimmed videos and heatmap sets.
    GenData(GenDataArgs),
    /// Train the joint regressor (supervised warm start, then WGAN-GP).
    TrainGan(TrainGanArgs),
    /// Train a recognizer on a generated dataset.
    Train(TrainArgs),
    /// Classify trimmed samples with a trained recognizer.
    Recognize(RecognizeArgs),
    /// Sliding-window detection on one untrimmed video.
    Detect(DetectArgs),
    /// Search window and stride for the best F1 over a set of videos.
    Gridsearch(GridArgs),
    /// Detection metrics, transition matrices or the variant ablation.
    Eval(EvalArgs),
    /// Export pose-stream attention maps and temporal weights.
    VizAttention(VizArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed; all randomness of the run derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// key=value settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trimmed training samples.
    #[arg(long)]
    pub train: Option<usize>,
    /// Trimmed test samples.
    #[arg(long)]
    pub test: Option<usize>,
    /// Untrimmed videos.
    #[arg(long)]
    pub videos: Option<usize>,
    /// Activities per untrimmed video.
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub min_duration: Option<usize>,
    #[arg(long)]
    pub max_duration: Option<usize>,
    /// Draw video scripts from the shelf transition bias instead of uniformly.
    #[arg(long)]
    pub biased: Option<bool>,
    #[arg(long)]
    pub heatmap_train: Option<usize>,
    #[arg(long)]
    pub heatmap_test: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub joint_radius: Option<usize>,
    #[arg(long)]
    pub object_box: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainGanArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset root written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Adversarial epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_lr: Option<f64>,
    /// Fraction of training samples whose joints are used as labels.
    #[arg(long)]
    pub labelled_fraction: Option<f64>,
    #[arg(long)]
    pub lambda_gp: Option<f64>,
    #[arg(long)]
    pub n_critic: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Weight of the supervised coordinate term in the generator loss.
    #[arg(long)]
    pub anchor: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Search radius of the heatmap-argmax baseline, in pixels.
    #[arg(long)]
    pub baseline_radius: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NetArgs {
    /// raw-frame, pose-stream, object-map, bi-stream or bi-stream+att.
    #[arg(long)]
    pub variant: Option<String>,
    /// Epochs with the non-local contribution held at zero.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs over which the non-local contribution ramps to one.
    #[arg(long)]
    pub gamma_ramp: Option<usize>,
    /// Samples per optimizer step.
    #[arg(long)]
    pub accumulation: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Average-pooling factor applied to inputs.
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// flatten or gap.
    #[arg(long)]
    pub readout: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub net: NetArgs,
    /// Dataset root written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generator checkpoint; its joint estimates replace the joint maps.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    /// Disk radius when redrawing joint maps from generator output.
    #[arg(long)]
    pub joint_radius: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RecognizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// A sample directory or a directory of samples.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Untrimmed video directory.
    #[arg(long)]
    pub video: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// IoU threshold for scoring against the video's segments, if present.
    #[arg(long)]
    pub iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory of untrimmed videos with ground-truth segments.
    #[arg(long)]
    pub videos: Option<PathBuf>,
    #[arg(long)]
    pub min_window: Option<usize>,
    #[arg(long)]
    pub max_window: Option<usize>,
    #[arg(long)]
    pub iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// detection, transitions or ablation.
    #[arg(long)]
    pub task: Option<String>,
    /// Predicted segments: a CSV file or a directory holding segments.csv.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth segments (detection) or videos (transitions).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub iou: Option<f64>,
    /// Score the background class too.
    #[arg(long)]
    pub keep_background: Option<bool>,
    /// Dataset root (ablation).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated variants (ablation).
    #[arg(long)]
    pub variants: Option<String>,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sample directory.
    #[arg(long)]
    pub sample: Option<PathBuf>,
}

/// Parse `args` (program name first), run the command and return the exit
/// code: 0 on success, 2 for unusable flags, 1 for any other failure with
/// a single-line message on stderr.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::TrainGan(a) => train_gan_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Recognize(a) => recognize(a),
        Command::Detect(a) => detect(a),
        Command::Gridsearch(a) => gridsearch(a),
        Command::Eval(a) => eval_cmd(a),
        Command::VizAttention(a) => viz_attention(a),
    }
}

fn resolver(c: &Common) -> Result<Resolver> {
    Ok(Resolver::new(c.config.as_deref())?)
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    Ok(fsutil::write_atomic(path, text.as_bytes())?)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(fsutil::write_atomic(path, &w.into_inner()?)?)
}

/// Create the output directory and write the effective configuration.
fn finish_config(r: Resolver, out: &Path) -> Result<()> {
    let eff = r.finish()?;
    fsutil::create_dir(out)?;
    write_kv(&out.join(CONFIG_SNAPSHOT), &eff)?;
    Ok(())
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(path)
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut r = resolver(&a.common)?;
    let seed = r.value("seed", a.common.seed, 7u64)?;
    let n_train = r.value("train", a.train, 300usize)?;
    let n_test = r.value("test", a.test, 60usize)?;
    let n_videos = r.value("videos", a.videos, 10usize)?;
    let n_segments = r.value("segments", a.segments, 8usize)?;
    let min_d = r.value("min-duration", a.min_duration, 20usize)?;
    let max_d = r.value("max-duration", a.max_duration, 40usize)?;
    let biased = r.value("biased", a.biased, true)?;
    let hm_train = r.value("heatmap-train", a.heatmap_train, 500usize)?;
    let hm_test = r.value("heatmap-test", a.heatmap_test, 200usize)?;
    let base = SynthConfig::default();
    let cfg = SynthConfig {
        height: r.value("height", a.height, base.height)?,
        width: r.value("width", a.width, base.width)?,
        min_len: r.value("min-len", a.min_len, base.min_len)?,
        max_len: r.value("max-len", a.max_len, base.max_len)?,
        joint_radius: r.value("joint-radius", a.joint_radius, base.joint_radius)?,
        object_box: r.value("object-box", a.object_box, base.object_box)?,
        seed,
        ..base
    };
    cfg.validate()?;
    let out = a.common.out;
    finish_config(r, &out)?;
    let noise = HeatmapNoise::default();

    let plan = dataset_plan(seed, n_train, n_test)?;
    for (split, items) in [("train", &plan.train), ("test", &plan.test)] {
        for (i, &(class, s)) in items.iter().enumerate() {
            let clip = gen_sequence(class, &cfg, s)?;
            let heatmap = sequence_heatmaps(&clip.joints, &cfg, &noise, s)?;
            let stored = StoredSample {
                sample: clip.sample,
                joints: clip.joints,
                heatmap,
                segments: None,
            };
            dataset::write_sample(&out.join(split).join(format!("{i:06}")), &stored)?;
        }
        log::info!("wrote {} {split} samples", items.len());
    }

    let bias = shelf_transition_bias();
    let script_seed = rng::derive(seed, rng::label("script"));
    let video_seed = rng::derive(seed, rng::label("video"));
    for i in 0..n_videos as u64 {
        let script = ActivityScript::sample(biased.then_some(bias.as_slice()), n_segments, (min_d, max_d), rng::derive(script_seed, i))?;
        let v = gen_untrimmed(&script, &cfg, rng::derive(video_seed, i))?;
        let heatmap = sequence_heatmaps(&v.clip.joints, &cfg, &noise, rng::derive(video_seed, i))?;
        let stored = StoredSample {
            sample: v.clip.sample,
            joints: v.clip.joints,
            heatmap,
            segments: Some(v.segments),
        };
        dataset::write_sample(&out.join("videos").join(format!("{i:03}")), &stored)?;
    }
    log::info!("wrote {n_videos} untrimmed videos");

    for (split, n) in [("train", hm_train), ("test", hm_test)] {
        if n > 0 {
            let set = gen_heatmap_set(&cfg, &noise, n, rng::derive(seed, rng::label(&format!("heatmaps-{split}"))))?;
            let dir = out.join("heatmaps").join(split);
            fsutil::create_dir(&dir)?;
            dataset::write_heatmap_set(&dir, &set)?;
        }
    }
    Ok(())
}

/// Noisy heatmaps for each frame of a clip, `[T, 1, H, W]`.
fn sequence_heatmaps(
    joints: &[bistream_core::pose::JointSet],
    cfg: &SynthConfig,
    noise: &HeatmapNoise,
    seed: u64,
) -> Result<Tensor<f32>> {
    let hm_seed = rng::derive(seed, rng::label("heatmap"));
    let maps: Vec<Tensor<f32>> = joints
        .iter()
        .enumerate()
        .map(|(t, j)| synth_heatmap(j, cfg.height, cfg.width, noise, rng::derive(hm_seed, t as u64)))
        .collect();
    Ok(Tensor::stack(&maps)?)
}

fn mean_error(gen: &Generator<f32>, set: &[HeatmapSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in set {
        let est = gen.regress_joints(&s.stacked())?;
        total += est.mean_pixel_error(&s.truth, s.width(), s.height());
    }
    Ok(total / set.len() as f64)
}

fn baseline_error(set: &[HeatmapSample], radius: usize) -> Result<f64> {
    let mut total = 0.0;
    for s in set {
        let est = argmax_decode(&s.heatmap, &s.truth, radius)?;
        total += est.mean_pixel_error(&s.truth, s.width(), s.height());
    }
    Ok(total / set.len() as f64)
}

fn train_gan_cmd(a: TrainGanArgs) -> Result<()> {
    let mut r = resolver(&a.common)?;
    let seed = r.value("seed", a.common.seed, 7u64)?;
    let data = existing(r.required("data", a.data.map(|p| p.display().to_string()))?.into(), "dataset")?;
    let pre_epochs = r.value("pretrain-epochs", a.pretrain_epochs, 40usize)?;
    let pre_lr = r.value("pretrain-lr", a.pretrain_lr, 1e-3f64)?;
    let fraction = r.value("labelled-fraction", a.labelled_fraction, 0.005f64)?;
    let hidden = r.value("hidden", a.hidden, 64usize)?;
    let radius = r.value("baseline-radius", a.baseline_radius, 5usize)?;
    let base = GanConfig::default();
    let gc = GanConfig {
        lambda_gp: r.value("lambda-gp", a.lambda_gp, base.lambda_gp)?,
        lr: r.value("lr", a.lr, base.lr)?,
        n_critic: r.value("n-critic", a.n_critic, base.n_critic)?,
        epochs: r.value("epochs", a.epochs, base.epochs)?,
        batch_size: r.value("batch-size", a.batch_size, base.batch_size)?,
        anchor_weight: r.value("anchor", a.anchor, base.anchor_weight)?,
        seed: rng::derive(seed, rng::label("gan")),
        ..base
    };
    if !(0.0..=1.0).contains(&fraction) {
        bail!("labelled-fraction must lie in [0, 1], got {fraction}");
    }
    let out = a.common.out;
    finish_config(r, &out)?;

    let train = dataset::read_heatmap_set(&data.join("heatmaps").join("train"))?;
    let test_dir = data.join("heatmaps").join("test");
    let test = if test_dir.exists() { dataset::read_heatmap_set(&test_dir)? } else { Vec::new() };
    // any positive fraction keeps at least one labelled sample
    let n_lab = ((train.len() as f64 * fraction).ceil() as usize).min(train.len());
    let labelled = &train[..n_lab];
    let (h, w) = (train[0].height(), train[0].width());
    let mut gen = Generator::<f32>::new(h, w, [8, 16, 32], hidden, &mut rng::seeded(rng::derive(seed, rng::label("generator"))))?;
    let mut rows = Vec::new();
    if n_lab > 0 && pre_epochs > 0 {
        let curve = pretrain_generator(&mut gen, labelled, pre_epochs, pre_lr, gc.batch_size, rng::derive(seed, rng::label("pretrain")))?;
        for (e, l) in curve.iter().enumerate() {
            rows.push(vec!["pretrain".into(), e.to_string(), String::new(), l.to_string()]);
        }
        log::info!("pretraining done, final loss {:.5}", curve.last().copied().unwrap_or(f64::NAN));
    }
    let (_, report) = train_gan(&mut gen, &train, labelled, &gc, |e, rep, _| {
        log::info!("gan epoch {e}: critic {:.4} generator {:.4}", rep.critic_loss[e], rep.generator_loss[e]);
    })?;
    for e in 0..report.critic_loss.len() {
        rows.push(vec![
            "gan".into(),
            e.to_string(),
            report.critic_loss[e].to_string(),
            report.generator_loss[e].to_string(),
        ]);
    }
    save_generator(&out, &gen)?;
    write_csv(&out.join("loss.csv"), &["phase", "epoch", "critic", "generator"], &rows)?;
    let metrics = if test.is_empty() {
        json!({ "test_samples": 0 })
    } else {
        json!({
            "test_samples": test.len(),
            "generator_error_px": mean_error(&gen, &test)?,
            "baseline_error_px": baseline_error(&test, radius)?,
            "baseline_radius_px": radius,
        })
    };
    write_json(&out.join("metrics.json"), &metrics)
}

fn parse_variant(name: &str) -> Result<Variant> {
    Variant::from_name(name).ok_or_else(|| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        anyhow!("unknown variant {name:?} (expected one of {})", names.join(", "))
    })
}

fn parse_readout(name: &str) -> Result<Readout> {
    match name {
        "flatten" => Ok(Readout::Flatten),
        "gap" => Ok(Readout::GlobalAvgPool),
        _ => bail!("unknown readout {name:?} (expected flatten or gap)"),
    }
}

/// Network and training settings shared by `train` and `eval --task ablation`.
struct NetSettings {
    variant: Variant,
    net: NetConfig,
    train: TrainConfig,
    input: InputSpec,
}

fn net_settings(r: &mut Resolver, a: &NetArgs, seed: u64, default_variant: &str, sample_hw: (usize, usize)) -> Result<NetSettings> {
    let variant = parse_variant(&r.value("variant", a.variant.clone(), default_variant.to_string())?)?;
    let pool = r.value("pool", a.pool, 4usize)?;
    if pool == 0 || sample_hw.0 % pool != 0 || sample_hw.1 % pool != 0 {
        bail!("pool {pool} must divide the frame size {}x{}", sample_hw.0, sample_hw.1);
    }
    let base = NetConfig::default();
    let net = NetConfig {
        variant,
        hidden: r.value("hidden", a.hidden, base.hidden)?,
        readout: parse_readout(&r.value("readout", a.readout.clone(), "flatten".to_string())?)?,
        height: sample_hw.0 / pool,
        width: sample_hw.1 / pool,
        ..base
    };
    let train = TrainConfig {
        main_epochs: r.value("epochs", a.epochs, 10usize)?,
        ramp_epochs: r.value("gamma-ramp", a.gamma_ramp, 10usize)?,
        accumulation: r.value("accumulation", a.accumulation, 12usize)?,
        adam: AdamConfig {
            lr: r.value("lr", a.lr, AdamConfig::default().lr)?,
            ..AdamConfig::default()
        },
        seed: rng::derive(seed, rng::label("train")),
    };
    if train.accumulation == 0 {
        bail!("accumulation must be >= 1");
    }
    Ok(NetSettings {
        variant,
        net,
        train,
        input: InputSpec {
            pool,
            frame_limit: FRAME_LIMIT,
        },
    })
}

/// Network inputs for a stored sample, redrawing joint maps from the
/// generator when one is given. `full` keeps every frame (for sliding
/// windows); otherwise the frame limit applies.
fn prepare_stored(
    s: &StoredSample,
    input: &InputSpec,
    generator: Option<(&Generator<f32>, usize)>,
    full: bool,
) -> Result<PreparedSample> {
    let mut sample = s.sample.clone();
    if let Some((g, radius)) = generator {
        let joints = g.regress_sequence(&sample.frames, &s.heatmap)?;
        sample = substitute_joint_map(&sample, &joints, radius)?;
    }
    Ok(if full { prepare_full(&sample, input.pool)? } else { prepare(&sample, input)? })
}

fn model_inputs(m: &Recognizer, s: &StoredSample, full: bool) -> Result<PreparedSample> {
    prepare_stored(s, &m.input, m.generator.as_ref().map(|g| (g, m.joint_radius)), full)
}

/// Read and prepare every sample under `dir`, one at a time.
fn load_prepared(dir: &Path, input: &InputSpec, generator: Option<(&Generator<f32>, usize)>) -> Result<Vec<PreparedSample>> {
    dataset::sample_dirs(dir)?
        .iter()
        .map(|d| {
            let s = dataset::read_sample(d)?;
            prepare_stored(&s, input, generator, false).with_context(|| d.display().to_string())
        })
        .collect()
}

fn frame_size(dir: &Path) -> Result<(usize, usize)> {
    let first = dataset::sample_dirs(dir)?.remove(0);
    let s = dataset::read_sample(&first)?;
    Ok((s.sample.height(), s.sample.width()))
}

fn accuracy(net: &BiStreamNet<f32>, data: &[PreparedSample]) -> Result<f64> {
    let mut hits = 0;
    for s in data {
        hits += usize::from(net.predict(s)? == s.label);
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut r = resolver(&a.common)?;
    let seed = r.value("seed", a.common.seed, 7u64)?;
    let data = existing(r.required("data", a.data.map(|p| p.display().to_string()))?.into(), "dataset")?;
    let generator_dir = r.optional("generator", a.generator.map(|p| p.display().to_string()))?;
    let joint_radius = r.value("joint-radius", a.joint_radius, SynthConfig::default().joint_radius)?;
    let hw = frame_size(&data.join("train"))?;
    let ns = net_settings(&mut r, &a.net, seed, Variant::BiStreamAttention.name(), hw)?;
    let out = a.common.out;
    finish_config(r, &out)?;

    let generator = generator_dir.map(|d| load_generator(Path::new(&d))).transpose()?;
    let gref = generator.as_ref().map(|g| (g, joint_radius));
    let train = load_prepared(&data.join("train"), &ns.input, gref)?;
    let test_dir = data.join("test");
    let test = if test_dir.exists() { load_prepared(&test_dir, &ns.input, gref)? } else { Vec::new() };
    log::info!("training {} on {} samples", ns.variant.name(), train.len());

    let mut net = BiStreamNet::<f32>::new(ns.net.clone(), rng::derive(seed, rng::label("init")))?;
    let report = train_recognizer(&mut net, &train, &ns.train, |e, loss, _| {
        log::info!("epoch {e}: loss {loss:.4}");
    })?;
    let model = Recognizer {
        net,
        input: ns.input,
        joint_radius,
        generator,
    };
    model.save(&out)?;
    let rows: Vec<Vec<String>> = (0..report.epoch_loss.len())
        .map(|e| vec![e.to_string(), report.gamma[e].to_string(), report.epoch_loss[e].to_string()])
        .collect();
    write_csv(&out.join("loss.csv"), &["epoch", "gamma", "loss"], &rows)?;
    let mut metrics = json!({
        "variant": ns.variant.name(),
        "train_samples": train.len(),
        "final_loss": report.epoch_loss.last(),
    });
    if !test.is_empty() {
        let row = eval::AblationRow::evaluate(&model.net, &test)?;
        metrics["test_samples"] = json!(test.len());
        metrics["test_accuracy"] = json!(accuracy(&model.net, &test)?);
        metrics["test_class_mean_accuracy"] = json!(row.overall);
        metrics["per_class_accuracy"] = per_class_json(&row.per_class);
    }
    write_json(&out.join("metrics.json"), &metrics)
}

fn per_class_json(per_class: &[Option<f64>]) -> Value {
    let m: serde_json::Map<String, Value> = per_class
        .iter()
        .enumerate()
        .map(|(k, v)| (class_name(k), json!(v)))
        .collect();
    Value::Object(m)
}

fn class_name(k: usize) -> String {
    CLASS_NAMES.get(k).map_or_else(|| format!("class{k}"), |s| s.to_string())
}

fn model_path(r: &mut Resolver, flag: Option<PathBuf>) -> Result<PathBuf> {
    existing(r.required("model", flag.map(|p| p.display().to_string()))?.into(), "model")
}

fn recognize(a: RecognizeArgs) -> Result<()> {
    let mut r = resolver(&a.common)?;
    r.value("seed", a.common.seed, 7u64)?;
    let model_dir = model_path(&mut r, a.model)?;
    let input = existing(r.required("input", a.input.map(|p| p.display().to_string()))?.into(), "input")?;
    let out = a.common.out;
    finish_config(r, &out)?;
    let model = Recognizer::load(&model_dir)?;
    let mut rows = Vec::new();
    let mut hits = 0;
    let dirs = dataset::sample_dirs(&input)?;
    for d in &dirs {
        let s = dataset::read_sample(d)?;
        let probs = model.net.classify(&model_inputs(&model, &s, false)?)?;
        let pred = detector::argmax(&probs);
        hits += usize::from(pred == s.sample.label);
        let name = d.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let mut row = vec![name, s.sample.label.to_string(), pred.to_string()];
        row.extend(probs.iter().map(|p| p.to_string()));
        rows.push(row);
    }
    let mut header = vec!["sample".to_string(), "label".into(), "predicted".into()];
    header.extend((0..model.net.cfg.classes).map(|k| format!("p-{}", class_name(k))));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&out.join("predictions.csv"), &header, &rows)?;
    write_json(
        &out.join("summary.json"),
        &json!({ "samples": dirs.len(), "accuracy": hits as f64 / dirs.len() as f64 }),
    )
}

fn counts_json(c: &DetectionCounts) -> Value {
    json!({
        "tp": c.tp, "fp": c.fp, "fn": c.fn_,
        "precision": c.precision(), "recall": c.recall(), "f1": c.f1(),
    })
}

fn check_iou(iou: f64) -> Result<()> {
    if !(iou > 0.0 && iou <= 1.0) {
        bail!("iou must lie in (0, 1], got {iou}");
    }
    Ok(())
}

fn detect(a: DetectArgs) -> Result<()> {
    let mut r = resolver(&a.common)?;
    r.value("seed", a.common.seed, 7u64)?;
    let model_dir = model_path(&mut r, a.model)?;
    let video_dir = existing(r.required("video", a.video.map(|p| p.display().to_string()))?.into(), "video")?;
    let cfg = DetectorConfig::new(r.required("window", a.window)?, r.required("stride", a.stride)?)?;
    let iou = r.value("iou", a.iou, 0.5f64)?;
    check_iou(iou)?;
    let out = a.common.out;
    finish_config(r, &out)?;
    let model = Recognizer::load(&model_dir)?;
    let video = dataset::read_sample(&video_dir)?;
    let prepared = model_inputs(&model, &video, true)?;
    let scorer = NetScorer::new(&model.net, &prepared)?;
    let windows = detector::slide_and_score(&scorer, cfg)?;
    let probs = detector::fuse_probabilities(&windows, prepared.len())?;
    let labels: Vec<usize> = probs.iter().map(|p| detector::argmax(p)).collect();
    let segments = detector::extract_segments(&labels, None);
    dataset::write_segments(&out.join("segments.csv"), &segments)?;
    let mut header = vec!["frame".to_string()];
    header.extend((0..model.net.cfg.classes).map(|k| format!("p-{}", class_name(k))));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = probs
        .iter()
        .enumerate()
        .map(|(t, p)| std::iter::once(t.to_string()).chain(p.iter().map(|v| v.to_string())).collect())
        .collect();
    write_csv(&out.join("probabilities.csv"), &header, &rows)?;
    let mut per_class = serde_json::Map::new();
    for k in 0..model.net.cfg.classes {
        per_class.insert(class_name(k), json!(segments.iter().filter(|s| s.class == k).count()));
    }
    let mut summary = json!({
        "window": cfg.window,
        "stride": cfg.stride,
        "frames": labels.len(),
        "windows": windows.len(),
        "segments_per_class": per_class,
    });
    if let Some(truth) = &video.segments {
        let counts = detector::score_detections(&[segments.clone()], &[truth.clone()], iou, Some(bistream_core::BACKGROUND))?;
        summary["iou"] = json!(iou);
        summary["detection"] = counts_json(&counts);
        summary["frame_accuracy"] = json!(eval::frame_accuracy(&labels, &bistream_core::synth::frame_labels(truth))?);
    }
    write_json(&out.join("summary.json"), &summary)
}

fn gridsearch(a: GridArgs) -> Result<()> {
    let mut r = resolver(&a.common)?;
    r.value("seed", a.common.seed, 7u64)?;
    let model_dir = model_path(&mut r, a.model)?;
    let videos_dir = existing(r.required("videos", a.videos.map(|p| p.display().to_string()))?.into(), "videos")?;
    let lo = r.value("min-window", a.min_window, MIN_WINDOW)?;
    let hi = r.value("max-window", a.max_window, MAX_WINDOW)?;
    let iou = r.value("iou", a.iou, 0.5f64)?;
    check_iou(iou)?;
    if lo > hi {
        bail!("min-window {lo} exceeds max-window {hi}");
    }
    let out = a.common.out;
    finish_config(r, &out)?;
    let model = Recognizer::load(&model_dir)?;
    let mut prepared = Vec::new();
    let mut truth = Vec::new();
    for d in dataset::sample_dirs(&videos_dir)? {
        let v = dataset::read_sample(&d)?;
        let segs = v.segments.clone().ok_or_else(|| anyhow!("{}: no segments.csv", d.display()))?;
        prepared.push(model_inputs(&model, &v, true)?);
        truth.push(segs);
    }
    let scorers = prepared
        .iter()
        .map(|p| NetScorer::new(&model.net, p))
        .collect::<bistream_core::Result<Vec<_>>>()?;
    let windows: Vec<usize> = (lo..=hi).collect();
    let gs = detector::grid_search(&scorers, &truth, &windows, iou, Some(bistream_core::BACKGROUND))?;
    let rows: Vec<Vec<String>> = gs
        .surface
        .iter()
        .map(|p| {
            vec![
                p.config.window.to_string(),
                p.config.stride.to_string(),
                p.f1.to_string(),
                p.counts.tp.to_string(),
                p.counts.fp.to_string(),
                p.counts.fn_.to_string(),
            ]
        })
        .collect();
    write_csv(&out.join("surface.csv"), &["window", "stride", "f1", "tp", "fp", "fn"], &rows)?;
    let mut best = counts_json(&gs.best.counts);
    best["window"] = json!(gs.best.config.window);
    best["stride"] = json!(gs.best.config.stride);
    best["iou"] = json!(iou);
    best["videos"] = json!(truth.len());
    write_json(&out.join("best.json"), &best)
}

/// Segments from a CSV file or from `segments.csv` inside a directory.
fn segments_at(path: &Path) -> Result<Vec<Segment>> {
    let file = if path.is_dir() { path.join(dataset::SEGMENTS) } else { path.to_path_buf() };
    Ok(dataset::read_segments(&file)?)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let mut r = resolver(&a.common)?;
    let task = r.value("task", a.task.clone(), "detection".to_string())?;
    match task.as_str() {
        "detection" => eval_detection(a, r),
        "transitions" => eval_transitions(a, r),
        "ablation" => eval_ablation(a, r),
        other => bail!("unknown eval task {other:?} (expected detection, transitions or ablation)"),
    }
}

fn eval_detection(a: EvalArgs, mut r: Resolver) -> Result<()> {
    let pred_path = existing(r.required("pred", a.pred.map(|p| p.display().to_string()))?.into(), "pred")?;
    let truth_path = existing(r.required("truth", a.truth.map(|p| p.display().to_string()))?.into(), "truth")?;
    let iou = r.value("iou", a.iou, 0.5f64)?;
    check_iou(iou)?;
    let keep_bg = r.value("keep-background", a.keep_background, false)?;
    let out = a.common.out;
    finish_config(r, &out)?;
    let pred = segments_at(&pred_path)?;
    let truth = segments_at(&truth_path)?;
    let (p, t) = if keep_bg {
        (pred.clone(), truth.clone())
    } else {
        (
            eval::without_class(&pred, bistream_core::BACKGROUND),
            eval::without_class(&truth, bistream_core::BACKGROUND),
        )
    };
    let report = eval::f1_at_iou(&p, &t, iou)?;
    let mut metrics = counts_json(&report.counts);
    metrics["iou"] = json!(iou);
    metrics["mean_matched_iou"] = json!(report.mean_matched_iou());
    let (pl, tl) = (bistream_core::synth::frame_labels(&pred), bistream_core::synth::frame_labels(&truth));
    if pl.len() == tl.len() && is_tiling(&pred) && is_tiling(&truth) {
        metrics["frame_accuracy"] = json!(eval::frame_accuracy(&pl, &tl)?);
    }
    write_json(&out.join("metrics.json"), &metrics)?;
    let mut rows = Vec::new();
    for step in 1..=9 {
        let th = step as f64 / 10.0;
        rows.push(vec![format!("{th:.1}"), eval::f1_at_iou(&p, &t, th)?.f1.to_string()]);
    }
    write_csv(&out.join("iou_sweep.csv"), &["iou", "f1"], &rows)
}

/// Whether segments cover `0..end` contiguously in order.
fn is_tiling(segments: &[Segment]) -> bool {
    segments.first().is_some_and(|s| s.start == 0) && segments.windows(2).all(|w| w[0].end == w[1].start)
}

fn eval_transitions(a: EvalArgs, mut r: Resolver) -> Result<()> {
    let truth_path = existing(r.required("truth", a.truth.map(|p| p.display().to_string()))?.into(), "truth")?;
    let out = a.common.out;
    finish_config(r, &out)?;
    let videos: Vec<Vec<Segment>> = if truth_path.is_file() || truth_path.join(dataset::SEGMENTS).exists() {
        vec![segments_at(&truth_path)?]
    } else {
        dataset::sample_dirs(&truth_path)?
            .iter()
            .map(|d| segments_at(d))
            .collect::<Result<_>>()?
    };
    let m = eval::transition_matrix(&videos, NUM_CLASSES)?;
    fsutil::write_atomic(&out.join("transitions.csv"), m.to_csv(&CLASS_NAMES).as_bytes())?;
    Ok(())
}

fn eval_ablation(a: EvalArgs, mut r: Resolver) -> Result<()> {
    let seed = r.value("seed", a.common.seed, 7u64)?;
    let data = existing(r.required("data", a.data.map(|p| p.display().to_string()))?.into(), "dataset")?;
    let all: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
    let names = r.value("variants", a.variants.clone(), render_list(&all))?;
    let variants = parse_list::<String>(&names)
        .map_err(|e| anyhow!(e))?
        .iter()
        .map(|n| parse_variant(n))
        .collect::<Result<Vec<_>>>()?;
    let hw = frame_size(&data.join("train"))?;
    let ns = net_settings(&mut r, &a.net, seed, Variant::BiStreamAttention.name(), hw)?;
    let out = a.common.out;
    finish_config(r, &out)?;
    let train = load_prepared(&data.join("train"), &ns.input, None)?;
    let test = load_prepared(&data.join("test"), &ns.input, None)?;
    let net_cfg = NetConfig { variant: variants[0], ..ns.net };
    let (table, _): (AblationTable, _) = ablation_run(&train, &test, &variants, &net_cfg, &ns.train)?;
    fsutil::write_atomic(&out.join("ablation.csv"), table.to_csv(&CLASS_NAMES).as_bytes())?;
    let overall: BTreeMap<&str, f64> = table.rows.iter().map(|row| (row.variant.name(), row.overall)).collect();
    write_json(&out.join("metrics.json"), &json!({ "overall": overall, "test_samples": test.len() }))
}

fn viz_attention(a: VizArgs) -> Result<()> {
    let mut r = resolver(&a.common)?;
    r.value("seed", a.common.seed, 7u64)?;
    let model_dir = model_path(&mut r, a.model)?;
    let sample_dir = existing(r.required("sample", a.sample.map(|p| p.display().to_string()))?.into(), "sample")?;
    let out = a.common.out;
    finish_config(r, &out)?;
    let model = Recognizer::load(&model_dir)?;
    if !model.net.variant().has_pose() {
        bail!("variant {} has no pose stream to visualise", model.net.variant().name());
    }
    let s = dataset::read_sample(&sample_dir)?;
    let prepared = model_inputs(&model, &s, false)?;
    let (weights, maps) = model.net.attention_maps(&prepared)?;
    for (k, stage) in maps.iter().enumerate() {
        for t in 0..stage.shape()[0] {
            let map = attention::attention_heatmap(&stage.index_axis0(t))?;
            pgm::write(&out.join(format!("frame{t:03}-stage{}.pgm", k + 1)), &map)?;
        }
    }
    let rows: Vec<Vec<String>> = weights.data().iter().enumerate().map(|(t, w)| vec![t.to_string(), w.to_string()]).collect();
    write_csv(&out.join("temporal_weights.csv"), &["frame", "weight"], &rows)
}
