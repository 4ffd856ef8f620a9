use alloc::format;
use alloc::vec::Vec;

use crate::attention::{NonLocalBlock, TemporalAttention};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2dLayer, Linear, LstmCell};
use crate::params::ParamStore;
use crate::rng;
use crate::streams::PreparedSample;
use crate::tensor::{Real, Tensor};
use crate::NUM_CLASSES;

/// Which inputs and attention blocks a network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// RGB frames through the pose-stream architecture, no joint map.
    RawFrame,
    /// RGB plus joint map.
    PoseStream,
    /// Object maps only.
    ObjectMap,
    /// Pose stream and object stream.
    BiStream,
    /// Bi-stream with two non-local blocks in the pose stream.
    BiStreamAttention,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::RawFrame,
        Variant::PoseStream,
        Variant::ObjectMap,
        Variant::BiStream,
        Variant::BiStreamAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RawFrame => "raw-frame",
            Variant::PoseStream => "pose-stream",
            Variant::ObjectMap => "object-map",
            Variant::BiStream => "bi-stream",
            Variant::BiStreamAttention => "bi-stream+att",
        }
    }

    pub fn from_name(name: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn has_pose(self) -> bool {
        self != Variant::ObjectMap
    }

    pub fn has_object(self) -> bool {
        matches!(self, Variant::ObjectMap | Variant::BiStream | Variant::BiStreamAttention)
    }

    pub fn has_nonlocal(self) -> bool {
        self == Variant::BiStreamAttention
    }

    /// Channels fed to the pose stream.
    pub fn pose_channels(self) -> usize {
        if self == Variant::RawFrame {
            3
        } else {
            4
        }
    }
}

/// Subtracted from every input value, centring `[0, 1]` inputs on zero.
const INPUT_CENTRE: f64 = 0.5;

/// How per-frame feature maps become vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    GlobalAvgPool,
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub variant: Variant,
    pub pose_channels: [usize; 3],
    pub object_channels: [usize; 3],
    pub hidden: usize,
    pub classes: usize,
    /// Spatial size of the prepared inputs.
    pub height: usize,
    pub width: usize,
    pub readout: Readout,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            variant: Variant::BiStreamAttention,
            pose_channels: [8, 16, 32],
            object_channels: [8, 16, 32],
            hidden: 64,
            classes: NUM_CLASSES,
            height: 16,
            width: 16,
            readout: Readout::Flatten,
        }
    }
}

#[derive(Debug, Clone)]
struct Stream {
    convs: Vec<Conv2dLayer>,
    features: usize,
}

impl Stream {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        widths: [usize; 3],
        (h, w): (usize, usize),
        readout: Readout,
        r: &mut rng::Rng,
    ) -> Result<(Self, Vec<(usize, usize)>)> {
        let (mut c, mut h, mut w) = (in_ch, h, w);
        let mut convs = Vec::new();
        let mut sizes = Vec::new();
        for (i, &out) in widths.iter().enumerate() {
            let conv = Conv2dLayer::new(store, &format!("{name}.conv{i}"), c, out, 3, 2, 1, r);
            (h, w) = conv
                .output_size(h, w)
                .ok_or_else(|| Error::contract("bistream_net", format!("{name} input too small")))?;
            sizes.push((h, w));
            convs.push(conv);
            c = out;
        }
        let features = match readout {
            Readout::GlobalAvgPool => c,
            Readout::Flatten => c * h * w,
        };
        Ok((Stream { convs, features }, sizes))
    }
}

/// Per-frame two-stream encoder, shared LSTM, temporal attention and a
/// linear class head.
#[derive(Debug, Clone)]
pub struct BiStreamNet<T> {
    pub cfg: NetConfig,
    pub store: ParamStore<T>,
    pose: Option<Stream>,
    object: Option<Stream>,
    /// Applied after pose-stream stages 1 and 2.
    pub nonlocal: Vec<NonLocalBlock>,
    pub lstm: LstmCell,
    pub attention: TemporalAttention,
    pub head: Linear,
}

/// Intermediate results of one forward pass.
pub struct NetTrace {
    pub logits: Var,
    /// `[1, T]` temporal attention weights.
    pub temporal_weights: Var,
    /// Pose-stream feature maps after each non-local block (or after
    /// stages 1 and 2 when there are none), `[T, C, h, w]`.
    pub pose_maps: Vec<Var>,
}

impl<T: Real> BiStreamNet<T> {
    /// Non-local parameters come from a stream derived from `seed`, so a
    /// network with and without them share every other initial weight.
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        if cfg.classes < 2 || cfg.hidden == 0 {
            return Err(Error::contract("bistream_net", "need >= 2 classes and a non-empty hidden state"));
        }
        let mut r = rng::seeded(seed);
        let mut nl_rng = rng::seeded(rng::derive(seed, rng::label("nonlocal")));
        let mut store = ParamStore::new();
        let v = cfg.variant;
        let size = (cfg.height, cfg.width);
        let mut nonlocal = Vec::new();
        let pose = if v.has_pose() {
            let (s, sizes) = Stream::new(&mut store, "pose", v.pose_channels(), cfg.pose_channels, size, cfg.readout, &mut r)?;
            if v.has_nonlocal() {
                for (i, &ch) in cfg.pose_channels[..2].iter().enumerate() {
                    let _ = sizes[i];
                    nonlocal.push(NonLocalBlock::new(&mut store, &format!("pose.nonlocal{i}"), ch, &mut nl_rng)?);
                }
            }
            Some(s)
        } else {
            None
        };
        let object = if v.has_object() {
            Some(Stream::new(&mut store, "object", 1, cfg.object_channels, size, cfg.readout, &mut r)?.0)
        } else {
            None
        };
        let fused = pose.as_ref().map_or(0, |s| s.features) + object.as_ref().map_or(0, |s| s.features);
        let lstm = LstmCell::new(&mut store, "lstm", fused, cfg.hidden, &mut r);
        let attention = TemporalAttention::new(&mut store, "temporal", cfg.hidden, &mut r);
        let head = Linear::new(&mut store, "head", cfg.hidden, cfg.classes, &mut r);
        Ok(BiStreamNet {
            cfg,
            store,
            pose,
            object,
            nonlocal,
            lstm,
            attention,
            head,
        })
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        for b in &mut self.nonlocal {
            b.gamma = gamma;
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        self.nonlocal.first().map(|b| b.gamma)
    }

    fn readout(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self.cfg.readout {
            Readout::GlobalAvgPool => g.global_avg_pool(x),
            Readout::Flatten => {
                let s = g.shape(x).to_vec();
                g.reshape(x, &[s[0], s[1] * s[2] * s[3]])
            }
        }
    }

    fn check_input(&self, sample: &PreparedSample) -> Result<()> {
        let (ps, os) = (sample.pose.shape(), sample.object.shape());
        let (h, w) = (self.cfg.height, self.cfg.width);
        if ps.len() != 4 || ps[1] != 4 || ps[2] != h || ps[3] != w {
            return Err(Error::shape("bistream_classify", format!("pose input [T, 4, {h}, {w}]"), format!("{ps:?}")));
        }
        if os != [ps[0], 1, h, w] {
            return Err(Error::shape(
                "bistream_classify",
                format!("object input [{}, 1, {h}, {w}]", ps[0]),
                format!("{os:?}"),
            ));
        }
        Ok(())
    }

    /// Per-frame fused features `[T, F]` and the pose-stream maps.
    fn encode(&self, g: &mut Graph<T>, store: &ParamStore<T>, sample: &PreparedSample) -> Result<(Var, Vec<Var>)> {
        self.check_input(sample)?;
        let mut feats = Vec::new();
        let mut pose_maps = Vec::new();
        if let Some(stream) = &self.pose {
            let mut x = g.constant(sample.pose.cast::<T>());
            x = g.add_scalar(x, T::of(-INPUT_CENTRE))?;
            if self.variant() == Variant::RawFrame {
                x = g.slice(x, 1, 0, 3)?;
            }
            for (i, conv) in stream.convs.iter().enumerate() {
                let y = conv.forward(g, store, x)?;
                x = g.relu(y)?;
                if i < 2 {
                    if let Some(block) = self.nonlocal.get(i) {
                        x = block.forward(g, store, x)?;
                    }
                    pose_maps.push(x);
                }
            }
            feats.push(self.readout(g, x)?);
        }
        if let Some(stream) = &self.object {
            let mut x = g.constant(sample.object.cast::<T>());
            x = g.add_scalar(x, T::of(-INPUT_CENTRE))?;
            for conv in &stream.convs {
                let y = conv.forward(g, store, x)?;
                x = g.relu(y)?;
            }
            feats.push(self.readout(g, x)?);
        }
        let fused = if feats.len() == 1 { feats[0] } else { g.concat(&feats, 1)? };
        Ok((fused, pose_maps))
    }

    /// LSTM, temporal attention and head over `[T, F]` features.
    fn decode(&self, g: &mut Graph<T>, store: &ParamStore<T>, fused: Var) -> Result<(Var, Var)> {
        let hidden = self.lstm.run_sequence(g, store, fused)?;
        let (pooled, temporal_weights) = self.attention.forward(g, store, &hidden)?;
        Ok((self.head.forward(g, store, pooled)?, temporal_weights))
    }

    /// Full forward pass with intermediate results.
    pub fn forward_trace(&self, g: &mut Graph<T>, store: &ParamStore<T>, sample: &PreparedSample) -> Result<NetTrace> {
        let (fused, pose_maps) = self.encode(g, store, sample)?;
        let (logits, temporal_weights) = self.decode(g, store, fused)?;
        Ok(NetTrace {
            logits,
            temporal_weights,
            pose_maps,
        })
    }

    /// Whether frames are encoded independently of each other, which holds
    /// unless a non-local block is active.
    pub fn frames_independent(&self) -> bool {
        self.nonlocal.iter().all(|b| b.gamma == 0.0)
    }

    /// Per-frame features `[T, F]` of a whole sequence. Only meaningful when
    /// [`frames_independent`](Self::frames_independent) holds; then any
    /// window's features are a row range of these.
    pub fn frame_features(&self, sample: &PreparedSample) -> Result<Tensor<T>> {
        if !self.frames_independent() {
            return Err(Error::contract("frame_features", "non-local blocks couple frames"));
        }
        let mut g = Graph::inference();
        let (fused, _) = self.encode(&mut g, &self.store, sample)?;
        Ok(g.value(fused).clone())
    }

    /// Class probabilities from precomputed `[T, F]` features.
    pub fn classify_features(&self, features: &Tensor<T>) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let x = g.constant(features.clone());
        let (logits, _) = self.decode(&mut g, &self.store, x)?;
        let p = g.softmax(logits)?;
        Ok(g.value(p).data().iter().map(|v| v.as_f64()).collect())
    }

    /// Class logits `[1, K]`.
    pub fn logits(&self, g: &mut Graph<T>, store: &ParamStore<T>, sample: &PreparedSample) -> Result<Var> {
        Ok(self.forward_trace(g, store, sample)?.logits)
    }

    /// Class probabilities for a prepared sample.
    pub fn classify(&self, sample: &PreparedSample) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let logits = self.logits(&mut g, &self.store, sample)?;
        let p = g.softmax(logits)?;
        Ok(g.value(p).data().iter().map(|v| v.as_f64()).collect())
    }

    /// Index of the most probable class, ties toward the lowest index.
    pub fn predict(&self, sample: &PreparedSample) -> Result<usize> {
        Ok(argmax(&self.classify(sample)?))
    }

    /// Temporal weights and pose-stream maps of one sample, as plain tensors.
    pub fn attention_maps(&self, sample: &PreparedSample) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut g = Graph::inference();
        let tr = self.forward_trace(&mut g, &self.store, sample)?;
        let maps = tr.pose_maps.iter().map(|&v| g.value(v).clone()).collect();
        Ok((g.value(tr.temporal_weights).clone(), maps))
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check_params, Coverage};
    use crate::nn::softmax_cross_entropy;
    use crate::streams::{train_recognizer, TrainConfig};
    use rand::Rng as _;

    fn sample(t: usize, seed: u64, label: usize) -> PreparedSample {
        let mut r = rng::seeded(seed);
        PreparedSample {
            pose: Tensor::from_fn(&[t, 4, 16, 16], |_| r.random::<f32>()),
            object: Tensor::from_fn(&[t, 1, 16, 16], |_| r.random::<f32>()),
            label,
        }
    }

    fn tiny(variant: Variant) -> NetConfig {
        NetConfig {
            variant,
            pose_channels: [4, 4, 6],
            object_channels: [2, 4, 4],
            hidden: 5,
            ..NetConfig::default()
        }
    }

    #[test]
    fn output_is_a_distribution_and_deterministic() {
        for v in Variant::ALL {
            let net = BiStreamNet::<f32>::new(tiny(v), 3).unwrap();
            let s = sample(3, 1, 0);
            let p = net.classify(&s).unwrap();
            assert_eq!(p.len(), NUM_CLASSES);
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert_eq!(p, net.classify(&s).unwrap());
        }
    }

    #[test]
    fn head_permutation_permutes_output() {
        let net = BiStreamNet::<f64>::new(tiny(Variant::BiStream), 5).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let mut permuted = net.clone();
        let (w, b) = (net.store.get(net.head.weight).clone(), net.store.get(net.head.bias).clone());
        let cols = w.shape()[1];
        let pw = permuted.store.get_mut(net.head.weight);
        for (i, &src) in perm.iter().enumerate() {
            pw.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(&w.data()[src * cols..(src + 1) * cols]);
        }
        let pb = permuted.store.get_mut(net.head.bias);
        for (i, &src) in perm.iter().enumerate() {
            pb.data_mut()[i] = b.data()[src];
        }
        let s = sample(2, 2, 0);
        let (p, q) = (net.classify(&s).unwrap(), permuted.classify(&s).unwrap());
        for (i, &src) in perm.iter().enumerate() {
            assert!((q[i] - p[src]).abs() < 1e-12);
        }
    }

    /// Zero the last conv stage of `stream`, so its features vanish.
    fn silence(net: &mut BiStreamNet<f64>, stream: &str) {
        let prefix = format!("{stream}.conv2.");
        let ids: Vec<_> = net.store.ids().filter(|&id| net.store.name(id).starts_with(&prefix)).collect();
        assert_eq!(ids.len(), 2);
        for id in ids {
            net.store.get_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn zeroed_stream_is_ignored() {
        let s = sample(2, 3, 0);
        let mut perturbed = s.clone();
        perturbed.object.data_mut().iter_mut().step_by(3).for_each(|v| *v = 1.0 - *v);
        perturbed.pose.data_mut().iter_mut().step_by(5).for_each(|v| *v += 0.3);
        for (silenced, live) in [("object", "pose"), ("pose", "object")] {
            let mut net = BiStreamNet::<f64>::new(tiny(Variant::BiStream), 6).unwrap();
            silence(&mut net, silenced);
            let base = net.classify(&s).unwrap();
            let mut only_silenced = s.clone();
            let mut only_live = s.clone();
            if silenced == "object" {
                only_silenced.object = perturbed.object.clone();
                only_live.pose = perturbed.pose.clone();
            } else {
                only_silenced.pose = perturbed.pose.clone();
                only_live.object = perturbed.object.clone();
            }
            assert_eq!(base, net.classify(&only_silenced).unwrap(), "{silenced} input leaked");
            assert_ne!(base, net.classify(&only_live).unwrap(), "{live} input ignored");
        }
    }

    #[test]
    fn attention_variant_shares_initial_weights() {
        let a = BiStreamNet::<f32>::new(NetConfig::default(), 9).unwrap();
        let b = BiStreamNet::<f32>::new(NetConfig { variant: Variant::BiStream, ..NetConfig::default() }, 9).unwrap();
        for (_, p) in b.store.iter() {
            let id = a.store.find(&p.name).unwrap();
            assert_eq!(a.store.get(id), &p.value, "{}", p.name);
        }
        assert_eq!(a.store.len(), b.store.len() + 16);
        let s = sample(3, 4, 1);
        assert_eq!(a.classify(&s).unwrap(), b.classify(&s).unwrap());
    }

    #[test]
    fn raw_frame_ignores_joint_channel() {
        let net = BiStreamNet::<f32>::new(tiny(Variant::RawFrame), 2).unwrap();
        let s = sample(2, 5, 0);
        let mut s2 = s.clone();
        for t in 0..2 {
            let off = s2.pose.offset(&[t, 3, 0, 0]);
            s2.pose.data_mut()[off..off + 256].fill(0.0);
        }
        assert_eq!(net.classify(&s).unwrap(), net.classify(&s2).unwrap());
    }

    #[test]
    fn rejects_bad_shapes() {
        let net = BiStreamNet::<f32>::new(tiny(Variant::BiStream), 2).unwrap();
        let mut s = sample(2, 5, 0);
        s.object = Tensor::zeros(&[3, 1, 16, 16]);
        assert!(matches!(net.classify(&s), Err(Error::Shape { .. })));
    }

    #[test]
    fn cached_frame_features_match_full_pass() {
        let net = BiStreamNet::<f64>::new(tiny(Variant::BiStream), 8).unwrap();
        let s = sample(6, 6, 0);
        let f = net.frame_features(&s).unwrap();
        let direct = net.classify(&s.window(2, 5, 40).unwrap()).unwrap();
        let cached = net.classify_features(&f.slice_axis0(2, 5).unwrap()).unwrap();
        for (a, b) in direct.iter().zip(&cached) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut att = BiStreamNet::<f64>::new(tiny(Variant::BiStreamAttention), 8).unwrap();
        assert!(att.frames_independent());
        att.set_gamma(0.5);
        assert!(att.frame_features(&s).is_err());
    }

    #[test]
    fn full_graph_gradients() {
        let mut net = BiStreamNet::<f64>::new(tiny(Variant::BiStreamAttention), 11).unwrap();
        net.set_gamma(1.0);
        let s = sample(2, 7, 4);
        let r = grad_check_params(
            &net.store,
            |g, store| {
                let logits = net.logits(g, store, &s)?;
                softmax_cross_entropy(g, logits, s.label)
            },
            1e-5,
            1e-3,
            Coverage::PerParam(4),
            None,
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r.worst());
    }

    #[test]
    fn memorises_one_sample() {
        let mut net = BiStreamNet::<f32>::new(NetConfig { variant: Variant::BiStream, ..NetConfig::default() }, 12).unwrap();
        let data = [sample(3, 8, 2)];
        let cfg = TrainConfig {
            main_epochs: 200,
            ramp_epochs: 0,
            accumulation: 1,
            ..TrainConfig::default()
        };
        let report = train_recognizer(&mut net, &data, &cfg, |_, _, _| {}).unwrap();
        assert!(*report.epoch_loss.last().unwrap() < 0.05, "{:?}", report.epoch_loss.last());
    }
}
