//! Model checkpoints: a directory holding `model.txt` (architecture as
//! key=value), `manifest.txt` (one `name<TAB>file` line per parameter) and
//! one FGT1 file per parameter.
//!
//! A recognizer trained on generator-refined joint maps carries its
//! generator in the `generator/` subdirectory, so inference applies the
//! same substitution.

use std::collections::BTreeMap;
use std::path::Path;

use bistream_core::pose::Generator;
use bistream_core::streams::{BiStreamNet, InputSpec, NetConfig, Readout, Variant};
use bistream_core::{rng, ParamStore};

use crate::error::{StoreError, StoreResult};
use crate::settings::{get, parse_list, read_kv, render_list, write_kv};
use crate::{fgt, fsutil};

pub const MANIFEST: &str = "manifest.txt";
pub const MODEL: &str = "model.txt";
pub const GENERATOR_DIR: &str = "generator";

/// Write every parameter, then the manifest naming them.
pub fn save_params(dir: &Path, store: &ParamStore<f32>) -> StoreResult<()> {
    fsutil::create_dir(dir)?;
    let mut manifest = String::new();
    for (i, (_, p)) in store.iter().enumerate() {
        let file = format!("param-{i:03}.fgt");
        fgt::write(&dir.join(&file), &p.value)?;
        manifest.push_str(&format!("{}\t{file}\n", p.name));
    }
    fsutil::write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Overwrite `store` from a manifest that names exactly its parameters.
pub fn load_params(dir: &Path, store: &mut ParamStore<f32>) -> StoreResult<()> {
    let path = dir.join(MANIFEST);
    let text = fsutil::read_string(&path)?;
    let mut seen = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (name, file) = line
            .split_once('\t')
            .ok_or_else(|| StoreError::format(&path, format!("line {}: expected name<TAB>file", n + 1)))?;
        if file.contains('/') || file.contains('\\') {
            return Err(StoreError::format(&path, format!("line {}: file must be a plain name", n + 1)));
        }
        let value = fgt::read(&dir.join(file))?;
        store.set_by_name(name, value)?;
        seen.push(name.to_string());
    }
    let mut expected = store.names();
    expected.sort();
    seen.sort();
    if seen != expected {
        return Err(StoreError::format(
            &path,
            format!("parameter set mismatch: checkpoint has {} of {} expected", seen.len(), expected.len()),
        ));
    }
    Ok(())
}

fn readout_name(r: Readout) -> &'static str {
    match r {
        Readout::GlobalAvgPool => "gap",
        Readout::Flatten => "flatten",
    }
}

fn readout_from(name: &str) -> Option<Readout> {
    match name {
        "gap" => Some(Readout::GlobalAvgPool),
        "flatten" => Some(Readout::Flatten),
        _ => None,
    }
}

fn channels3(raw: &str, path: &Path, key: &str) -> StoreResult<[usize; 3]> {
    let v: Vec<usize> = parse_list(raw).map_err(|e| StoreError::format(path, format!("key {key}: {e}")))?;
    v.try_into()
        .map_err(|_| StoreError::format(path, format!("key {key}: expected three widths")))
}

/// A trained recognizer with everything needed to prepare its inputs.
#[derive(Debug, Clone)]
pub struct Recognizer {
    pub net: BiStreamNet<f32>,
    pub input: InputSpec,
    /// Joint-map disk radius used when redrawing maps from generator output.
    pub joint_radius: usize,
    pub generator: Option<Generator<f32>>,
}

impl Recognizer {
    pub fn save(&self, dir: &Path) -> StoreResult<()> {
        let c = &self.net.cfg;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("kind", "recognizer".into());
        put("variant", c.variant.name().into());
        put("pose_channels", render_list(&c.pose_channels));
        put("object_channels", render_list(&c.object_channels));
        put("hidden", c.hidden.to_string());
        put("classes", c.classes.to_string());
        put("height", c.height.to_string());
        put("width", c.width.to_string());
        put("readout", readout_name(c.readout).into());
        put("gamma", self.net.gamma().unwrap_or(0.0).to_string());
        put("pool", self.input.pool.to_string());
        put("frame_limit", self.input.frame_limit.to_string());
        put("joint_radius", self.joint_radius.to_string());
        put("generator", self.generator.is_some().to_string());
        save_params(dir, &self.net.store)?;
        if let Some(g) = &self.generator {
            save_generator(&dir.join(GENERATOR_DIR), g)?;
        }
        write_kv(&dir.join(MODEL), &m)
    }

    pub fn load(dir: &Path) -> StoreResult<Self> {
        let path = dir.join(MODEL);
        let m = read_kv(&path)?;
        expect_kind(&m, &path, "recognizer")?;
        let variant_name: String = get(&m, "variant", &path)?;
        let variant = Variant::from_name(&variant_name)
            .ok_or_else(|| StoreError::format(&path, format!("unknown variant {variant_name}")))?;
        let readout_raw: String = get(&m, "readout", &path)?;
        let cfg = NetConfig {
            variant,
            pose_channels: channels3(&get::<String>(&m, "pose_channels", &path)?, &path, "pose_channels")?,
            object_channels: channels3(&get::<String>(&m, "object_channels", &path)?, &path, "object_channels")?,
            hidden: get(&m, "hidden", &path)?,
            classes: get(&m, "classes", &path)?,
            height: get(&m, "height", &path)?,
            width: get(&m, "width", &path)?,
            readout: readout_from(&readout_raw).ok_or_else(|| StoreError::format(&path, format!("unknown readout {readout_raw}")))?,
        };
        let mut net = BiStreamNet::new(cfg, 0)?;
        load_params(dir, &mut net.store)?;
        net.set_gamma(get(&m, "gamma", &path)?);
        let generator = if get::<bool>(&m, "generator", &path)? {
            Some(load_generator(&dir.join(GENERATOR_DIR))?)
        } else {
            None
        };
        Ok(Recognizer {
            net,
            input: InputSpec {
                pool: get(&m, "pool", &path)?,
                frame_limit: get(&m, "frame_limit", &path)?,
            },
            joint_radius: get(&m, "joint_radius", &path)?,
            generator,
        })
    }
}

fn expect_kind(m: &BTreeMap<String, String>, path: &Path, kind: &str) -> StoreResult<()> {
    let found: String = get(m, "kind", path)?;
    if found != kind {
        return Err(StoreError::format(path, format!("expected a {kind} checkpoint, found {found}")));
    }
    Ok(())
}

pub fn save_generator(dir: &Path, g: &Generator<f32>) -> StoreResult<()> {
    let mut m = BTreeMap::new();
    m.insert("kind".to_string(), "generator".to_string());
    m.insert("height".to_string(), g.height.to_string());
    m.insert("width".to_string(), g.width.to_string());
    let widths: Vec<usize> = g.convs.iter().map(|c| c.out_ch).collect();
    m.insert("channels".to_string(), render_list(&widths));
    m.insert("hidden".to_string(), g.fc1.out_dim.to_string());
    save_params(dir, &g.store)?;
    write_kv(&dir.join(MODEL), &m)
}

pub fn load_generator(dir: &Path) -> StoreResult<Generator<f32>> {
    let path = dir.join(MODEL);
    let m = read_kv(&path)?;
    expect_kind(&m, &path, "generator")?;
    let channels = channels3(&get::<String>(&m, "channels", &path)?, &path, "channels")?;
    let mut g = Generator::new(
        get(&m, "height", &path)?,
        get(&m, "width", &path)?,
        channels,
        get(&m, "hidden", &path)?,
        &mut rng::seeded(0),
    )?;
    load_params(dir, &mut g.store)?;
    Ok(g)
}
