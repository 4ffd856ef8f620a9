//! Plain-text `key=value` settings with flag overrides.
//!
//! A run resolves every setting it knows from, in priority order, the
//! command-line flag, the `--config` file and the built-in default. Keys in
//! the file that the run never asks for are rejected. The resolved values
//! form the effective configuration, written next to the outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{StoreError, StoreResult};
use crate::fsutil;

/// Parse `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; keys must be unique.
pub fn parse_kv(text: &str, path: &Path) -> StoreResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| StoreError::format(path, format!("line {}: expected key=value", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(StoreError::format(path, format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(StoreError::format(path, format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(out)
}

pub fn render_kv(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn read_kv(path: &Path) -> StoreResult<BTreeMap<String, String>> {
    parse_kv(&fsutil::read_string(path)?, path)
}

pub fn write_kv(path: &Path, map: &BTreeMap<String, String>) -> StoreResult<()> {
    fsutil::write_atomic(path, render_kv(map).as_bytes())
}

/// Typed lookup in a parsed key=value map.
pub fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str, path: &Path) -> StoreResult<T>
where
    T::Err: Display,
{
    let raw = map.get(key).ok_or_else(|| StoreError::format(path, format!("missing key {key}")))?;
    raw.parse().map_err(|e| StoreError::format(path, format!("key {key}: {e}")))
}

/// Comma-separated list value.
pub fn parse_list<T: FromStr>(raw: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    raw.split(',').map(|s| s.trim().parse::<T>().map_err(|e| format!("{s:?}: {e}"))).collect()
}

pub fn render_list<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Merges flags, an optional config file and defaults for one run.
#[derive(Debug)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    source: String,
    effective: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> StoreResult<Self> {
        let (file, source) = match config {
            Some(p) => (read_kv(p)?, p.display().to_string()),
            None => (BTreeMap::new(), String::new()),
        };
        Ok(Resolver {
            file,
            source,
            effective: BTreeMap::new(),
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> StoreResult<Option<T>>
    where
        T::Err: Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| StoreError::format(Path::new(&self.source), format!("key {key}: {e}"))),
        }
    }

    /// Flag, then file, then `default`.
    pub fn value<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> StoreResult<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`Resolver::value`] for a setting without a default.
    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> StoreResult<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?
                .ok_or_else(|| StoreError::Invalid(format!("missing required setting --{key}")))?,
        };
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// A setting that may stay unset.
    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> StoreResult<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.effective.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    /// Reject file keys no lookup consumed and return the effective
    /// configuration.
    pub fn finish(self) -> StoreResult<BTreeMap<String, String>> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.effective.contains_key(*k)).collect();
        if let Some(k) = unknown.first() {
            return Err(StoreError::format(Path::new(&self.source), format!("unknown key {k}")));
        }
        Ok(self.effective)
    }
}
