use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::streams::{train_recognizer, BiStreamNet, NetConfig, PreparedSample, TrainConfig};

pub use crate::streams::Variant;

/// Held-out accuracy of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// Accuracy per class; `None` when the test set has no sample of it.
    pub per_class: Vec<Option<f64>>,
    /// Mean of the defined per-class accuracies.
    pub overall: f64,
}

impl AblationRow {
    /// Score a trained net on `test`.
    pub fn evaluate(net: &BiStreamNet<f32>, test: &[PreparedSample]) -> Result<Self> {
        let k = net.cfg.classes;
        let mut hits = vec![0usize; k];
        let mut totals = vec![0usize; k];
        for s in test {
            if s.label >= k {
                return Err(Error::contract("ablation_run", alloc::format!("label {} out of range", s.label)));
            }
            totals[s.label] += 1;
            if net.predict(s)? == s.label {
                hits[s.label] += 1;
            }
        }
        let per_class: Vec<Option<f64>> = hits
            .iter()
            .zip(&totals)
            .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
            .collect();
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::contract("ablation_run", "empty test set"));
        }
        let overall = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok(AblationRow {
            variant: net.variant(),
            per_class,
            overall,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// One row per variant, percentages with two decimals; classes absent
    /// from the test set are left blank.
    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut out = String::from("variant");
        for n in class_names {
            out.push(',');
            out.push_str(n);
        }
        out.push_str(",overall\n");
        for r in &self.rows {
            out.push_str(r.variant.name());
            for a in &r.per_class {
                out.push(',');
                if let Some(a) = a {
                    let _ = write!(out, "{:.2}", 100.0 * a);
                }
            }
            let _ = writeln!(out, ",{:.2}", 100.0 * r.overall);
        }
        out
    }
}

/// Train each variant from the same seed on the same split and score it on
/// the held-out samples. Returns the table and the trained nets in variant
/// order.
pub fn ablation_run(
    train: &[PreparedSample],
    test: &[PreparedSample],
    variants: &[Variant],
    net: &NetConfig,
    cfg: &TrainConfig,
) -> Result<(AblationTable, Vec<BiStreamNet<f32>>)> {
    if variants.is_empty() {
        return Err(Error::contract("ablation_run", "no variants requested"));
    }
    let mut rows = Vec::new();
    let mut nets = Vec::new();
    for &variant in variants {
        let mut model = BiStreamNet::new(NetConfig { variant, ..net.clone() }, cfg.seed)?;
        train_recognizer(&mut model, train, cfg, |_, _, _| {})?;
        let row = AblationRow::evaluate(&model, test)?;
        log::info!("{}: overall {:.4}", variant.name(), row.overall);
        rows.push(row);
        nets.push(model);
    }
    Ok((AblationTable { rows }, nets))
}
