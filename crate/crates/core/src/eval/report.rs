use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::mean_variance;
use crate::error::{Error, Result};
use crate::features::FeatureKind;

/// Group name used for novel-class rows.
pub const CLASS_GROUP: &str = "class";

/// One AUROC measurement. `group` is [`CLASS_GROUP`] for novel-class runs
/// (then `key` is the inlier class) or a challenge name (then `key` is the
/// level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocRecord {
    pub dataset: String,
    pub feature_kind: FeatureKind,
    pub group: String,
    pub key: u32,
    pub fold: usize,
    pub auroc: f64,
    pub inliers: usize,
    pub outliers: usize,
}

impl AurocRecord {
    pub fn class_or_level(&self) -> String {
        if self.group == CLASS_GROUP {
            self.key.to_string()
        } else {
            format!("{}/{}", self.group, self.key)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRecord {
    /// `recon_total`, `kl_total` or `gradient_norm`.
    pub statistic: String,
    pub inlier_class: u32,
    pub bins: usize,
    pub percent: f64,
    pub inliers: usize,
    pub outliers: usize,
}

/// Mean and variance over the per-key means of one (group, feature kind).
/// Level 0 rows are excluded from challenge summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub group: String,
    pub feature_kind: FeatureKind,
    pub mean: f64,
    pub variance: f64,
    pub keys: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub dataset_checksum: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub hyperparameters: BTreeMap<String, String>,
    pub records: Vec<AurocRecord>,
    pub overlaps: Vec<OverlapRecord>,
    pub summary: Vec<SummaryEntry>,
}

pub const CSV_HEADER: &str = "dataset,feature_kind,class_or_level,fold,auroc";

impl EvalReport {
    /// Recomputes `summary` from `records`.
    pub fn summarize(&mut self) {
        let mut per_key: BTreeMap<(String, FeatureKind), BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
        for r in &self.records {
            if r.group != CLASS_GROUP && r.key == 0 {
                continue;
            }
            per_key
                .entry((r.group.clone(), r.feature_kind))
                .or_default()
                .entry(r.key)
                .or_default()
                .push(r.auroc);
        }
        self.summary = per_key
            .into_iter()
            .map(|((group, feature_kind), keys)| {
                let means: Vec<f64> = keys.values().map(|v| mean_variance(v).0).collect();
                let (mean, variance) = mean_variance(&means);
                SummaryEntry {
                    group,
                    feature_kind,
                    mean,
                    variance,
                    keys: means.len(),
                }
            })
            .collect();
    }

    pub fn summary_for(&self, group: &str, kind: FeatureKind) -> Option<&SummaryEntry> {
        self.summary.iter().find(|s| s.group == group && s.feature_kind == kind)
    }

    /// Mean AUROC over folds for one (group, key, kind).
    pub fn mean_auroc(&self, group: &str, key: u32, kind: FeatureKind) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.group == group && r.key == key && r.feature_kind == kind)
            .map(|r| r.auroc)
            .collect();
        (!v.is_empty()).then(|| mean_variance(&v).0)
    }

    pub fn overlap(&self, statistic: &str) -> Option<f64> {
        self.overlaps.iter().find(|o| o.statistic == statistic).map(|o| o.percent)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.dataset, r.feature_kind, r.class_or_level(), r.fold, r.auroc);
        }
        out
    }

    /// Pretty JSON with a trailing newline. Field order is fixed and maps are
    /// sorted, so parsing and re-serializing reproduces the same bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("report json", e.column() as u64, e.to_string()))
    }
}
