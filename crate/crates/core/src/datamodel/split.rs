//! Train/val/test split manifests and per-class instance tallies.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{DefectClass, GroundTruthRecord};
use crate::error::{Error, Result};

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// Split name -> image ids, with optional generator provenance.
///
/// On disk this is either a plain `{"train": [...], ...}` mapping or the
/// extended `{"splits": {...}, "counts": {...}, "generator": {...}}` form
/// written by the dataset generator; both parse.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub splits: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<String, BTreeMap<DefectClass, usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

impl SplitManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let manifest = if value.get("splits").is_some() {
            serde_json::from_value(value)?
        } else {
            SplitManifest {
                splits: serde_json::from_value(value)?,
                ..Default::default()
            }
        };
        manifest.check_disjoint()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    fn check_disjoint(&self) -> Result<()> {
        let mut seen: HashMap<&str, &str> = HashMap::new();
        for (split, ids) in &self.splits {
            for id in ids {
                if let Some(prev) = seen.insert(id, split) {
                    return Err(Error::Validation(format!(
                        "image `{id}` appears in both `{prev}` and `{split}`"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fill `counts` from the referenced records.
    pub fn tally(&mut self, records: &[GroundTruthRecord]) -> Result<()> {
        let summary = split_summary(records, self)?;
        self.counts = summary.counts;
        Ok(())
    }
}

/// Per-split, per-class instance counts laid out like a dataset table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub counts: BTreeMap<String, BTreeMap<DefectClass, usize>>,
    pub images: BTreeMap<String, usize>,
}

impl SplitSummary {
    pub fn get(&self, split: &str, class: DefectClass) -> usize {
        self.counts.get(split).and_then(|m| m.get(&class)).copied().unwrap_or(0)
    }

    pub fn total(&self, split: &str) -> usize {
        self.counts.get(split).map_or(0, |m| m.values().sum())
    }
}

pub fn split_summary(records: &[GroundTruthRecord], manifest: &SplitManifest) -> Result<SplitSummary> {
    let by_id: HashMap<&str, &GroundTruthRecord> =
        records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut counts = BTreeMap::new();
    let mut images = BTreeMap::new();
    for name in SPLIT_NAMES.iter().map(|s| s.to_string()).chain(manifest.splits.keys().cloned()) {
        let row: BTreeMap<DefectClass, usize> = DefectClass::ALL.iter().map(|&c| (c, 0)).collect();
        counts.entry(name.clone()).or_insert(row);
        images.entry(name).or_insert(0);
    }
    for (split, ids) in &manifest.splits {
        let row = counts.get_mut(split).expect("row initialized");
        for id in ids {
            let rec = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Resolution(format!("image `{id}` in split `{split}` has no record")))?;
            for d in &rec.defects {
                *row.get_mut(&d.class).expect("all classes present") += 1;
            }
        }
        images.insert(split.clone(), ids.len());
    }
    Ok(SplitSummary { counts, images })
}
