//! Preference-ordered affirmative fusion of several detectors' outputs.
//!
//! Everything the first-ranked model predicts is kept. Each lower-ranked
//! model then contributes only the boxes that do not overlap what is already
//! accepted.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DefectClass, Detection, ImagePredictions, PredictionSet};
use crate::error::{Error, Result};
use crate::geometry::iou;

pub const ENSEMBLE_MODEL: &str = "ensemble";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapScope {
    /// Compare against every detection accepted so far.
    AllAccepted,
    /// Compare against the first model's detections only.
    FirstModelOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassScope {
    ClassAgnostic,
    ClassAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub preference_order: Vec<String>,
    pub iou_threshold: f64,
    pub overlap_scope: OverlapScope,
    pub class_scope: ClassScope,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            preference_order: ["resnet50", "resnet152", "resnet101"].map(String::from).to_vec(),
            iou_threshold: 0.5,
            overlap_scope: OverlapScope::AllAccepted,
            class_scope: ClassScope::ClassAgnostic,
        }
    }
}

impl EnsembleConfig {
    pub fn with_order<S: Into<String>>(order: impl IntoIterator<Item = S>) -> Self {
        EnsembleConfig {
            preference_order: order.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.preference_order.is_empty() {
            return Err(Error::param("preference_order", "at least one model is required"));
        }
        let unique: BTreeSet<&String> = self.preference_order.iter().collect();
        if unique.len() != self.preference_order.len() {
            return Err(Error::param("preference_order", "model identifiers must be unique"));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::param("iou_threshold", format!("{} outside [0, 1]", self.iou_threshold)));
        }
        Ok(())
    }
}

/// Merged detections plus non-fatal findings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeOutput {
    pub detections: Vec<Detection>,
    pub warnings: Vec<String>,
}

/// Descending score, then box corners, then class name.
pub(crate) fn processing_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.bbox.corner_cmp(&b.bbox))
        .then_with(|| a.class.as_str().cmp(b.class.as_str()))
}

fn sorted(dets: &[Detection]) -> Vec<Detection> {
    let mut v = dets.to_vec();
    v.sort_by(processing_order);
    v
}

/// Fuse one image's detections from several models.
pub fn affirmative_merge(per_model: &BTreeMap<String, Vec<Detection>>, cfg: &EnsembleConfig) -> Result<MergeOutput> {
    cfg.validate()?;
    let mut out = MergeOutput::default();
    for id in per_model.keys() {
        if !cfg.preference_order.contains(id) {
            out.warnings.push(format!("model `{id}` is not in the preference order and was ignored"));
        }
    }

    let mut ranked = Vec::with_capacity(cfg.preference_order.len());
    for id in &cfg.preference_order {
        let dets = per_model
            .get(id)
            .ok_or_else(|| Error::Contract(format!("ranked model `{id}` has no predictions")))?;
        ranked.push(sorted(dets));
    }

    let mut ranked = ranked.into_iter();
    let first = ranked.next().expect("validated non-empty");
    let first_len = first.len();
    out.detections = first;
    for dets in ranked {
        for d in dets {
            let scope = match cfg.overlap_scope {
                OverlapScope::AllAccepted => &out.detections[..],
                OverlapScope::FirstModelOnly => &out.detections[..first_len],
            };
            let clash = scope.iter().any(|a| {
                (cfg.class_scope == ClassScope::ClassAgnostic || a.class == d.class)
                    && iou(&a.bbox, &d.bbox) >= cfg.iou_threshold
            });
            if !clash {
                out.detections.push(d);
            }
        }
    }
    Ok(out)
}

/// Fuse whole prediction documents image by image. The preference order
/// names the documents' `model` fields. Images missing from a document count
/// as having no detections from that model.
pub fn merge_prediction_sets(sets: &[PredictionSet], cfg: &EnsembleConfig) -> Result<(PredictionSet, Vec<String>)> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let mut by_model: BTreeMap<&str, &PredictionSet> = BTreeMap::new();
    for s in sets {
        if by_model.insert(s.model.as_str(), s).is_some() {
            return Err(Error::Validation(format!("two prediction documents claim model `{}`", s.model)));
        }
        warnings.extend(s.warnings.iter().cloned());
    }
    for id in by_model.keys() {
        if !cfg.preference_order.iter().any(|m| m == id) {
            warnings.push(format!("model `{id}` is not in the preference order and was ignored"));
        }
    }
    let ranked: Vec<&PredictionSet> = cfg
        .preference_order
        .iter()
        .map(|id| {
            by_model
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Contract(format!("ranked model `{id}` has no prediction document")))
        })
        .collect::<Result<_>>()?;

    let mut image_ids: Vec<&str> = Vec::new();
    let mut seen = BTreeSet::new();
    for s in &ranked {
        for img in &s.images {
            if seen.insert(img.image_id.as_str()) {
                image_ids.push(&img.image_id);
            }
        }
    }

    let images: Vec<ImagePredictions> = image_ids
        .par_iter()
        .map(|&id| {
            let per_model: BTreeMap<String, Vec<Detection>> = ranked
                .iter()
                .map(|s| (s.model.clone(), s.get(id).map(|i| i.detections.clone()).unwrap_or_default()))
                .collect();
            let merged = affirmative_merge(&per_model, cfg)?;
            Ok(ImagePredictions {
                image_id: id.to_string(),
                detections: merged.detections,
            })
        })
        .collect::<Result<_>>()?;

    let mut set = PredictionSet::new(ENSEMBLE_MODEL);
    set.images = images;
    Ok((set, warnings))
}

/// Detections split by a score band for one class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BandSplit {
    pub strict: Vec<Detection>,
    pub weak: Vec<Detection>,
}

/// Separate confident detections of `class` from a weak band of the same
/// class. Other classes pass to `strict` unchanged.
pub fn score_band_filter(
    detections: &[Detection],
    class: DefectClass,
    strict_min: f64,
    weak_band: (f64, f64),
) -> Result<BandSplit> {
    let (low, high) = weak_band;
    if !(0.0 <= low && low < high && high <= strict_min && strict_min <= 1.0) {
        return Err(Error::param(
            "weak_band",
            format!("need 0 <= {low} < {high} <= {strict_min} <= 1"),
        ));
    }
    let mut split = BandSplit::default();
    for d in detections {
        if d.class != class || d.score >= strict_min {
            split.strict.push(d.clone());
        } else if d.score >= low && d.score < high {
            split.weak.push(d.clone());
        }
    }
    Ok(split)
}
