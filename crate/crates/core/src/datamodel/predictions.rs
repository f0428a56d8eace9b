//! Prediction documents: `{"model": str, "images": [{"image": str, "detections": [...]}]}`.
//!
//! Each detection carries `class`, `score` and `bbox`. An optional `source`
//! field overrides the document-level model; the writer only emits it when it
//! differs, which is how merged ensemble output keeps per-detection provenance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DefectClass, Detection};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Serialize, Deserialize)]
struct DetectionDoc {
    class: DefectClass,
    score: f64,
    bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ImageDoc {
    image: String,
    #[serde(default)]
    detections: Vec<DetectionDoc>,
}

#[derive(Serialize, Deserialize)]
struct PredictionDoc {
    model: String,
    images: Vec<ImageDoc>,
}

/// Detections of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePredictions {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

/// A parsed prediction document.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub model: String,
    pub images: Vec<ImagePredictions>,
    /// Non-fatal findings, e.g. duplicate image entries that were merged.
    pub warnings: Vec<String>,
}

impl PredictionSet {
    pub fn new(model: impl Into<String>) -> Self {
        PredictionSet {
            model: model.into(),
            images: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn get(&self, image_id: &str) -> Option<&ImagePredictions> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    pub fn detection_count(&self) -> usize {
        self.images.iter().map(|i| i.detections.len()).sum()
    }

    /// Map from image id to detections.
    pub fn by_image(&self) -> BTreeMap<&str, &[Detection]> {
        self.images
            .iter()
            .map(|i| (i.image_id.as_str(), i.detections.as_slice()))
            .collect()
    }
}

pub fn read_predictions(text: &str) -> Result<PredictionSet> {
    let doc: PredictionDoc = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        match msg.split('`').nth(1) {
            Some(label) if msg.starts_with("unknown variant") => Error::Taxonomy(label.to_string()),
            _ => Error::Parse {
                line: e.line() as u32,
                message: msg,
            },
        }
    })?;
    if doc.model.is_empty() {
        return Err(Error::Validation("prediction document has an empty `model`".into()));
    }

    let mut set = PredictionSet::new(doc.model.clone());
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for img in doc.images {
        let mut dets = Vec::with_capacity(img.detections.len());
        for d in img.detections {
            let source = d.source.unwrap_or_else(|| doc.model.clone());
            dets.push(Detection::new(d.bbox, d.class, d.score, source).map_err(|e| {
                Error::Validation(format!("image `{}`: {e}", img.image))
            })?);
        }
        match index.get(&img.image) {
            Some(&at) => {
                set.warnings
                    .push(format!("duplicate entry for image `{}` merged", img.image));
                set.images[at].detections.extend(dets);
            }
            None => {
                index.insert(img.image.clone(), set.images.len());
                set.images.push(ImagePredictions {
                    image_id: img.image,
                    detections: dets,
                });
            }
        }
    }
    Ok(set)
}

pub fn write_predictions(set: &PredictionSet) -> String {
    let doc = PredictionDoc {
        model: set.model.clone(),
        images: set
            .images
            .iter()
            .map(|img| ImageDoc {
                image: img.image_id.clone(),
                detections: img
                    .detections
                    .iter()
                    .map(|d| DetectionDoc {
                        class: d.class,
                        score: d.score,
                        bbox: d.bbox,
                        source: (d.source != set.model).then(|| d.source.clone()),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("prediction document serializes");
    s.push('\n');
    s
}
