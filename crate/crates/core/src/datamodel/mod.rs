//! Defect taxonomy, annotations, prediction files, dataset splits and the CSV
//! defect report: every on-disk format the pipeline reads or writes.

mod csv_report;
mod folder;
mod predictions;
mod segregate;
mod split;
mod voc;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use csv_report::{export_csv, format_sig6, DefectCsvRow, CSV_HEADER};
pub use folder::{
    images_dir, is_annotation_name, is_image_name, load_annotations, load_images, manifest_pattern, parse_annotation,
    IMAGE_EXTENSIONS,
};
pub use predictions::{read_predictions, write_predictions, ImagePredictions, PredictionSet};
pub use segregate::{segregate, SegregationPlan, NO_DEFECT_FOLDER};
pub use split::{split_summary, SplitManifest, SplitSummary, SPLIT_NAMES};
pub use voc::{parse_voc_annotation, read_ground_truth_json, to_voc_xml, write_ground_truth_json};

/// Closed set of defect labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    Gap,
    PGap,
    Microbridge,
    Bridge,
    LineCollapse,
}

impl DefectClass {
    /// All classes in report order.
    pub const ALL: [DefectClass; 5] = [
        DefectClass::Gap,
        DefectClass::PGap,
        DefectClass::Microbridge,
        DefectClass::Bridge,
        DefectClass::LineCollapse,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DefectClass::Gap => "gap",
            DefectClass::PGap => "p_gap",
            DefectClass::Microbridge => "microbridge",
            DefectClass::Bridge => "bridge",
            DefectClass::LineCollapse => "line_collapse",
        }
    }

    pub fn index(&self) -> usize {
        DefectClass::ALL.iter().position(|c| c == self).unwrap()
    }
}

impl fmt::Display for DefectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DefectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DefectClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Taxonomy(s.to_string()))
    }
}

/// One scored, classified box emitted by a detector or by the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class: DefectClass,
    pub score: f64,
    /// Identifier of the model that produced the detection.
    pub source: String,
}

impl Detection {
    pub fn new(bbox: BBox, class: DefectClass, score: f64, source: impl Into<String>) -> Result<Self> {
        let source = source.into();
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Validation(format!("score {score} outside [0, 1]")));
        }
        if source.is_empty() {
            return Err(Error::Validation("detection source is empty".into()));
        }
        Ok(Detection {
            bbox,
            class,
            score,
            source,
        })
    }
}

/// A labeled defect instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDefect {
    pub class: DefectClass,
    pub bbox: BBox,
}

/// All labeled defects of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    #[serde(rename = "image")]
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub defects: Vec<GroundTruthDefect>,
}

impl GroundTruthRecord {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        GroundTruthRecord {
            image_id: image_id.into(),
            width,
            height,
            defects: Vec::new(),
        }
    }

    /// Check that every box lies within the image.
    pub fn validate(&self) -> Result<()> {
        for d in &self.defects {
            if !d.bbox.within(self.width as f64, self.height as f64) {
                let [x_min, y_min, x_max, y_max] = d.bbox.corners();
                return Err(Error::Bounds {
                    x_min,
                    y_min,
                    x_max,
                    y_max,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }

    pub fn count(&self, class: DefectClass) -> usize {
        self.defects.iter().filter(|d| d.class == class).count()
    }
}
