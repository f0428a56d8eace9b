//! Line/space SEM defect inspection toolkit.

pub mod baseline;
pub mod datamodel;
pub mod denoise;
pub mod ensemble;
pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod raster;
pub mod retina;
pub mod synthgen;

pub use datamodel::{DefectClass, Detection, GroundTruthDefect, GroundTruthRecord, ImagePredictions, PredictionSet};
pub use error::{Error, Result};
pub use geometry::{iou, nms, BBox};
pub use raster::SemImage;
