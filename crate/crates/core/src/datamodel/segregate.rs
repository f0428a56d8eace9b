//! Sorting images into one folder per detected defect class.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::ImagePredictions;
use crate::error::{Error, Result};

pub const NO_DEFECT_FOLDER: &str = "no_defect";

/// Folder name -> image ids, plus per-image copy failures.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SegregationPlan {
    pub folders: BTreeMap<String, Vec<String>>,
    pub errors: BTreeMap<String, String>,
}

impl SegregationPlan {
    pub fn count(&self, folder: &str) -> usize {
        self.folders.get(folder).map_or(0, Vec::len)
    }
}

/// Plan (and optionally execute) the per-class copy of every image.
///
/// An image goes into the folder of every class with at least one detection
/// scoring `>= score_threshold`; images without one go to `no_defect/`. When
/// both roots are given, images are copied from `image_root/<id>` to
/// `output_root/<folder>/<id>`; a missing source is recorded in `errors` and
/// does not stop the plan.
pub fn segregate(
    images: &[ImagePredictions],
    score_threshold: f64,
    image_root: Option<&Path>,
    output_root: Option<&Path>,
) -> Result<SegregationPlan> {
    if !(0.0..=1.0).contains(&score_threshold) {
        return Err(Error::param("score_threshold", format!("{score_threshold} outside [0, 1]")));
    }

    let mut plan = SegregationPlan::default();
    let mut assignments: Vec<(&str, Vec<String>)> = Vec::new();
    for img in images {
        let classes: BTreeSet<&str> = img
            .detections
            .iter()
            .filter(|d| d.score >= score_threshold)
            .map(|d| d.class.as_str())
            .collect();
        let folders: Vec<String> = if classes.is_empty() {
            vec![NO_DEFECT_FOLDER.to_string()]
        } else {
            classes.into_iter().map(str::to_string).collect()
        };
        for f in &folders {
            plan.folders.entry(f.clone()).or_default().push(img.image_id.clone());
        }
        assignments.push((img.image_id.as_str(), folders));
    }
    for ids in plan.folders.values_mut() {
        ids.sort();
    }

    let (Some(src_root), Some(out_root)) = (image_root, output_root) else {
        return Ok(plan);
    };
    fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    // Probe writability once so an unusable output root fails the whole call.
    let probe = out_root.join(".segregate-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    let _ = fs::remove_file(&probe);

    let failures: Vec<(String, String)> = assignments
        .par_iter()
        .filter_map(|(id, folders)| {
            let src = src_root.join(id);
            if !src.is_file() {
                return Some((id.to_string(), format!("source image {} not found", src.display())));
            }
            for f in folders {
                let dst = out_root.join(f).join(id);
                let res = dst
                    .parent()
                    .map_or(Ok(()), fs::create_dir_all)
                    .and_then(|_| fs::copy(&src, &dst).map(|_| ()));
                if let Err(e) = res {
                    return Some((id.to_string(), format!("copy to {}: {e}", dst.display())));
                }
            }
            None
        })
        .collect();
    plan.errors.extend(failures);
    Ok(plan)
}
