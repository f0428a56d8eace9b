//! Reading dataset folders: `images/`, `annotations/` and `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{parse_voc_annotation, read_ground_truth_json, GroundTruthRecord, SplitManifest};
use crate::error::{Error, Result};
use crate::raster::SemImage;
use crate::synthgen::PatternSpec;

pub const IMAGE_EXTENSIONS: [&str; 5] = ["png", "tif", "tiff", "jpg", "jpeg"];

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

pub fn is_image_name(name: &str) -> bool {
    extension(Path::new(name)).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()))
}

pub fn is_annotation_name(name: &str) -> bool {
    matches!(extension(Path::new(name)).as_deref(), Some("xml" | "json"))
}

/// Parse an annotation, choosing the reader by extension.
pub fn parse_annotation(name: &str, text: &str) -> Result<GroundTruthRecord> {
    match extension(Path::new(name)).as_deref() {
        Some("xml") => parse_voc_annotation(text),
        Some("json") => read_ground_truth_json(text),
        _ => Err(Error::Validation(format!("`{name}` is not an annotation file"))),
    }
}

/// `root/images` when it exists, else `root` itself.
pub fn images_dir(root: &Path) -> PathBuf {
    let nested = root.join("images");
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

fn sorted_entries(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
            continue;
        };
        if keep(&name) {
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Every image under `dir` (or `dir/images`), keyed by file name, sorted.
pub fn load_images(dir: &Path, pixel_size_nm: f64) -> Result<Vec<(String, SemImage)>> {
    let entries = sorted_entries(&images_dir(dir), is_image_name)?;
    entries
        .into_par_iter()
        .map(|(name, path)| Ok((name, SemImage::load(&path, pixel_size_nm)?)))
        .collect()
}

/// Ground truth from a directory of `.json`/`.xml` files, or from
/// `root/annotations` when given a dataset root. Sorted by image id.
pub fn load_annotations(path: &Path) -> Result<Vec<GroundTruthRecord>> {
    let nested = path.join("annotations");
    let dir = if nested.is_dir() { nested } else { path.to_path_buf() };
    let mut records = sorted_entries(&dir, |n| is_annotation_name(n) && n != "manifest.json")?
        .into_iter()
        .map(|(name, p)| {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            parse_annotation(&name, &text)
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(records)
}

/// The pattern recorded by the generator in `root/manifest.json`, if any.
pub fn manifest_pattern(root: &Path) -> Result<Option<PatternSpec>> {
    let path = root.join("manifest.json");
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = SplitManifest::from_json(&text)?;
    let pattern = manifest
        .generator
        .as_ref()
        .and_then(|g| g.get("config"))
        .and_then(|c| c.get("pattern"))
        .cloned();
    match pattern {
        Some(p) => Ok(Some(serde_json::from_value(p)?)),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_dataset, DatasetConfig};

    #[test]
    fn name_filters() {
        assert!(is_image_name("a.PNG"));
        assert!(is_image_name("b.tiff"));
        assert!(!is_image_name("notes.txt"));
        assert!(is_annotation_name("a.xml"));
        assert!(!is_annotation_name("a.png"));
    }

    #[test]
    fn generated_folder_loads_back() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = DatasetConfig {
            count: 3,
            seed: 4,
            ..Default::default()
        };
        cfg.pattern.image_size = 256;
        generate_dataset(&cfg, tmp.path()).unwrap();
        let images = load_images(tmp.path(), 0.8).unwrap();
        let truths = load_annotations(tmp.path()).unwrap();
        assert_eq!(images.len(), 3);
        assert_eq!(
            images.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
            truths.iter().map(|t| t.image_id.as_str()).collect::<Vec<_>>()
        );
        let pattern = manifest_pattern(tmp.path()).unwrap().unwrap();
        assert_eq!(pattern.image_size, 256);
        assert_eq!(pattern.pitch_px, cfg.pattern.pitch_px);
    }

    #[test]
    fn plain_folder_has_no_pattern() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(manifest_pattern(tmp.path()).unwrap().is_none());
        assert!(load_images(tmp.path(), 0.8).unwrap().is_empty());
    }
}
