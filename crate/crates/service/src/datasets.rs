//! Uploaded datasets: zip extraction, validation and frozen snapshots.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use serde::Serialize;

use lsinspect::datamodel::{is_annotation_name, is_image_name, parse_annotation, write_ground_truth_json};
use lsinspect::synthgen::PatternSpec;
use lsinspect::datamodel::SplitManifest;
use lsinspect::{GroundTruthRecord, SemImage};

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub name: String,
    pub reason: String,
}

/// Public description of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetHandle {
    pub id: String,
    pub root: PathBuf,
    pub image_count: usize,
    pub has_ground_truth: bool,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub rejected: Vec<Rejection>,
    /// For derived datasets, the dataset they were computed from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derived_from: Option<String>,
}

/// A dataset as the job runner sees it. Never mutated after registration.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub handle: DatasetHandle,
    /// Sorted image file names under `root/images`.
    pub images: Vec<String>,
    pub truths: BTreeMap<String, GroundTruthRecord>,
    pub pattern: Option<PatternSpec>,
}

impl Dataset {
    pub fn image_path(&self, name: &str) -> PathBuf {
        self.handle.root.join("images").join(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.images.binary_search_by(|n| n.as_str().cmp(name)).is_ok()
    }

    /// Ground truth for the dataset's images, in image order.
    pub fn truth_records(&self) -> Vec<GroundTruthRecord> {
        self.images.iter().filter_map(|n| self.truths.get(n).cloned()).collect()
    }
}

fn base_name(path: &str) -> Option<&str> {
    let name = path.rsplit(['/', '\\']).next()?;
    (!name.is_empty()).then_some(name)
}

fn pattern_of_manifest(text: &str) -> Result<Option<PatternSpec>, String> {
    let manifest = SplitManifest::from_json(text).map_err(|e| e.to_string())?;
    match manifest.generator.as_ref().and_then(|g| g.get("config")).and_then(|c| c.get("pattern")) {
        Some(p) => serde_json::from_value(p.clone()).map(Some).map_err(|e| e.to_string()),
        None => Ok(None),
    }
}

/// Extract `archive` into `root` and build the dataset. Members are
/// flattened to their base names; annotations are recognised by extension
/// and a generator `manifest.json` supplies the line/space pattern.
pub fn extract_archive(
    id: &str,
    archive: &[u8],
    root: &Path,
    pixel_size_nm: f64,
    created_at: u64,
) -> ApiResult<Dataset> {
    let mut zip = zip::ZipArchive::new(Cursor::new(archive))
        .map_err(|e| ApiError::unprocessable("bad_archive", format!("not a readable zip archive: {e}")))?;
    let images_dir = root.join("images");
    let ann_dir = root.join("annotations");
    for dir in [&images_dir, &ann_dir] {
        fs::create_dir_all(dir).map_err(|e| ApiError::internal(format!("creating {}: {e}", dir.display())))?;
    }

    let mut images = Vec::new();
    let mut truths = BTreeMap::new();
    let mut rejected = Vec::new();
    let mut pattern = None;
    let mut reject = |name: &str, reason: String| {
        rejected.push(Rejection {
            name: name.to_string(),
            reason,
        })
    };

    for i in 0..zip.len() {
        let mut member = zip
            .by_index(i)
            .map_err(|e| ApiError::unprocessable("bad_archive", format!("member {i}: {e}")))?;
        if member.is_dir() {
            continue;
        }
        let full = member.name().to_string();
        let Some(name) = base_name(&full).map(str::to_string) else {
            continue;
        };
        if full.starts_with("__MACOSX/") || name.starts_with('.') {
            continue;
        }
        let mut bytes = Vec::new();
        if let Err(e) = member.read_to_end(&mut bytes) {
            reject(&full, format!("unreadable member: {e}"));
            continue;
        }

        if is_image_name(&name) {
            if images.contains(&name) {
                reject(&full, "duplicate image name".into());
                continue;
            }
            match SemImage::decode(&bytes, pixel_size_nm) {
                Ok(_) => {
                    let dest = images_dir.join(&name);
                    fs::write(&dest, &bytes)
                        .map_err(|e| ApiError::internal(format!("writing {}: {e}", dest.display())))?;
                    images.push(name);
                }
                Err(e) => reject(&full, format!("undecodable image: {e}")),
            }
        } else if name == "manifest.json" {
            match std::str::from_utf8(&bytes).map_err(|e| e.to_string()).and_then(pattern_of_manifest) {
                Ok(p) => pattern = p.or(pattern),
                Err(e) => reject(&full, format!("bad manifest: {e}")),
            }
        } else if is_annotation_name(&name) {
            let parsed = std::str::from_utf8(&bytes)
                .map_err(|e| e.to_string())
                .and_then(|t| parse_annotation(&name, t).map_err(|e| e.to_string()));
            match parsed {
                Ok(record) => {
                    let stem = Path::new(&record.image_id)
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or("record")
                        .to_string();
                    let dest = ann_dir.join(format!("{stem}.json"));
                    fs::write(&dest, write_ground_truth_json(&record))
                        .map_err(|e| ApiError::internal(format!("writing {}: {e}", dest.display())))?;
                    truths.insert(record.image_id.clone(), record);
                }
                Err(e) => reject(&full, format!("bad annotation: {e}")),
            }
        } else {
            reject(&full, "unsupported file type".into());
        }
    }

    if images.is_empty() {
        let _ = fs::remove_dir_all(root);
        let mut err = ApiError::unprocessable("empty_dataset", "archive contains no decodable images");
        err.body.fields = rejected.iter().map(|r| r.name.clone()).collect();
        return Err(err);
    }
    images.sort();
    truths.retain(|k, _| images.binary_search(k).is_ok());
    Ok(Dataset {
        handle: DatasetHandle {
            id: id.to_string(),
            root: root.to_path_buf(),
            image_count: images.len(),
            has_ground_truth: !truths.is_empty(),
            created_at,
            rejected,
            derived_from: None,
        },
        images,
        truths,
        pattern,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use zip::write::SimpleFileOptions;

    fn zip_of(members: &[(&str, Vec<u8>)]) -> Vec<u8> {
        let mut w = zip::ZipWriter::new(Cursor::new(Vec::new()));
        for (name, bytes) in members {
            w.start_file(*name, SimpleFileOptions::default()).unwrap();
            w.write_all(bytes).unwrap();
        }
        w.finish().unwrap().into_inner()
    }

    fn png() -> Vec<u8> {
        SemImage::constant(8, 8, 0.5).unwrap().encode_png()
    }

    #[test]
    fn text_member_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let data = zip_of(&[("a/1.png", png()), ("b/2.png", png()), ("readme.txt", b"hi".to_vec())]);
        let ds = extract_archive("d", &data, tmp.path(), 0.8, 0).unwrap();
        assert_eq!(ds.images, vec!["1.png", "2.png"]);
        assert_eq!(ds.handle.rejected.len(), 1);
        assert!(!ds.handle.has_ground_truth);
    }

    #[test]
    fn corrupt_png_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let data = zip_of(&[("1.png", png()), ("2.png", b"not a png".to_vec())]);
        let ds = extract_archive("d", &data, tmp.path(), 0.8, 0).unwrap();
        assert_eq!(ds.handle.image_count, 1);
        assert_eq!(ds.handle.rejected[0].name, "2.png");
    }

    #[test]
    fn empty_archive_fails() {
        let tmp = tempfile::tempdir().unwrap();
        let err = extract_archive("d", &zip_of(&[]), &tmp.path().join("d"), 0.8, 0).unwrap_err();
        assert_eq!(err.status.as_u16(), 422);
    }

    #[test]
    fn annotations_attach_to_images() {
        let tmp = tempfile::tempdir().unwrap();
        let xml = "<annotation><filename>1.png</filename><size><width>8</width><height>8</height></size></annotation>";
        let data = zip_of(&[("1.png", png()), ("1.xml", xml.as_bytes().to_vec())]);
        let ds = extract_archive("d", &data, tmp.path(), 0.8, 0).unwrap();
        assert!(ds.handle.has_ground_truth);
        assert_eq!(ds.truth_records().len(), 1);
    }
}
