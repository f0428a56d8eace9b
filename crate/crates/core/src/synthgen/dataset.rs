//! Whole-dataset generation: per-image plans, rendering, PNG/JSON output and
//! the split manifest.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{add_noise, derive_seed, render_scene, DefectSpec, NoiseSpec, PatternSpec, SceneOptions};
use crate::datamodel::{write_ground_truth_json, DefectClass, GroundTruthRecord, SplitManifest};
use crate::error::{Error, Result};
use crate::raster::SemImage;

/// Recorded in every manifest so datasets can be regenerated elsewhere.
pub const GENERATOR_ID: &str = "ChaCha8 (rand_chacha 0.9), seed_from_u64 + set_stream";

const DOMAIN_PATTERN: u64 = 1;
const DOMAIN_NOISE: u64 = 2;
const DOMAIN_COUNT: u64 = 3;

/// Class mix proportioned to the reference test split.
pub fn default_mix() -> Vec<(DefectClass, f64)> {
    vec![
        (DefectClass::Gap, 174.0),
        (DefectClass::PGap, 54.0),
        (DefectClass::Microbridge, 78.0),
        (DefectClass::Bridge, 17.0),
        (DefectClass::LineCollapse, 76.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub pattern: PatternSpec,
    pub mix: Vec<(DefectClass, f64)>,
    pub noise: NoiseSpec,
    pub count: usize,
    pub seed: u64,
    /// Inclusive range of defects per image.
    pub defects_per_image: (usize, usize),
    pub scene: SceneOptions,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            pattern: PatternSpec::default(),
            mix: default_mix(),
            noise: NoiseSpec::default(),
            count: 10,
            seed: 0,
            defects_per_image: (1, 4),
            scene: SceneOptions::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.pattern.validate()?;
        self.noise.validate()?;
        if self.count == 0 {
            return Err(Error::param("count", "must be at least 1"));
        }
        if self.mix.iter().any(|(_, w)| !(*w >= 0.0 && w.is_finite())) || self.mix.iter().all(|(_, w)| *w == 0.0) {
            return Err(Error::param("mix", "weights must be non-negative with a positive total"));
        }
        let (lo, hi) = self.defects_per_image;
        if lo > hi {
            return Err(Error::param("defects_per_image", "lower bound exceeds upper bound"));
        }
        Ok(())
    }
}

/// What one image of the dataset will contain.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlan {
    pub index: usize,
    pub image_id: String,
    pub pattern: PatternSpec,
    pub noise: NoiseSpec,
    pub defects: Vec<DefectSpec>,
}

/// A rendered dataset image.
#[derive(Debug, Clone)]
pub struct DatasetImage {
    pub plan: ImagePlan,
    pub clean: SemImage,
    pub noisy: SemImage,
    pub truth: GroundTruthRecord,
}

pub fn image_file_name(index: usize) -> String {
    format!("img_{index:05}.png")
}

/// Decide per-image seeds and defect lists.
///
/// Defect counts per image come from per-image streams; classes are then
/// dealt across the whole dataset by smooth weighted round robin, so the
/// realized class ratio tracks the mix to within one instance per class.
pub fn plan_dataset(cfg: &DatasetConfig) -> Result<Vec<ImagePlan>> {
    cfg.validate()?;
    let mix: Vec<(DefectClass, f64)> = cfg.mix.iter().copied().filter(|(_, w)| *w > 0.0).collect();
    let total: f64 = mix.iter().map(|(_, w)| w).sum();
    let mut current = vec![0.0; mix.len()];
    let (lo, hi) = cfg.defects_per_image;

    let mut plans = Vec::with_capacity(cfg.count);
    for index in 0..cfg.count {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, DOMAIN_COUNT, index as u64));
        let n = rng.random_range(lo..=hi);
        let mut defects: Vec<DefectSpec> = Vec::new();
        for _ in 0..n {
            for (c, (_, w)) in current.iter_mut().zip(&mix) {
                *c += w;
            }
            let pick = (0..mix.len())
                .fold(0, |best, i| if current[i] > current[best] { i } else { best });
            current[pick] -= total;
            let class = mix[pick].0;
            match defects.iter_mut().find(|d| d.class == class) {
                Some(d) => d.count += 1,
                None => defects.push(DefectSpec::new(class, 1)),
            }
        }
        plans.push(ImagePlan {
            index,
            image_id: image_file_name(index),
            pattern: PatternSpec {
                seed: derive_seed(cfg.seed, DOMAIN_PATTERN, index as u64),
                ..cfg.pattern.clone()
            },
            noise: NoiseSpec {
                seed: derive_seed(cfg.seed, DOMAIN_NOISE, index as u64),
                ..cfg.noise.clone()
            },
            defects,
        });
    }
    Ok(plans)
}

pub fn render_dataset_image(cfg: &DatasetConfig, plan: &ImagePlan) -> Result<DatasetImage> {
    let scene = render_scene(&plan.pattern, &plan.defects, &cfg.scene)?;
    let noisy = add_noise(&scene.image, &plan.noise)?;
    let mut truth = scene.truth;
    truth.image_id = plan.image_id.clone();
    Ok(DatasetImage {
        plan: plan.clone(),
        clean: scene.image,
        noisy,
        truth,
    })
}

fn split_of(index: usize, count: usize) -> &'static str {
    let train = count * 8 / 10;
    let val = count / 10;
    if index < train {
        "train"
    } else if index < train + val {
        "val"
    } else {
        "test"
    }
}

/// Render every image and write `images/`, `annotations/` and
/// `manifest.json` under `out`. Output bytes depend only on `cfg`.
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path) -> Result<SplitManifest> {
    let plans = plan_dataset(cfg)?;
    let images_dir = out.join("images");
    let ann_dir = out.join("annotations");
    for dir in [&images_dir, &ann_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let truths: Vec<GroundTruthRecord> = plans
        .par_iter()
        .map(|plan| {
            let img = render_dataset_image(cfg, plan)?;
            img.noisy.save_png(&images_dir.join(&plan.image_id))?;
            let ann = ann_dir.join(format!("img_{:05}.json", plan.index));
            fs::write(&ann, write_ground_truth_json(&img.truth)).map_err(|e| Error::io(&ann, e))?;
            Ok(img.truth)
        })
        .collect::<Result<_>>()?;

    let mut manifest = SplitManifest::default();
    for name in crate::datamodel::SPLIT_NAMES {
        manifest.splits.insert(name.to_string(), Vec::new());
    }
    for plan in &plans {
        manifest
            .splits
            .get_mut(split_of(plan.index, cfg.count))
            .expect("split exists")
            .push(plan.image_id.clone());
    }
    manifest.tally(&truths)?;
    manifest.generator = Some(json!({
        "rng": GENERATOR_ID,
        "config": cfg,
    }));
    let path = out.join("manifest.json");
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
