//! Conventional threshold detector: binarize, compare against the ideal
//! binarized design, and turn the connected differences into classified
//! detections.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DefectClass, Detection, ImagePredictions};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::raster::SemImage;
use crate::synthgen::PatternSpec;

pub const BASELINE_SOURCE: &str = "baseline";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    pub intensity_threshold: f64,
    pub min_failure_area_px: usize,
    pub expected_pattern: PatternSpec,
    /// Components whose boxes are at most this many pixels apart merge.
    pub merge_distance_px: usize,
    /// Padding added around each component box. The default matches the
    /// generator's box convention (blur halo plus its own 2 px pad).
    pub box_pad_px: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            intensity_threshold: 0.5,
            min_failure_area_px: 8,
            expected_pattern: PatternSpec::default(),
            merge_distance_px: 1,
            box_pad_px: 4.0,
        }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        let p = &self.expected_pattern;
        if !(self.intensity_threshold > p.space_intensity && self.intensity_threshold < p.line_intensity) {
            return Err(Error::param(
                "intensity_threshold",
                format!(
                    "{} not strictly between space {} and line {}",
                    self.intensity_threshold, p.space_intensity, p.line_intensity
                ),
            ));
        }
        if self.min_failure_area_px == 0 {
            return Err(Error::param("min_failure_area_px", "must be at least 1"));
        }
        if !(self.box_pad_px >= 0.0 && self.box_pad_px.is_finite()) {
            return Err(Error::param("box_pad_px", "must be non-negative"));
        }
        p.validate()
    }
}

#[derive(Debug, Default)]
struct Component {
    pixels: Vec<(usize, usize)>,
    extra: usize,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl Component {
    fn push(&mut self, x: usize, y: usize, extra: bool) {
        if self.pixels.is_empty() {
            (self.x0, self.x1, self.y0, self.y1) = (x, x, y, y);
        }
        self.x0 = self.x0.min(x);
        self.x1 = self.x1.max(x);
        self.y0 = self.y0.min(y);
        self.y1 = self.y1.max(y);
        self.extra += extra as usize;
        self.pixels.push((x, y));
    }

    fn absorb(&mut self, other: Component) {
        for (x, y) in other.pixels {
            self.push(x, y, false);
        }
        self.extra += other.extra;
    }

    fn gap_to(&self, o: &Component) -> usize {
        let dx = o.x0.saturating_sub(self.x1).max(self.x0.saturating_sub(o.x1));
        let dy = o.y0.saturating_sub(self.y1).max(self.y0.saturating_sub(o.y1));
        dx.max(dy).saturating_sub(1)
    }
}

fn components(diff: &[Option<bool>], w: usize, h: usize) -> Vec<Component> {
    let mut seen = vec![false; diff.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..diff.len() {
        if seen[start] || diff[start].is_none() {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Component::default();
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.push(x, y, diff[i] == Some(true));
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !seen[j] && diff[j].is_some() {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

fn merge_close(mut comps: Vec<Component>, distance: usize) -> Vec<Component> {
    loop {
        let mut merged = false;
        let mut i = 0;
        while i < comps.len() {
            let mut j = i + 1;
            while j < comps.len() {
                if comps[i].gap_to(&comps[j]) <= distance {
                    let other = comps.swap_remove(j);
                    comps[i].absorb(other);
                    merged = true;
                } else {
                    j += 1;
                }
            }
            i += 1;
        }
        if !merged {
            return comps;
        }
    }
}

/// True when some row of the component, together with the design on both
/// sides, runs from one `outer` region to the next: the anomaly connects two
/// lines (extra resist) or cuts through one (missing resist).
fn spans_region(c: &Component, ideal: &[bool], outer_is_line: bool) -> bool {
    let w = ideal.len();
    let mut rows: std::collections::BTreeMap<usize, (usize, usize, usize)> = Default::default();
    for &(x, y) in &c.pixels {
        let e = rows.entry(y).or_insert((x, x, 0));
        e.0 = e.0.min(x);
        e.1 = e.1.max(x);
        e.2 += 1;
    }
    rows.values().any(|&(a, b, n)| {
        a > 0 && b + 1 < w && ideal[a - 1] == outer_is_line && ideal[b + 1] == outer_is_line && n * 5 >= (b - a + 1) * 4
    })
}

fn classify(c: &Component, ideal: &[bool], height: usize, space_width: f64) -> DefectClass {
    let extra = c.extra * 2 >= c.pixels.len();
    let length = (c.y1 - c.y0 + 1) as f64;
    if extra {
        if !spans_region(c, ideal, true) {
            DefectClass::Microbridge
        } else if length >= 0.25 * height as f64 {
            DefectClass::LineCollapse
        } else if length >= space_width {
            DefectClass::Bridge
        } else {
            DefectClass::Microbridge
        }
    } else if spans_region(c, ideal, false) {
        DefectClass::Gap
    } else {
        DefectClass::PGap
    }
}

/// Detect anomalies in one image.
pub fn detect_conventional(image: &SemImage, params: &BaselineParams) -> Result<Vec<Detection>> {
    params.validate()?;
    let (w, h) = (image.width(), image.height());
    let thr = params.intensity_threshold;
    let ideal: Vec<bool> = params
        .expected_pattern
        .nominal_row(w)?
        .iter()
        .map(|&v| v >= thr)
        .collect();

    // Some(true): resist where the design has space; Some(false): the reverse
    let diff: Vec<Option<bool>> = image
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let line = v >= thr;
            (line != ideal[i % w]).then_some(line)
        })
        .collect();

    let comps = merge_close(components(&diff, w, h), params.merge_distance_px);
    let min_area = params.min_failure_area_px;
    let mut dets: Vec<Detection> = comps
        .iter()
        .filter(|c| c.pixels.len() >= min_area)
        .map(|c| {
            let class = classify(c, &ideal, h, params.expected_pattern.space_width());
            let raw = BBox::new(c.x0 as f64, c.y0 as f64, (c.x1 + 1) as f64, (c.y1 + 1) as f64)?;
            let bbox = raw
                .pad(params.box_pad_px)?
                .clip(w as f64, h as f64)
                .expect("component lies inside the image");
            let score = (c.pixels.len() as f64 / (4 * min_area) as f64).min(1.0);
            Detection::new(bbox, class, score, BASELINE_SOURCE)
        })
        .collect::<Result<_>>()?;
    dets.sort_by(|a, b| a.bbox.corner_cmp(&b.bbox));
    Ok(dets)
}

/// Run the detector over named images in parallel; output keeps input order.
pub fn detect_batch(images: &[(String, SemImage)], params: &BaselineParams) -> Result<Vec<ImagePredictions>> {
    images
        .par_iter()
        .map(|(id, img)| {
            Ok(ImagePredictions {
                image_id: id.clone(),
                detections: detect_conventional(img, params)?,
            })
        })
        .collect()
}
