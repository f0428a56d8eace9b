//! Deterministic line/space SEM-like image synthesis with injected defects.
//!
//! Lines run vertically with a constant x period. The renderer builds, row by
//! row, the list of resist segments (lines, then defects, then optional
//! footing bumps), rasterizes them by exact area coverage, and blurs the
//! result with a Gaussian of `edge_sigma_px` to soften edges.
//!
//! Randomness comes from ChaCha8 streams keyed by the pattern seed, so a
//! `(PatternSpec, defects)` pair always renders the same raster. Line-edge
//! roughness and charging depend only on the pattern, never on the defects,
//! which makes the defect-free render of the same spec an exact reference.
//!
//! Noise: for the Gaussian model the mean shift of `noisy - clean` over `n`
//! unclamped pixels stays within `3 * sigma / sqrt(n)` with probability
//! 0.997; clamping at 0 and 1 only matters when intensities sit within a few
//! sigma of the range limits.

mod dataset;
mod layout;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{DefectClass, GroundTruthDefect, GroundTruthRecord};
use crate::denoise::gaussian_blur_values;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::raster::{SemImage, DEFAULT_PIXEL_SIZE_NM};
use layout::RowLayout;

pub use dataset::{
    default_mix, generate_dataset, image_file_name, plan_dataset, render_dataset_image, DatasetConfig, DatasetImage, ImagePlan,
    GENERATOR_ID,
};

/// Padding added around the changed-pixel box of every defect.
pub const GT_PAD_PX: f64 = 2.0;
/// A pixel counts as modified by a defect when it moves by more than half an 8-bit level.
pub const CHANGE_EPS: f64 = 1.0 / 512.0;
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
const LWR_CORRELATION_PX: f64 = 3.0;

const STREAM_LWR: u64 = 1;
const STREAM_DEFECTS: u64 = 2;
const STREAM_FOOTING: u64 = 3;

/// Seed for stream `index` of domain `domain` derived from a master seed.
pub(crate) fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng.next_u64()
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Geometry and contrast of the line/space grating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternSpec {
    pub image_size: usize,
    pub pitch_px: f64,
    /// Line width over pitch.
    pub line_duty: f64,
    pub line_intensity: f64,
    pub space_intensity: f64,
    pub edge_sigma_px: f64,
    /// Standard deviation of per-row edge displacement.
    pub lwr_sigma_px: f64,
    /// Lines are scaled by factors drawn uniformly from `[1 - c, 1 + c]`.
    pub charging_contrast: f64,
    pub pixel_size_nm: f64,
    pub seed: u64,
}

impl Default for PatternSpec {
    fn default() -> Self {
        PatternSpec {
            image_size: 1024,
            pitch_px: 40.0,
            line_duty: 0.5,
            line_intensity: 0.75,
            space_intensity: 0.25,
            edge_sigma_px: 0.6,
            lwr_sigma_px: 0.0,
            charging_contrast: 0.0,
            pixel_size_nm: DEFAULT_PIXEL_SIZE_NM,
            seed: 0,
        }
    }
}

/// Nominal left/right edge of one line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineEdges {
    pub left: f64,
    pub right: f64,
}

impl PatternSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::param("image_size", "must be at least 8 px"));
        }
        if !(self.line_duty > 0.0 && self.line_duty < 1.0) {
            return Err(Error::param("line_duty", format!("{} outside (0, 1)", self.line_duty)));
        }
        if !(self.pitch_px >= 4.0 && self.pitch_px.is_finite()) {
            return Err(Error::param("pitch_px", format!("{} below 4 px", self.pitch_px)));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.line_intensity) || !unit(self.space_intensity) || self.line_intensity <= self.space_intensity {
            return Err(Error::param(
                "line_intensity",
                "intensities must lie in [0, 1] with line brighter than space",
            ));
        }
        if !(self.edge_sigma_px >= 0.0 && self.lwr_sigma_px >= 0.0) {
            return Err(Error::param("edge_sigma_px", "blur and roughness must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.charging_contrast) {
            return Err(Error::param("charging_contrast", "must lie in [0, 1)"));
        }
        if !(self.pixel_size_nm > 0.0) {
            return Err(Error::param("pixel_size_nm", "must be positive"));
        }
        Ok(())
    }

    pub fn line_width(&self) -> f64 {
        self.line_duty * self.pitch_px
    }

    pub fn space_width(&self) -> f64 {
        self.pitch_px - self.line_width()
    }

    /// Nominal edges of every line that starts inside the image. The first
    /// line is offset by half a space so that both borders show space.
    pub fn nominal_lines(&self) -> Vec<LineEdges> {
        let offset = self.space_width() / 2.0;
        (0..)
            .map(|k| offset + k as f64 * self.pitch_px)
            .take_while(|&left| left < self.image_size as f64)
            .map(|left| LineEdges {
                left,
                right: left + self.line_width(),
            })
            .collect()
    }

    /// Index range of lines lying fully inside the image.
    fn interior_lines(&self) -> usize {
        self.nominal_lines()
            .iter()
            .filter(|l| l.right <= self.image_size as f64)
            .count()
    }

    /// Intensity halfway between line and space.
    pub fn mid_intensity(&self) -> f64 {
        (self.line_intensity + self.space_intensity) / 2.0
    }

    fn blur_radius(&self) -> usize {
        (4.0 * self.edge_sigma_px).ceil() as usize
    }

    /// One row of [`PatternSpec::render_nominal`] for an image `width` px wide.
    /// Every nominal row is identical, so this is the whole design.
    pub fn nominal_row(&self, width: usize) -> Result<Vec<f64>> {
        let spec = PatternSpec {
            image_size: width.max(8),
            ..self.clone()
        };
        spec.validate()?;
        let mut row = RowLayout::default();
        for l in spec.nominal_lines() {
            row.add(l.left, l.right, self.line_intensity);
        }
        let mut out = vec![0.0; width];
        row.rasterize(width, self.space_intensity, &mut out);
        Ok(gaussian_blur_values(&out, width, 1, self.edge_sigma_px)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect())
    }

    /// Render of the design: nominal straight edges, no roughness, no
    /// charging, no defects; only the edge blur is applied.
    pub fn render_nominal(&self) -> Result<SemImage> {
        self.validate()?;
        let n = self.image_size;
        let mut row = RowLayout::default();
        for l in self.nominal_lines() {
            row.add(l.left, l.right, self.line_intensity);
        }
        let mut first = vec![0.0; n];
        row.rasterize(n, self.space_intensity, &mut first);
        let target: Vec<f64> = (0..n).flat_map(|_| first.iter().copied()).collect();
        let blurred = gaussian_blur_values(&target, n, n, self.edge_sigma_px);
        SemImage::from_clamped(n, n, blurred, self.pixel_size_nm)
    }
}

/// Extent bands controlling defect sizes. Lengths run along the lines (y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeBands {
    /// Bridge length as a multiple of pitch.
    pub bridge_len_pitch: (f64, f64),
    /// Microbridge length as a multiple of the space width.
    pub microbridge_len_space: (f64, f64),
    pub gap_len_pitch: (f64, f64),
    pub p_gap_len_pitch: (f64, f64),
    /// Fraction of line width left standing by a probable gap.
    pub p_gap_remaining: (f64, f64),
    /// Line-collapse length as a fraction of image height.
    pub collapse_len_height: (f64, f64),
}

impl Default for SizeBands {
    fn default() -> Self {
        SizeBands {
            bridge_len_pitch: (0.5, 1.5),
            microbridge_len_space: (0.2, 0.5),
            gap_len_pitch: (0.5, 3.0),
            p_gap_len_pitch: (0.5, 1.5),
            p_gap_remaining: (0.3, 0.7),
            collapse_len_height: (0.25, 0.5),
        }
    }
}

/// How many defects of one class to inject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub class: DefectClass,
    pub count: usize,
}

impl DefectSpec {
    pub fn new(class: DefectClass, count: usize) -> Self {
        DefectSpec { class, count }
    }
}

/// Faint resist bumps at line feet that carry no ground truth. Their
/// intensity stays below the line/space midpoint so a clean image never
/// shows them above a midpoint threshold, but noise can.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FootingSpec {
    pub count: usize,
    /// Protrusion into the space as a fraction of the space width.
    pub width_space: (f64, f64),
    /// Length along the line in pixels.
    pub len_px: (f64, f64),
    /// Bump intensity as a fraction of the line/space contrast.
    pub level: f64,
}

impl Default for FootingSpec {
    fn default() -> Self {
        FootingSpec {
            count: 0,
            width_space: (0.2, 0.35),
            len_px: (6.0, 12.0),
            level: 0.3,
        }
    }
}

/// Optional knobs for [`render_scene`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneOptions {
    pub bands: SizeBands,
    pub footing: FootingSpec,
}

/// Where a defect (or footing bump) landed.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub class: Option<DefectClass>,
    pub line: usize,
    pub rows: (usize, usize),
    /// Pixel rectangle `[x0, x1) x [y0, y1)` that the geometry touches.
    pub footprint: (usize, usize, usize, usize),
}

/// Output of [`render_scene`].
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: SemImage,
    pub truth: GroundTruthRecord,
    /// Render of the same pattern without defects or footing.
    pub defect_free: SemImage,
    pub placements: Vec<Placement>,
    pub footing: Vec<Placement>,
}

struct LineGeom {
    left: Vec<f64>,
    right: Vec<f64>,
    level: f64,
}

fn correlated_noise(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let radius = (3.0 * LWR_CORRELATION_PX).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (LWR_CORRELATION_PX * LWR_CORRELATION_PX)).exp()
        })
        .collect();
    let norm = kernel.iter().map(|k| k * k).sum::<f64>().sqrt();
    let white: Vec<f64> = (0..n + 2 * radius).map(|_| StandardNormal.sample(rng)).collect();
    (0..n)
        .map(|y| sigma * kernel.iter().zip(&white[y..]).map(|(k, w)| k * w).sum::<f64>() / norm)
        .collect()
}

fn line_geometry(p: &PatternSpec) -> Vec<LineGeom> {
    let mut rng = stream(p.seed, STREAM_LWR);
    let n = p.image_size;
    p.nominal_lines()
        .into_iter()
        .map(|nominal| {
            let factor = 1.0 + p.charging_contrast * (2.0 * rng.random::<f64>() - 1.0);
            let dl = correlated_noise(&mut rng, n, p.lwr_sigma_px);
            let dr = correlated_noise(&mut rng, n, p.lwr_sigma_px);
            LineGeom {
                left: dl.iter().map(|d| nominal.left + d).collect(),
                right: dr.iter().map(|d| nominal.right + d).collect(),
                level: (p.line_intensity * factor).min(1.0),
            }
        })
        .collect()
}

/// Geometry operation applied to a range of rows.
#[derive(Debug, Clone, Copy)]
enum Edit {
    /// Fill the space between line `k` and `k + 1`.
    FillSpace { line: usize },
    /// Remove line `k` entirely.
    Cut { line: usize },
    /// Remove material from one side, keeping `remaining` of the width.
    Thin { line: usize, remaining: f64, right: bool },
    /// Faint bump of `width` px at a line foot.
    Foot { line: usize, width: f64, right: bool, level: f64 },
}

struct PlannedEdit {
    edit: Edit,
    rows: (usize, usize),
    class: Option<DefectClass>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn apply_edit(layouts: &mut [RowLayout], lines: &[LineGeom], e: &PlannedEdit) {
    for y in e.rows.0..e.rows.1 {
        let row = &mut layouts[y];
        match e.edit {
            Edit::FillSpace { line } => {
                let level = (lines[line].level + lines[line + 1].level) / 2.0;
                row.add(lines[line].right[y], lines[line + 1].left[y], level);
            }
            Edit::Cut { line } => row.remove(lines[line].left[y], lines[line].right[y]),
            Edit::Thin { line, remaining, right } => {
                let (l, r) = (lines[line].left[y], lines[line].right[y]);
                let cut = (1.0 - remaining) * (r - l);
                if right {
                    row.remove(r - cut, r);
                } else {
                    row.remove(l, l + cut);
                }
            }
            Edit::Foot { line, width, right, level } => {
                if right {
                    let r = lines[line].right[y];
                    row.add(r, r + width, level);
                } else {
                    let l = lines[line].left[y];
                    row.add(l - width, l, level);
                }
            }
        }
    }
}

fn footprint(lines: &[LineGeom], e: &PlannedEdit, width: usize) -> (usize, usize, usize, usize) {
    let rows = e.rows.0..e.rows.1;
    let span = |lo: &[f64], hi: &[f64], dlo: f64, dhi: f64| {
        let a = rows.clone().map(|y| lo[y] + dlo).fold(f64::INFINITY, f64::min);
        let b = rows.clone().map(|y| hi[y] + dhi).fold(f64::NEG_INFINITY, f64::max);
        (a.floor().max(0.0) as usize, (b.ceil().max(0.0) as usize).min(width))
    };
    let (x0, x1) = match e.edit {
        Edit::FillSpace { line } => span(&lines[line].right, &lines[line + 1].left, 0.0, 0.0),
        Edit::Cut { line } | Edit::Thin { line, .. } => span(&lines[line].left, &lines[line].right, 0.0, 0.0),
        Edit::Foot { line, width: w, right: true, .. } => span(&lines[line].right, &lines[line].right, 0.0, w),
        Edit::Foot { line, width: w, right: false, .. } => span(&lines[line].left, &lines[line].left, -w, 0.0),
    };
    (x0, x1, e.rows.0, e.rows.1)
}

fn rects_intersect(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1 && a.2 < b.3 && b.2 < a.3
}

fn grow(r: (usize, usize, usize, usize), m: usize, n: usize) -> (usize, usize, usize, usize) {
    (r.0.saturating_sub(m), (r.1 + m).min(n), r.2.saturating_sub(m), (r.3 + m).min(n))
}

fn sample_defect(
    p: &PatternSpec,
    bands: &SizeBands,
    class: DefectClass,
    interior: usize,
    rng: &mut ChaCha8Rng,
) -> Option<PlannedEdit> {
    let n = p.image_size;
    let len = |rng: &mut ChaCha8Rng, band: (f64, f64), unit: f64| {
        (uniform(rng, band) * unit).round().clamp(1.0, n as f64) as usize
    };
    let (edit, length) = match class {
        DefectClass::Bridge | DefectClass::Microbridge | DefectClass::LineCollapse => {
            if interior < 2 {
                return None;
            }
            let length = match class {
                DefectClass::Bridge => len(rng, bands.bridge_len_pitch, p.pitch_px),
                DefectClass::Microbridge => len(rng, bands.microbridge_len_space, p.space_width()),
                _ => len(rng, bands.collapse_len_height, n as f64),
            };
            (Edit::FillSpace { line: rng.random_range(0..interior - 1) }, length)
        }
        DefectClass::Gap => {
            if interior < 1 {
                return None;
            }
            let length = len(rng, bands.gap_len_pitch, p.pitch_px);
            (Edit::Cut { line: rng.random_range(0..interior) }, length)
        }
        DefectClass::PGap => {
            if interior < 1 {
                return None;
            }
            let length = len(rng, bands.p_gap_len_pitch, p.pitch_px);
            let remaining = uniform(rng, bands.p_gap_remaining);
            let right = rng.random::<bool>();
            (Edit::Thin { line: rng.random_range(0..interior), remaining, right }, length)
        }
    };
    let y0 = rng.random_range(0..=n - length);
    Some(PlannedEdit {
        edit,
        rows: (y0, y0 + length),
        class: Some(class),
    })
}

fn sample_foot(p: &PatternSpec, spec: &FootingSpec, lines: &[LineGeom], interior: usize, rng: &mut ChaCha8Rng) -> Option<PlannedEdit> {
    if interior < 1 {
        return None;
    }
    let n = p.image_size;
    let length = (uniform(rng, spec.len_px).round() as usize).clamp(1, n);
    let width = uniform(rng, spec.width_space) * p.space_width();
    let line = rng.random_range(0..interior);
    let right = rng.random::<bool>();
    let level = p.space_intensity + spec.level * (lines[line].level - p.space_intensity);
    let y0 = rng.random_range(0..=n - length);
    Some(PlannedEdit {
        edit: Edit::Foot { line, width, right, level },
        rows: (y0, y0 + length),
        class: None,
    })
}

fn rasterize(p: &PatternSpec, layouts: &[RowLayout]) -> Result<SemImage> {
    let n = p.image_size;
    let mut target = vec![0.0; n * n];
    for (y, row) in layouts.iter().enumerate() {
        row.rasterize(n, p.space_intensity, &mut target[y * n..(y + 1) * n]);
    }
    let blurred = gaussian_blur_values(&target, n, n, p.edge_sigma_px);
    SemImage::from_clamped(n, n, blurred, p.pixel_size_nm)
}

/// Render a clean pattern with defects and exact ground truth.
pub fn render_clean(pattern: &PatternSpec, defects: &[DefectSpec]) -> Result<(SemImage, GroundTruthRecord)> {
    let scene = render_scene(pattern, defects, &SceneOptions::default())?;
    Ok((scene.image, scene.truth))
}

/// Full-control rendering: custom size bands and optional footing bumps.
///
/// Each defect's ground-truth box is the tight box of pixels that differ from
/// the defect-free render by more than [`CHANGE_EPS`], padded by
/// [`GT_PAD_PX`] and clipped to the image. Defects (and footing) are placed by
/// rejection sampling so that their influence zones never touch, which keeps
/// ground-truth boxes pairwise disjoint.
pub fn render_scene(pattern: &PatternSpec, defects: &[DefectSpec], options: &SceneOptions) -> Result<Scene> {
    pattern.validate()?;
    let n = pattern.image_size;
    let lines = line_geometry(pattern);
    let interior = pattern.interior_lines();
    let margin = pattern.blur_radius() + GT_PAD_PX as usize + 1;

    let mut reserved: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut planned: Vec<PlannedEdit> = Vec::new();
    let mut place = |candidate: &mut dyn FnMut() -> Option<PlannedEdit>, class: Option<DefectClass>| -> Result<()> {
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let Some(edit) = candidate() else { break };
            let zone = grow(footprint(&lines, &edit, n), margin, n);
            if reserved.iter().all(|r| !rects_intersect(*r, zone)) {
                reserved.push(zone);
                planned.push(edit);
                return Ok(());
            }
        }
        Err(Error::Capacity(class.unwrap_or(DefectClass::Microbridge)))
    };

    let mut rng = stream(pattern.seed, STREAM_DEFECTS);
    for spec in defects {
        for _ in 0..spec.count {
            place(&mut || sample_defect(pattern, &options.bands, spec.class, interior, &mut rng), Some(spec.class))?;
        }
    }
    let n_defects: usize = defects.iter().map(|d| d.count).sum();
    let mut rng = stream(pattern.seed, STREAM_FOOTING);
    for _ in 0..options.footing.count {
        // footing that does not fit is skipped; it carries no ground truth
        if place(&mut || sample_foot(pattern, &options.footing, &lines, interior, &mut rng), None).is_err() {
            break;
        }
    }

    let mut layouts = vec![RowLayout::default(); n];
    for (y, row) in layouts.iter_mut().enumerate() {
        for l in &lines {
            row.add(l.left[y], l.right[y], l.level);
        }
    }
    let defect_free = rasterize(pattern, &layouts)?;
    for e in &planned {
        apply_edit(&mut layouts, &lines, e);
    }
    let image = rasterize(pattern, &layouts)?;

    let mut truth = GroundTruthRecord::new(String::new(), n as u32, n as u32);
    let mut placements = Vec::new();
    let mut footing = Vec::new();
    for (i, e) in planned.iter().enumerate() {
        let fp = footprint(&lines, e, n);
        let line = match e.edit {
            Edit::FillSpace { line } | Edit::Cut { line } | Edit::Thin { line, .. } | Edit::Foot { line, .. } => line,
        };
        let placement = Placement {
            class: e.class,
            line,
            rows: e.rows,
            footprint: fp,
        };
        if i >= n_defects {
            footing.push(placement);
            continue;
        }
        let zone = grow(fp, margin, n);
        let changed = changed_box(&image, &defect_free, zone)
            .ok_or_else(|| Error::Contract("injected defect changed no pixel".into()))?;
        let bbox = changed
            .pad(GT_PAD_PX)
            .ok()
            .and_then(|b| b.clip(n as f64, n as f64))
            .expect("padded box stays non-empty");
        truth.defects.push(GroundTruthDefect {
            class: e.class.expect("defect edits carry a class"),
            bbox,
        });
        placements.push(placement);
    }

    Ok(Scene {
        image,
        truth,
        defect_free,
        placements,
        footing,
    })
}

fn changed_box(a: &SemImage, b: &SemImage, zone: (usize, usize, usize, usize)) -> Option<BBox> {
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for y in zone.2..zone.3 {
        for x in zone.0..zone.1 {
            if (a.get(x, y) - b.get(x, y)).abs() > CHANGE_EPS {
                x0 = x0.min(x);
                x1 = x1.max(x + 1);
                y0 = y0.min(y);
                y1 = y1.max(y + 1);
            }
        }
    }
    (x1 > 0).then(|| BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64).expect("non-empty"))
}

/// Noise model applied on top of a clean render.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    Gaussian,
    PoissonGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub gaussian_sigma: f64,
    /// Electrons per unit intensity for the shot-noise term.
    pub poisson_scale: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            model: NoiseModel::Gaussian,
            gaussian_sigma: 0.08,
            poisson_scale: 200.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        NoiseSpec {
            model: NoiseModel::Gaussian,
            gaussian_sigma: sigma,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::param("gaussian_sigma", "must be non-negative"));
        }
        if !(self.poisson_scale > 0.0 && self.poisson_scale.is_finite()) {
            return Err(Error::param("poisson_scale", "must be positive"));
        }
        Ok(())
    }
}

/// Apply per-pixel noise, then clamp to `[0, 1]`.
pub fn add_noise(image: &SemImage, noise: &NoiseSpec) -> Result<SemImage> {
    noise.validate()?;
    if noise.model == NoiseModel::Gaussian && noise.gaussian_sigma == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = Normal::new(0.0, noise.gaussian_sigma).map_err(|e| Error::Numeric(e.to_string()))?;
    let pixels = image
        .pixels()
        .iter()
        .map(|&v| {
            let base = match noise.model {
                NoiseModel::Gaussian => v,
                NoiseModel::PoissonGaussian => {
                    let lambda = v * noise.poisson_scale;
                    if lambda > 0.0 {
                        let k: f64 = Poisson::new(lambda).expect("positive rate").sample(&mut rng);
                        k / noise.poisson_scale
                    } else {
                        0.0
                    }
                }
            };
            base + normal.sample(&mut rng)
        })
        .collect();
    image.with_pixels(pixels)
}

/// The shared noisy fixture: default 1024 px pattern with mild roughness and
/// charging, one defect of each class, Gaussian noise of 0.08.
pub fn noisy_fixture(seed: u64) -> Result<(PatternSpec, Scene, SemImage)> {
    let pattern = PatternSpec {
        lwr_sigma_px: 0.5,
        charging_contrast: 0.1,
        seed,
        ..Default::default()
    };
    let defects: Vec<DefectSpec> = DefectClass::ALL.iter().map(|&c| DefectSpec::new(c, 1)).collect();
    let scene = render_scene(&pattern, &defects, &SceneOptions::default())?;
    let noisy = add_noise(&scene.image, &NoiseSpec::gaussian(0.08, derive_seed(seed, 9, 0)))?;
    Ok((pattern, scene, noisy))
}
