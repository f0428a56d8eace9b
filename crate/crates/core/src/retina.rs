//! Single-stage detector mechanics: anchors, anchor/truth assignment, box
//! coding, focal loss, and decoding dense class scores into detections.
//!
//! Score maps come from fixtures or external models; nothing here trains.

use serde::{Deserialize, Serialize};

use crate::datamodel::{DefectClass, Detection, GroundTruthRecord};
use crate::error::{Error, Result};
use crate::geometry::{iou, nms, BBox};

/// Number of classes K.
pub const NUM_CLASSES: usize = 5;
/// Anchors per location A.
pub const ANCHORS_PER_LOCATION: usize = 9;
pub const RETINA_SOURCE: &str = "retinanet";
/// Probabilities below this are raised to it inside the focal loss.
pub const MIN_PROBABILITY: f64 = 1e-12;

fn standard_scales() -> Vec<f64> {
    vec![1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)]
}

/// One `(stride_px, base_size_px)` per pyramid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub pyramid_levels: Vec<(u32, f64)>,
    /// Width over height.
    pub aspect_ratios: Vec<f64>,
    pub scale_multipliers: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            pyramid_levels: vec![(8, 32.0), (16, 64.0), (32, 128.0), (64, 256.0), (128, 512.0)],
            aspect_ratios: vec![0.5, 1.0, 2.0],
            scale_multipliers: standard_scales(),
        }
    }
}

impl AnchorConfig {
    pub fn single_level(stride: u32, base: f64) -> Self {
        AnchorConfig {
            pyramid_levels: vec![(stride, base)],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.aspect_ratios != [0.5, 1.0, 2.0] || self.scale_multipliers != standard_scales() {
            return Err(Error::param(
                "aspect_ratios",
                "anchors use aspects {0.5, 1, 2} and scales {1, 2^(1/3), 2^(2/3)}",
            ));
        }
        debug_assert_eq!(self.aspect_ratios.len() * self.scale_multipliers.len(), ANCHORS_PER_LOCATION);
        if self.pyramid_levels.is_empty() {
            return Err(Error::param("pyramid_levels", "at least one level is required"));
        }
        for &(stride, base) in &self.pyramid_levels {
            if stride == 0 || !(base > 0.0 && base.is_finite()) {
                return Err(Error::param("pyramid_levels", format!("bad level ({stride}, {base})")));
            }
        }
        Ok(())
    }
}

/// Anchors ordered by level, grid row, grid column, aspect, scale.
pub fn generate_anchors(config: &AnchorConfig, image_size: u32) -> Result<Vec<BBox>> {
    config.validate()?;
    let mut out = Vec::new();
    for &(stride, base) in &config.pyramid_levels {
        if image_size % stride != 0 {
            return Err(Error::param(
                "pyramid_levels",
                format!("stride {stride} does not divide image size {image_size}"),
            ));
        }
        let cells = image_size / stride;
        let s = stride as f64;
        for j in 0..cells {
            for i in 0..cells {
                let (cx, cy) = (s * (i as f64 + 0.5), s * (j as f64 + 0.5));
                for &aspect in &config.aspect_ratios {
                    for &scale in &config.scale_multipliers {
                        let side = base * scale;
                        let r = aspect.sqrt();
                        out.push(BBox::from_center(cx, cy, side * r, side / r)?);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentConfig {
    pub positive_iou: f64,
    pub ignore_low: f64,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        AssignmentConfig {
            positive_iou: 0.5,
            ignore_low: 0.4,
        }
    }
}

impl AssignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.ignore_low && self.ignore_low < self.positive_iou && self.positive_iou <= 1.0) {
            return Err(Error::param("ignore_low", "need 0 <= ignore_low < positive_iou <= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorLabel {
    Positive(usize),
    Background,
    Ignore,
}

/// Label each anchor by its best IoU over the truth boxes: `>= positive_iou`
/// is positive (lowest index wins ties), `< ignore_low` is background, and
/// the band between is ignored.
pub fn assign_anchors(anchors: &[BBox], truth: &GroundTruthRecord, cfg: &AssignmentConfig) -> Result<Vec<AnchorLabel>> {
    cfg.validate()?;
    Ok(anchors
        .iter()
        .map(|a| {
            let mut best: Option<(usize, f64)> = None;
            for (g, d) in truth.defects.iter().enumerate() {
                let v = iou(a, &d.bbox);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, v)) if v >= cfg.positive_iou => AnchorLabel::Positive(g),
                Some((_, v)) if v >= cfg.ignore_low => AnchorLabel::Ignore,
                _ => AnchorLabel::Background,
            }
        })
        .collect())
}

/// Offsets `(tx, ty, tw, th)` of `target` relative to `anchor`.
pub fn encode_box(anchor: &BBox, target: &BBox) -> [f64; 4] {
    let (ax, ay) = anchor.center();
    let (tx, ty) = target.center();
    [
        (tx - ax) / anchor.width(),
        (ty - ay) / anchor.height(),
        (target.width() / anchor.width()).ln(),
        (target.height() / anchor.height()).ln(),
    ]
}

/// Inverse of [`encode_box`]; clipped to `(width, height)` when given.
pub fn decode_box(anchor: &BBox, offsets: [f64; 4], clip_to: Option<(f64, f64)>) -> Result<BBox> {
    if offsets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite offsets {offsets:?}")));
    }
    let (ax, ay) = anchor.center();
    let cx = ax + offsets[0] * anchor.width();
    let cy = ay + offsets[1] * anchor.height();
    let w = anchor.width() * offsets[2].exp();
    let h = anchor.height() * offsets[3].exp();
    let b = BBox::from_center(cx, cy, w, h).map_err(|_| Error::Numeric(format!("offsets {offsets:?} overflow")))?;
    match clip_to {
        Some((cw, ch)) => b
            .clip(cw, ch)
            .ok_or_else(|| Error::Numeric(format!("decoded box {:?} lies outside the image", b.corners()))),
        None => Ok(b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLossParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        FocalLossParams { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param("alpha", format!("{} outside (0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma", format!("{} is negative", self.gamma)));
        }
        Ok(())
    }
}

/// `-alpha * (1 - p)^gamma * ln(p)` for the probability `p` of the true
/// outcome. `p` is raised to [`MIN_PROBABILITY`] so the loss stays finite.
pub fn focal_loss(p: f64, params: &FocalLossParams) -> Result<f64> {
    params.validate()?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param("p", format!("{p} outside [0, 1]")));
    }
    let p = p.max(MIN_PROBABILITY);
    Ok(-params.alpha * (1.0 - p).powf(params.gamma) * p.ln())
}

/// Per-anchor class probabilities, `K = 5` per anchor in the order of
/// [`DefectClass::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ClassScoreMap {
    probs: Vec<[f64; NUM_CLASSES]>,
}

impl ClassScoreMap {
    pub fn new(probs: Vec<[f64; NUM_CLASSES]>) -> Result<Self> {
        if let Some(p) = probs.iter().flatten().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Validation(format!("class probability {p} outside [0, 1]")));
        }
        Ok(ClassScoreMap { probs })
    }

    pub fn zeros(anchors: usize) -> Self {
        ClassScoreMap {
            probs: vec![[0.0; NUM_CLASSES]; anchors],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, anchor: usize) -> &[f64; NUM_CLASSES] {
        &self.probs[anchor]
    }

    pub fn set(&mut self, anchor: usize, class: DefectClass, p: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Validation(format!("class probability {p} outside [0, 1]")));
        }
        self.probs[anchor][class.index()] = p;
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for ClassScoreMap {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let probs = rows
            .into_iter()
            .map(|r| {
                <[f64; NUM_CLASSES]>::try_from(r.as_slice())
                    .map_err(|_| Error::Contract(format!("expected {NUM_CLASSES} class scores, got {}", r.len())))
            })
            .collect::<Result<_>>()?;
        ClassScoreMap::new(probs)
    }
}

impl From<ClassScoreMap> for Vec<Vec<f64>> {
    fn from(m: ClassScoreMap) -> Self {
        m.probs.iter().map(|p| p.to_vec()).collect()
    }
}

/// Mean focal loss over positive and background anchors; ignored anchors do
/// not contribute. Each anchor sums one binary term per class: the target
/// probability is `p_k` for its assigned truth class and `1 - p_k` otherwise.
pub fn focal_loss_batch(
    scores: &ClassScoreMap,
    labels: &[AnchorLabel],
    truth: &GroundTruthRecord,
    params: &FocalLossParams,
) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (probs, label) in scores.probs.iter().zip(labels) {
        let target = match *label {
            AnchorLabel::Ignore => continue,
            AnchorLabel::Background => None,
            AnchorLabel::Positive(g) => Some(
                truth
                    .defects
                    .get(g)
                    .ok_or_else(|| Error::Contract(format!("label points at missing truth {g}")))?
                    .class
                    .index(),
            ),
        };
        for (k, &p) in probs.iter().enumerate() {
            let pt = if target == Some(k) { p } else { 1.0 - p };
            total += focal_loss(pt, params)?;
        }
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Dense-map fixture as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMapFixture {
    pub anchors: Vec<BBox>,
    pub scores: ClassScoreMap,
    pub offsets: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            score_threshold: 0.5,
            nms_iou: 0.5,
        }
    }
}

/// Keep anchors whose best class score reaches the threshold, decode their
/// boxes and run class-aware NMS. Output is in descending score.
pub fn decode_predictions(
    scores: &ClassScoreMap,
    offsets: &[[f64; 4]],
    anchors: &[BBox],
    cfg: &DecodeConfig,
    clip_to: Option<(f64, f64)>,
) -> Result<Vec<Detection>> {
    if scores.len() != anchors.len() || offsets.len() != anchors.len() {
        return Err(Error::Contract(format!(
            "{} anchors, {} score rows, {} offset rows",
            anchors.len(),
            scores.len(),
            offsets.len()
        )));
    }
    let mut candidates = Vec::new();
    for ((probs, off), anchor) in scores.probs.iter().zip(offsets).zip(anchors) {
        let (k, &p) = probs
            .iter()
            .enumerate()
            .fold((0, &probs[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
        if p < cfg.score_threshold || p == 0.0 {
            continue;
        }
        let bbox = decode_box(anchor, *off, clip_to)?;
        candidates.push(Detection::new(bbox, DefectClass::ALL[k], p, RETINA_SOURCE)?);
    }
    Ok(nms(&candidates, cfg.nms_iou))
}
