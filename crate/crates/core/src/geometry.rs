//! Axis-aligned box arithmetic shared by every stage of the pipeline.
//!
//! Boxes use a half-open pixel convention `[x_min, x_max) x [y_min, y_max)`
//! with the origin at the top-left corner and y growing downward, so the area
//! is `(x_max - x_min) * (y_max - y_min)` with no +1 correction.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::datamodel::Detection;
use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel coordinates with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_max <= x_min || y_max <= y_min {
            return Err(Error::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Box from a center point and a size.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        BBox::new(
            cx - width / 2.0,
            cy - height / 2.0,
            cx + width / 2.0,
            cy + height / 2.0,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        BBox::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }

    /// Area of the overlap with `other`, zero when disjoint or touching.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }

    /// Intersection with `[0, width] x [0, height]`; `None` when nothing is left.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        BBox::new(
            self.x_min.max(0.0),
            self.y_min.max(0.0),
            self.x_max.min(width),
            self.y_max.min(height),
        )
        .ok()
    }

    /// Grow the box by `pad` on every side.
    pub fn pad(&self, pad: f64) -> Result<BBox> {
        BBox::new(
            self.x_min - pad,
            self.y_min - pad,
            self.x_max + pad,
            self.y_max + pad,
        )
    }

    /// Lexicographic order on `(x_min, y_min, x_max, y_max)`, used as a
    /// deterministic tie-break wherever scores are equal.
    pub fn corner_cmp(&self, other: &BBox) -> Ordering {
        self.corners()
            .iter()
            .zip(other.corners().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.corners()
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Overlap test with an inclusive threshold: `iou(a, b) >= threshold`.
pub fn overlaps(a: &BBox, b: &BBox, threshold: f64) -> bool {
    iou(a, b) >= threshold
}

/// Ordering used by NMS and by every score-ranked pass: descending score,
/// then ascending `x_min`, `y_min`, class name.
pub(crate) fn score_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
        .then(a.class.as_str().cmp(b.class.as_str()))
}

/// Greedy class-aware non-maximum suppression.
///
/// A detection survives when its IoU with every already-kept detection of the
/// same class is below `iou_threshold`. The output is in descending score.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| score_order(a, b));

    let mut kept: Vec<Detection> = Vec::new();
    for det in order {
        let suppressed = kept
            .iter()
            .any(|k| k.class == det.class && iou(&k.bbox, &det.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(det.clone());
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::DefectClass;
    use proptest::prelude::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(b: BBox, class: DefectClass, score: f64) -> Detection {
        Detection::new(b, class, score, "m").unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20.0, 20.0, 30.0, 30.0)), 0.0);
        let v = iou(&a, &bb(5.0, 5.0, 15.0, 15.0));
        assert!((v - 25.0 / 175.0).abs() < 1e-15);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &bb(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn overlap_threshold_is_inclusive() {
        // nested 100 in 200 -> exactly 0.5
        let outer = bb(0.0, 0.0, 20.0, 10.0);
        let inner = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&outer, &inner), 0.5);
        assert!(overlaps(&outer, &inner, 0.5));
        assert!(!overlaps(&bb(0.0, 0.0, 10.0, 10.0), &bb(5.0, 5.0, 15.0, 15.0), 0.5));
        assert!(overlaps(&inner, &inner, 1.0));
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BBox::new(0.0, 0.0, 5.0, -1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 5.0, 5.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 5.0).is_err());
    }

    #[test]
    fn nms_examples() {
        assert!(nms(&[], 0.5).is_empty());

        let one = vec![det(bb(0.0, 0.0, 10.0, 10.0), DefectClass::Gap, 0.4)];
        assert_eq!(nms(&one, 0.5), one);

        let same = vec![
            det(bb(0.0, 0.0, 10.0, 10.0), DefectClass::Gap, 0.8),
            det(bb(0.0, 0.0, 10.0, 10.0), DefectClass::Gap, 0.9),
        ];
        let kept = nms(&same, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);

        let apart = vec![
            det(bb(0.0, 0.0, 10.0, 10.0), DefectClass::Gap, 0.9),
            det(bb(5.0, 5.0, 15.0, 15.0), DefectClass::Gap, 0.8),
        ];
        assert_eq!(nms(&apart, 0.5).len(), 2);
    }

    #[test]
    fn nms_is_class_aware() {
        let dets = vec![
            det(bb(0.0, 0.0, 10.0, 10.0), DefectClass::Gap, 0.9),
            det(bb(0.0, 0.0, 10.0, 10.0), DefectClass::PGap, 0.8),
        ];
        assert_eq!(nms(&dets, 0.5).len(), 2);
    }

    // Independent quadratic reference: a detection survives iff no
    // higher-ranked survivor of its class overlaps it.
    fn nms_oracle(dets: &[Detection], thr: f64) -> Vec<Detection> {
        let n = dets.len();
        let mut rank: Vec<usize> = (0..n).collect();
        rank.sort_by(|&i, &j| score_order(&dets[i], &dets[j]));
        let mut alive = vec![false; n];
        for (pos, &i) in rank.iter().enumerate() {
            alive[i] = rank[..pos].iter().all(|&j| {
                !alive[j] || dets[j].class != dets[i].class || {
                    let inter = dets[i].bbox.intersection_area(&dets[j].bbox);
                    let union = dets[i].bbox.area() + dets[j].bbox.area() - inter;
                    dets[i].bbox != dets[j].bbox && inter / union < thr
                }
            });
        }
        rank.into_iter().filter(|&i| alive[i]).map(|i| dets[i].clone()).collect()
    }

    #[test]
    fn nms_matches_bruteforce_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let classes = DefectClass::ALL;
        for _ in 0..3000 {
            let n = rng.random_range(0..=15);
            let dets: Vec<Detection> = (0..n)
                .map(|_| {
                    let x = rng.random_range(0..40) as f64;
                    let y = rng.random_range(0..40) as f64;
                    let w = rng.random_range(1..20) as f64;
                    let h = rng.random_range(1..20) as f64;
                    let class = classes[rng.random_range(0..2)];
                    let score = rng.random_range(0..10) as f64 / 10.0;
                    det(bb(x, y, x + w, y + h), class, score)
                })
                .collect();
            let thr = [0.3, 0.5, 0.7][rng.random_range(0..3)];
            assert_eq!(nms(&dets, thr), nms_oracle(&dets, thr));
        }
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-500.0..500.0f64, -500.0..500.0f64, 0.5..300.0f64, 0.5..300.0f64)
            .prop_map(|(x, y, w, h)| bb(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn iou_is_translation_invariant(
            a in arb_box(), b in arb_box(), dx in -1000.0..1000.0f64, dy in -1000.0..1000.0f64
        ) {
            let moved = iou(&a.translate(dx, dy).unwrap(), &b.translate(dx, dy).unwrap());
            prop_assert!((moved - iou(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn nms_output_is_suppressed_subset(
            boxes in proptest::collection::vec((arb_box(), 0usize..2, 0.0..1.0f64), 0..25)
        ) {
            let dets: Vec<Detection> = boxes
                .into_iter()
                .map(|(b, c, s)| det(b, DefectClass::ALL[c], s))
                .collect();
            let kept = nms(&dets, 0.5);
            for k in &kept {
                prop_assert!(dets.contains(k));
            }
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(a.class != b.class || iou(&a.bbox, &b.bbox) < 0.5);
                }
            }
        }
    }
}
