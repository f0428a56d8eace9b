//! Detection scoring: greedy matching, per-class AP, weighted mAP, PR
//! curves, and run-to-run comparison.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{format_sig6, DefectClass, Detection, GroundTruthRecord, ImagePredictions};
use crate::error::{Error, Result};
use crate::geometry::{iou, score_order};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Instances,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    AllPoint,
    ElevenPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Detections below this score are dropped before matching; 0 keeps all.
    pub score_threshold: f64,
    pub weighting: Weighting,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            score_threshold: 0.5,
            weighting: Weighting::Instances,
            interpolation: Interpolation::AllPoint,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("iou_threshold", self.iou_threshold), ("score_threshold", self.score_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("{v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Outcome of matching one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatch {
    /// Aligned with the input detections: the truth index a TP claimed.
    pub matched: Vec<Option<usize>>,
    pub unmatched_truth: usize,
}

impl ImageMatch {
    pub fn is_tp(&self, i: usize) -> bool {
        self.matched[i].is_some()
    }
}

/// Greedy matching in descending score. A detection is a TP when some
/// still-unmatched truth of its class overlaps it with IoU at or above the
/// threshold; it claims the best such truth (lowest index on ties).
pub fn match_detections(detections: &[Detection], truth: &GroundTruthRecord, iou_threshold: f64) -> ImageMatch {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| score_order(&detections[a], &detections[b]));
    let mut taken = vec![false; truth.defects.len()];
    let mut matched = vec![None; detections.len()];
    for i in order {
        let d = &detections[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, t) in truth.defects.iter().enumerate() {
            if taken[g] || t.class != d.class {
                continue;
            }
            let v = iou(&d.bbox, &t.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matched[i] = Some(g);
        }
    }
    ImageMatch {
        unmatched_truth: taken.iter().filter(|t| !**t).count(),
        matched,
    }
}

/// One ranked outcome: `(score, is_tp)`. Callers pass them already in rank
/// order; the function only relies on that order.
pub fn average_precision(ranked: &[(f64, bool)], total_truth: usize, interpolation: Interpolation) -> f64 {
    if total_truth == 0 {
        return if ranked.is_empty() { 1.0 } else { 0.0 };
    }
    let curve = pr_curve(ranked, total_truth);
    if curve.is_empty() {
        return 0.0;
    }
    // precision envelope from the right
    let mut env: Vec<f64> = curve.iter().map(|p| p[1]).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    match interpolation {
        Interpolation::AllPoint => {
            let mut ap = 0.0;
            let mut prev_r = 0.0;
            for (p, e) in curve.iter().zip(&env) {
                ap += (p[0] - prev_r) * e;
                prev_r = p[0];
            }
            ap
        }
        Interpolation::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let r = k as f64 / 10.0;
                    curve
                        .iter()
                        .zip(&env)
                        .find(|(p, _)| p[0] >= r - 1e-12)
                        .map_or(0.0, |(_, e)| *e)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

/// Cumulative `[recall, precision]` after each ranked outcome.
pub fn pr_curve(ranked: &[(f64, bool)], total_truth: usize) -> Vec<[f64; 2]> {
    let mut tp = 0usize;
    ranked
        .iter()
        .enumerate()
        .map(|(i, &(_, hit))| {
            tp += hit as usize;
            let recall = if total_truth == 0 { 0.0 } else { tp as f64 / total_truth as f64 };
            [recall, tp as f64 / (i + 1) as f64]
        })
        .collect()
}

/// Weighted mean of per-class AP.
pub fn mean_average_precision(
    per_class_ap: &BTreeMap<DefectClass, f64>,
    per_class_truth: &BTreeMap<DefectClass, usize>,
    weighting: Weighting,
) -> Result<f64> {
    if per_class_ap.is_empty() {
        return Err(Error::Undefined("mAP over an empty class set".into()));
    }
    if !per_class_ap.keys().eq(per_class_truth.keys()) {
        return Err(Error::Contract("AP and truth-count maps cover different classes".into()));
    }
    match weighting {
        Weighting::Uniform => Ok(per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64),
        Weighting::Instances => {
            let total: usize = per_class_truth.values().sum();
            if total == 0 {
                return Err(Error::Undefined("instance-weighted mAP with no truth instances".into()));
            }
            let weighted: f64 = per_class_ap.iter().map(|(c, ap)| ap * per_class_truth[c] as f64).sum();
            Ok(weighted / total as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub truth: usize,
    pub pr: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    /// Free-form tag naming the evaluated imagery, e.g. `noisy`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imagery: Option<String>,
    pub per_class: BTreeMap<DefectClass, ClassReport>,
    pub map: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `class,recall,precision` rows for every PR point.
    pub fn pr_csv(&self) -> String {
        let mut s = String::from("class,recall,precision\n");
        for (c, r) in &self.per_class {
            for p in &r.pr {
                s.push_str(&format!("{c},{},{}\n", format_sig6(p[0]), format_sig6(p[1])));
            }
        }
        s
    }
}

struct Ranked<'a> {
    score: f64,
    tp: bool,
    image: &'a str,
    det: &'a Detection,
}

fn rank_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image.cmp(b.image))
        .then_with(|| a.det.bbox.corner_cmp(&b.det.bbox))
}

/// Score a prediction set against ground truth. Images with truth but no
/// predictions contribute only false negatives; predictions for an image
/// without truth are a resolution error.
pub fn evaluate_dataset(
    predictions: &[ImagePredictions],
    truths: &[GroundTruthRecord],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let truth_by_id: HashMap<&str, &GroundTruthRecord> = truths.iter().map(|t| (t.image_id.as_str(), t)).collect();
    let mut preds_by_id: HashMap<&str, Vec<&Detection>> = HashMap::new();
    for img in predictions {
        if !truth_by_id.contains_key(img.image_id.as_str()) {
            return Err(Error::Resolution(format!("no ground truth for image `{}`", img.image_id)));
        }
        preds_by_id
            .entry(img.image_id.as_str())
            .or_default()
            .extend(img.detections.iter().filter(|d| d.score >= cfg.score_threshold));
    }

    let per_image: Vec<(Vec<Ranked>, &GroundTruthRecord)> = truths
        .par_iter()
        .map(|t| {
            let refs: Vec<&Detection> = preds_by_id.get(t.image_id.as_str()).cloned().unwrap_or_default();
            let dets: Vec<Detection> = refs.iter().map(|d| (*d).clone()).collect();
            let m = match_detections(&dets, t, cfg.iou_threshold);
            let ranked = refs
                .into_iter()
                .enumerate()
                .map(|(i, d)| Ranked {
                    score: d.score,
                    tp: m.is_tp(i),
                    image: t.image_id.as_str(),
                    det: d,
                })
                .collect();
            (ranked, t)
        })
        .collect();

    let mut per_class = BTreeMap::new();
    let mut aps = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for class in DefectClass::ALL {
        let truth_n: usize = truths.iter().map(|t| t.count(class)).sum();
        let mut ranked: Vec<&Ranked> = per_image
            .iter()
            .flat_map(|(r, _)| r.iter())
            .filter(|r| r.det.class == class)
            .collect();
        ranked.sort_by(|a, b| rank_order(a, b));
        let outcomes: Vec<(f64, bool)> = ranked.iter().map(|r| (r.score, r.tp)).collect();
        let tp = outcomes.iter().filter(|o| o.1).count();
        let ap = average_precision(&outcomes, truth_n, cfg.interpolation);
        aps.insert(class, ap);
        counts.insert(class, truth_n);
        per_class.insert(
            class,
            ClassReport {
                ap,
                tp,
                fp: outcomes.len() - tp,
                fn_: truth_n - tp,
                truth: truth_n,
                pr: pr_curve(&outcomes, truth_n),
            },
        );
    }
    let map = mean_average_precision(&aps, &counts, cfg.weighting)?;
    Ok(EvalReport {
        config: cfg.clone(),
        imagery: None,
        per_class,
        map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub ap: f64,
    pub fp: i64,
    pub tp: i64,
    pub fp_reduced: bool,
}

/// `b - a` per class, where `a` is the reference run (e.g. noisy imagery).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub per_class: BTreeMap<DefectClass, ClassDelta>,
    pub map: f64,
    pub fp_total: i64,
}

pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<RunComparison> {
    if a.config != b.config {
        return Err(Error::Comparison("evaluation configs differ".into()));
    }
    if !a.per_class.keys().eq(b.per_class.keys()) {
        return Err(Error::Comparison("class sets differ".into()));
    }
    let per_class: BTreeMap<DefectClass, ClassDelta> = a
        .per_class
        .iter()
        .map(|(c, ra)| {
            let rb = &b.per_class[c];
            (
                *c,
                ClassDelta {
                    ap: rb.ap - ra.ap,
                    fp: rb.fp as i64 - ra.fp as i64,
                    tp: rb.tp as i64 - ra.tp as i64,
                    fp_reduced: rb.fp < ra.fp,
                },
            )
        })
        .collect();
    Ok(RunComparison {
        fp_total: per_class.values().map(|d| d.fp).sum(),
        map: b.map - a.map,
        per_class,
    })
}
