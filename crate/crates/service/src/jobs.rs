//! Job parameters, submission and execution.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use zip::write::SimpleFileOptions;

use lsinspect::baseline::{detect_conventional, BaselineParams};
use lsinspect::datamodel::{export_csv, read_predictions, segregate, write_predictions};
use lsinspect::denoise::{denoise, DenoiseMethod};
use lsinspect::ensemble::{merge_prediction_sets, ClassScope, EnsembleConfig, OverlapScope};
use lsinspect::evaluate::{evaluate_dataset, EvalConfig, Interpolation, Weighting};
use lsinspect::synthgen::PatternSpec;
use lsinspect::{Detection, ImagePredictions, PredictionSet, SemImage};

use crate::datasets::Dataset;
use crate::error::{ApiError, ApiResult, ErrorBody};
use crate::state::{unix_now, AppState};
use crate::store::{ArtifactKind, ArtifactMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Denoise,
    Detect,
    Ensemble,
    Evaluate,
    Segregate,
    ExportCsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobResult {
    pub artifact: String,
    pub kind: ArtifactKind,
    pub url: String,
    /// Dataset created by a denoise job.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug)]
struct JobState {
    status: JobStatus,
    result: Option<JobResult>,
    error: Option<ErrorBody>,
}

#[derive(Debug)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub params: Value,
    pub created_at: u64,
    total: usize,
    done: AtomicUsize,
    state: Mutex<JobState>,
}

/// Snapshot returned by the polling endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobView {
    pub id: String,
    pub kind: JobKind,
    pub params: Value,
    pub status: JobStatus,
    pub progress: Progress,
    pub created_at: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<JobResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Job {
    fn new(id: String, kind: JobKind, params: Value, total: usize) -> Self {
        Job {
            id,
            kind,
            params,
            created_at: unix_now(),
            total,
            done: AtomicUsize::new(0),
            state: Mutex::new(JobState {
                status: JobStatus::Queued,
                result: None,
                error: None,
            }),
        }
    }

    pub fn view(&self) -> JobView {
        let st = self.state.lock().expect("job state lock");
        // Read progress under the state lock so a finished job always reports
        // done == total.
        let done = if st.status == JobStatus::Done {
            self.total
        } else {
            self.done.load(Ordering::Acquire).min(self.total)
        };
        JobView {
            id: self.id.clone(),
            kind: self.kind,
            params: self.params.clone(),
            status: st.status,
            progress: Progress {
                done,
                total: self.total,
            },
            created_at: self.created_at,
            result: st.result.clone(),
            error: st.error.clone(),
        }
    }

    pub fn status(&self) -> JobStatus {
        self.state.lock().expect("job state lock").status
    }

    fn tick(&self) {
        self.done.fetch_add(1, Ordering::AcqRel);
    }

    /// Apply a transition; anything but queued->running->done|failed is ignored.
    fn transition(&self, to: JobStatus, result: Option<JobResult>, error: Option<ErrorBody>) -> bool {
        let mut st = self.state.lock().expect("job state lock");
        let allowed = matches!(
            (st.status, to),
            (JobStatus::Queued, JobStatus::Running) | (JobStatus::Running, JobStatus::Done | JobStatus::Failed)
        );
        if allowed {
            st.status = to;
            st.result = result;
            st.error = error;
            if to == JobStatus::Done {
                self.done.store(self.total, Ordering::Release);
            }
        }
        allowed
    }
}

fn d_median() -> String {
    "median".into()
}
fn d_baseline() -> String {
    "baseline".into()
}
fn d_half() -> f64 {
    0.5
}
fn d_min_size() -> usize {
    8
}
fn d_one() -> usize {
    1
}
fn d_pad() -> f64 {
    4.0
}
fn d_pixel() -> f64 {
    lsinspect::raster::DEFAULT_PIXEL_SIZE_NM
}
fn d_all() -> OverlapScope {
    OverlapScope::AllAccepted
}
fn d_agnostic() -> ClassScope {
    ClassScope::ClassAgnostic
}
fn d_instances() -> Weighting {
    Weighting::Instances
}
fn d_all_point() -> Interpolation {
    Interpolation::AllPoint
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenoiseParams {
    dataset: String,
    #[serde(default = "d_median")]
    method: String,
    #[serde(default)]
    param: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectParams {
    dataset: String,
    #[serde(default = "d_baseline")]
    method: String,
    #[serde(default = "d_half")]
    intensity_threshold: f64,
    #[serde(default = "d_min_size")]
    min_size: usize,
    #[serde(default = "d_one")]
    merge_distance: usize,
    #[serde(default = "d_pad")]
    box_pad: f64,
    /// Model name written into the prediction file and detection sources.
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    pattern: Option<PatternSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleParams {
    predictions: Vec<String>,
    #[serde(default)]
    order: Option<Vec<String>>,
    #[serde(default = "d_half")]
    iou: f64,
    #[serde(default = "d_all")]
    scope: OverlapScope,
    #[serde(default = "d_agnostic")]
    class_scope: ClassScope,
    #[serde(default)]
    allow_single: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateParams {
    dataset: String,
    predictions: String,
    #[serde(default = "d_half")]
    iou: f64,
    #[serde(default = "d_half")]
    score_threshold: f64,
    #[serde(default = "d_instances")]
    weighting: Weighting,
    #[serde(default = "d_all_point")]
    interpolation: Interpolation,
    #[serde(default)]
    imagery: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegregateParams {
    dataset: String,
    predictions: String,
    #[serde(default = "d_half")]
    score_threshold: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportCsvParams {
    predictions: String,
    #[serde(default = "d_pixel")]
    pixel_size_nm: f64,
    /// Rows below this score are left out; 0 exports everything.
    #[serde(default)]
    score_threshold: f64,
}

/// A validated job with every reference resolved.
enum Plan {
    Denoise {
        dataset: Arc<Dataset>,
        method: DenoiseMethod,
    },
    Detect {
        dataset: Arc<Dataset>,
        params: BaselineParams,
        model: String,
    },
    Ensemble {
        sets: Vec<PredictionSet>,
        cfg: EnsembleConfig,
    },
    Evaluate {
        dataset: Arc<Dataset>,
        preds: PredictionSet,
        cfg: EvalConfig,
        imagery: Option<String>,
    },
    Segregate {
        dataset: Arc<Dataset>,
        preds: PredictionSet,
        score_threshold: f64,
    },
    ExportCsv {
        preds: PredictionSet,
        pixel_size_nm: f64,
        score_threshold: f64,
    },
}

impl Plan {
    fn total(&self) -> usize {
        match self {
            Plan::Denoise { dataset, .. }
            | Plan::Detect { dataset, .. }
            | Plan::Evaluate { dataset, .. }
            | Plan::Segregate { dataset, .. } => dataset.images.len(),
            Plan::Ensemble { sets, .. } => sets.iter().map(|s| s.images.len()).max().unwrap_or(0),
            Plan::ExportCsv { preds, .. } => preds.images.len(),
        }
    }
}

fn parse<T: for<'de> Deserialize<'de>>(params: &Value) -> ApiResult<T> {
    serde_json::from_value(params.clone()).map_err(|e| ApiError::from_params(&e))
}

fn ratio(name: &str, v: f64) -> ApiResult<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ApiError::invalid(format!("`{name}` = {v} is outside [0, 1]"), vec![name.to_string()]))
    }
}

fn load_predictions(state: &AppState, id: &str) -> ApiResult<PredictionSet> {
    let (meta, bytes) = state.0.artifacts.read(id)?;
    if meta.kind != ArtifactKind::Predictions {
        return Err(ApiError::invalid(
            format!("artifact `{id}` is not a prediction file"),
            vec!["predictions".into()],
        ));
    }
    let text = String::from_utf8(bytes).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(read_predictions(&text)?)
}

fn plan(state: &AppState, kind: JobKind, params: &Value) -> ApiResult<Plan> {
    Ok(match kind {
        JobKind::Denoise => {
            let p: DenoiseParams = parse(params)?;
            let dataset = state.dataset(&p.dataset)?;
            let method = DenoiseMethod::parse(&p.method, p.param)?;
            Plan::Denoise { dataset, method }
        }
        JobKind::Detect => {
            let p: DetectParams = parse(params)?;
            let dataset = state.dataset(&p.dataset)?;
            if p.method != "baseline" {
                return Err(ApiError::invalid(
                    format!("unknown detection method `{}`", p.method),
                    vec!["method".into()],
                ));
            }
            let params = BaselineParams {
                intensity_threshold: p.intensity_threshold,
                min_failure_area_px: p.min_size,
                expected_pattern: p.pattern.or_else(|| dataset.pattern.clone()).unwrap_or_default(),
                merge_distance_px: p.merge_distance,
                box_pad_px: p.box_pad,
            };
            params.validate()?;
            let model = p.model.unwrap_or_else(|| lsinspect::baseline::BASELINE_SOURCE.to_string());
            if model.is_empty() {
                return Err(ApiError::invalid("model name is empty", vec!["model".into()]));
            }
            Plan::Detect { dataset, params, model }
        }
        JobKind::Ensemble => {
            let p: EnsembleParams = parse(params)?;
            if p.predictions.len() < 2 && !p.allow_single {
                return Err(ApiError::invalid(
                    "an ensemble needs at least two prediction artifacts (or allow_single)",
                    vec!["predictions".into()],
                ));
            }
            if p.predictions.is_empty() {
                return Err(ApiError::invalid("no prediction artifacts given", vec!["predictions".into()]));
            }
            let sets = p
                .predictions
                .iter()
                .map(|id| load_predictions(state, id))
                .collect::<ApiResult<Vec<_>>>()?;
            let order = p.order.unwrap_or_else(|| sets.iter().map(|s| s.model.clone()).collect());
            let cfg = EnsembleConfig {
                preference_order: order,
                iou_threshold: p.iou,
                overlap_scope: p.scope,
                class_scope: p.class_scope,
            };
            cfg.validate()?;
            Plan::Ensemble { sets, cfg }
        }
        JobKind::Evaluate => {
            let p: EvaluateParams = parse(params)?;
            let dataset = state.dataset(&p.dataset)?;
            if !dataset.handle.has_ground_truth {
                return Err(ApiError::unprocessable(
                    "no_ground_truth",
                    format!("dataset `{}` has no ground-truth annotations", p.dataset),
                ));
            }
            let preds = load_predictions(state, &p.predictions)?;
            let cfg = EvalConfig {
                iou_threshold: p.iou,
                score_threshold: p.score_threshold,
                weighting: p.weighting,
                interpolation: p.interpolation,
            };
            cfg.validate()?;
            Plan::Evaluate {
                dataset,
                preds,
                cfg,
                imagery: p.imagery,
            }
        }
        JobKind::Segregate => {
            let p: SegregateParams = parse(params)?;
            let dataset = state.dataset(&p.dataset)?;
            ratio("score_threshold", p.score_threshold)?;
            let preds = load_predictions(state, &p.predictions)?;
            Plan::Segregate {
                dataset,
                preds,
                score_threshold: p.score_threshold,
            }
        }
        JobKind::ExportCsv => {
            let p: ExportCsvParams = parse(params)?;
            ratio("score_threshold", p.score_threshold)?;
            if !(p.pixel_size_nm > 0.0 && p.pixel_size_nm.is_finite()) {
                return Err(ApiError::invalid("pixel_size_nm must be positive", vec!["pixel_size_nm".into()]));
            }
            let preds = load_predictions(state, &p.predictions)?;
            Plan::ExportCsv {
                preds,
                pixel_size_nm: p.pixel_size_nm,
                score_threshold: p.score_threshold,
            }
        }
    })
}

/// Validate, register and start a job. Must run inside a Tokio runtime.
pub fn submit(state: &AppState, kind: JobKind, params: Value) -> ApiResult<Arc<Job>> {
    let plan = plan(state, kind, &params)?;
    let job = Arc::new(Job::new(state.fresh_id("job"), kind, params, plan.total()));
    state
        .0
        .jobs
        .write()
        .expect("job lock")
        .insert(job.id.clone(), job.clone());

    let (state, job2) = (state.clone(), job.clone());
    tokio::spawn(async move {
        let permit = state.0.slots.clone().acquire_owned().await;
        job2.transition(JobStatus::Running, None, None);
        let (st, j) = (state.clone(), job2.clone());
        let outcome = tokio::task::spawn_blocking(move || execute(&st, &j, plan)).await;
        drop(permit);
        match outcome {
            Ok(Ok(result)) => job2.transition(JobStatus::Done, Some(result), None),
            Ok(Err(e)) => job2.transition(JobStatus::Failed, None, Some(e.body)),
            Err(e) => job2.transition(JobStatus::Failed, None, Some(ApiError::internal(e.to_string()).body)),
        };
    });
    Ok(job)
}

fn zip_options() -> SimpleFileOptions {
    SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default())
        .unix_permissions(0o644)
}

/// Deterministic zip of `(path, bytes)` members in the given order.
pub fn build_zip(members: &[(String, Vec<u8>)]) -> ApiResult<Vec<u8>> {
    let mut w = zip::ZipWriter::new(Cursor::new(Vec::new()));
    for (name, bytes) in members {
        w.start_file(name.as_str(), zip_options())
            .and_then(|_| w.write_all(bytes).map_err(Into::into))
            .map_err(|e| ApiError::internal(format!("zip member {name}: {e}")))?;
    }
    let cursor = w.finish().map_err(|e| ApiError::internal(format!("finishing zip: {e}")))?;
    Ok(cursor.into_inner())
}

fn load_image(state: &AppState, ds: &Dataset, name: &str) -> ApiResult<SemImage> {
    SemImage::load(&ds.image_path(name), state.0.config.pixel_size_nm).map_err(ApiError::from)
}

/// Predictions aligned to the dataset's image list; images absent from the
/// document get an empty entry.
fn aligned(ds: &Dataset, preds: &PredictionSet) -> Vec<ImagePredictions> {
    let by_image = preds.by_image();
    ds.images
        .iter()
        .map(|name| ImagePredictions {
            image_id: name.clone(),
            detections: by_image.get(name.as_str()).map(|d| d.to_vec()).unwrap_or_default(),
        })
        .collect()
}

fn execute(state: &AppState, job: &Job, plan: Plan) -> ApiResult<JobResult> {
    let store = &state.0.artifacts;
    let mut new_dataset = None;
    let meta: ArtifactMeta = match plan {
        Plan::Denoise { dataset, method } => {
            let id = state.fresh_id("ds");
            let root = state.dataset_root(&id);
            let images_dir = root.join("images");
            fs::create_dir_all(&images_dir).map_err(|e| ApiError::internal(e.to_string()))?;
            let members = dataset
                .images
                .par_iter()
                .map(|name| {
                    let out = denoise(&load_image(state, &dataset, name)?, method).map_err(ApiError::from)?;
                    let bytes = out.encode_png();
                    fs::write(images_dir.join(name), &bytes).map_err(|e| ApiError::internal(e.to_string()))?;
                    job.tick();
                    Ok((format!("images/{name}"), bytes))
                })
                .collect::<ApiResult<Vec<_>>>()?;
            let mut derived = (*dataset).clone();
            derived.handle.id = id.clone();
            derived.handle.root = root;
            derived.handle.created_at = unix_now();
            derived.handle.rejected.clear();
            derived.handle.derived_from = Some(dataset.handle.id.clone());
            if !derived.truths.is_empty() {
                let ann = derived.handle.root.join("annotations");
                fs::create_dir_all(&ann).map_err(|e| ApiError::internal(e.to_string()))?;
                for (name, record) in &derived.truths {
                    let stem = std::path::Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or("record");
                    fs::write(
                        ann.join(format!("{stem}.json")),
                        lsinspect::datamodel::write_ground_truth_json(record),
                    )
                    .map_err(|e| ApiError::internal(e.to_string()))?;
                }
            }
            state.register_dataset(derived);
            new_dataset = Some(id);
            store.put(ArtifactKind::Archive, &build_zip(&members)?)?
        }
        Plan::Detect { dataset, params, model } => {
            let images = dataset
                .images
                .par_iter()
                .map(|name| {
                    let img = load_image(state, &dataset, name)?;
                    let mut detections = detect_conventional(&img, &params).map_err(ApiError::from)?;
                    for d in &mut detections {
                        d.source = model.clone();
                    }
                    job.tick();
                    Ok(ImagePredictions {
                        image_id: name.clone(),
                        detections,
                    })
                })
                .collect::<ApiResult<Vec<_>>>()?;
            let mut set = PredictionSet::new(model);
            set.images = images;
            store.put(ArtifactKind::Predictions, write_predictions(&set).as_bytes())?
        }
        Plan::Ensemble { sets, cfg } => {
            let (merged, _warnings) = merge_prediction_sets(&sets, &cfg).map_err(ApiError::from)?;
            store.put(ArtifactKind::Predictions, write_predictions(&merged).as_bytes())?
        }
        Plan::Evaluate {
            dataset,
            preds,
            cfg,
            imagery,
        } => {
            let truths = dataset.truth_records();
            let with_truth: Vec<ImagePredictions> = aligned(&dataset, &preds)
                .into_iter()
                .filter(|p| dataset.truths.contains_key(&p.image_id))
                .collect();
            let mut report = evaluate_dataset(&with_truth, &truths, &cfg).map_err(ApiError::from)?;
            report.imagery = imagery;
            store.put(ArtifactKind::Report, report.to_json().as_bytes())?
        }
        Plan::Segregate {
            dataset,
            preds,
            score_threshold,
        } => {
            let images = aligned(&dataset, &preds);
            let plan = segregate(&images, score_threshold, None, None).map_err(ApiError::from)?;
            let mut files: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
            for name in &dataset.images {
                let path = dataset.image_path(name);
                let bytes = fs::read(&path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
                files.insert(name, bytes);
                job.tick();
            }
            let mut members = vec![(
                "plan.json".to_string(),
                serde_json::to_vec_pretty(&plan).expect("plan serializes"),
            )];
            for (folder, ids) in &plan.folders {
                for id in ids {
                    members.push((format!("{folder}/{id}"), files[id.as_str()].clone()));
                }
            }
            store.put(ArtifactKind::Archive, &build_zip(&members)?)?
        }
        Plan::ExportCsv {
            preds,
            pixel_size_nm,
            score_threshold,
        } => {
            let kept: Vec<ImagePredictions> = preds
                .images
                .iter()
                .map(|img| ImagePredictions {
                    image_id: img.image_id.clone(),
                    detections: img
                        .detections
                        .iter()
                        .filter(|d| d.score >= score_threshold)
                        .cloned()
                        .collect::<Vec<Detection>>(),
                })
                .collect();
            let csv = export_csv(&kept, pixel_size_nm).map_err(ApiError::from)?;
            store.put(ArtifactKind::Csv, csv.as_bytes())?
        }
    };
    Ok(JobResult {
        url: format!("/api/artifacts/{}", meta.id),
        artifact: meta.id,
        kind: meta.kind,
        dataset: new_dataset,
    })
}
