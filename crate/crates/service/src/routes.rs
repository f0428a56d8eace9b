use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use lsinspect::datamodel::read_predictions;
use lsinspect::SemImage;

use crate::datasets::DatasetHandle;
use crate::error::{ApiError, ApiResult};
use crate::jobs::{submit, JobKind, JobView};
use crate::overlay;
use crate::state::AppState;
use crate::store::ArtifactKind;

const MAX_UPLOAD_BYTES: usize = 1 << 30;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/datasets", get(list_datasets).post(upload_dataset))
        .route("/api/datasets/{id}", get(get_dataset))
        .route("/api/datasets/{id}/images", get(list_images))
        .route("/api/jobs", get(list_jobs).post(create_job))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/artifacts/{id}", get(get_artifact))
        .route("/api/overlay", get(get_overlay))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn upload_dataset(State(state): State<AppState>, mut form: Multipart) -> ApiResult<Response> {
    let mut archive: Option<Bytes> = None;
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::unprocessable("bad_upload", e.to_string()))?
    {
        if field.file_name().is_some() || matches!(field.name(), Some("archive" | "file")) {
            archive = Some(field.bytes().await.map_err(|e| ApiError::unprocessable("bad_upload", e.to_string()))?);
            break;
        }
    }
    let archive = archive.ok_or_else(|| ApiError::invalid("multipart body has no archive field", vec!["archive".into()]))?;
    let ds = blocking(move || state.upload(&archive)).await?;
    Ok((StatusCode::CREATED, Json(ds.handle.clone())).into_response())
}

async fn list_datasets(State(state): State<AppState>) -> Json<Vec<DatasetHandle>> {
    Json(state.datasets().iter().map(|d| d.handle.clone()).collect())
}

async fn get_dataset(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<DatasetHandle>> {
    Ok(Json(state.dataset(&id)?.handle.clone()))
}

async fn list_images(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let ds = state.dataset(&id)?;
    let images: Vec<Value> = ds
        .images
        .iter()
        .map(|name| json!({"name": name, "has_ground_truth": ds.truths.contains_key(name)}))
        .collect();
    Ok(Json(json!({"dataset": id, "images": images})))
}

#[derive(Deserialize)]
struct JobRequest {
    kind: Value,
    #[serde(default)]
    params: Value,
}

async fn create_job(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: JobRequest = serde_json::from_slice(&body).map_err(|e| ApiError::from_params(&e))?;
    let kind: JobKind = serde_json::from_value(req.kind.clone())
        .map_err(|_| ApiError::invalid(format!("unknown job kind {}", req.kind), vec!["kind".into()]))?;
    let params = if req.params.is_null() { json!({}) } else { req.params };
    let job = submit(&state, kind, params)?;
    let view = job.view();
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": view.id, "status": view.status}))).into_response())
}

async fn list_jobs(State(state): State<AppState>) -> Json<Vec<JobView>> {
    Json(state.jobs().iter().map(|j| j.view()).collect())
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobView>> {
    Ok(Json(state.job(&id)?.view()))
}

async fn get_artifact(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (meta, bytes) = blocking(move || state.0.artifacts.read(&id)).await?;
    let ext = match meta.kind {
        ArtifactKind::Predictions | ArtifactKind::Report => "json",
        ArtifactKind::Csv => "csv",
        ArtifactKind::Archive => "zip",
    };
    Ok((
        [
            (header::CONTENT_TYPE, meta.kind.media_type().to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{}.{ext}\"", meta.id)),
        ],
        bytes,
    )
        .into_response())
}

#[derive(Deserialize)]
struct OverlayQuery {
    dataset: String,
    image: String,
    #[serde(default)]
    pred: Option<String>,
    #[serde(default)]
    min_score: Option<f64>,
}

async fn get_overlay(State(state): State<AppState>, Query(q): Query<OverlayQuery>) -> ApiResult<Response> {
    let min_score = q.min_score.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&min_score) {
        return Err(ApiError::invalid(format!("min_score {min_score} outside [0, 1]"), vec!["min_score".into()]));
    }
    let ds = state.dataset(&q.dataset)?;
    if !ds.contains(&q.image) {
        return Err(ApiError::not_found(format!("image `{}` is not in dataset `{}`", q.image, q.dataset)));
    }
    let png = blocking(move || {
        let detections = match &q.pred {
            Some(id) => {
                let (meta, bytes) = state.0.artifacts.read(id)?;
                if meta.kind != ArtifactKind::Predictions {
                    return Err(ApiError::invalid(format!("artifact `{id}` is not a prediction file"), vec!["pred".into()]));
                }
                let set = read_predictions(&String::from_utf8_lossy(&bytes))?;
                set.get(&q.image)
                    .map(|i| i.detections.iter().filter(|d| d.score >= min_score).cloned().collect())
                    .unwrap_or_default()
            }
            None => Vec::new(),
        };
        let base = SemImage::load(&ds.image_path(&q.image), state.0.config.pixel_size_nm)?.to_gray8();
        Ok(overlay::render(&base, &detections))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
