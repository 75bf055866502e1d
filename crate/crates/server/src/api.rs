//! HTTP handlers for `/api/v1`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use c3det_core::dataset::{image_path, Split};
use c3det_core::{Detection, UserInput};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult};
use crate::openapi;
use crate::state::AppState;
use crate::store::{AnnotatedBox, Event, EventType, Mode};

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/openapi", get(openapi_doc))
        .route("/api/v1/health", get(health))
        .route("/api/v1/dataset", get(dataset_info))
        .route("/api/v1/images/{image_id}", get(image_png))
        .route("/api/v1/infer", post(infer))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/annotations/{image_id}", get(get_annotations).put(put_annotations))
        .route("/api/v1/sessions/{id}/events", post(post_event))
        .route("/api/v1/sessions/{id}/export", get(export))
        .with_state(state)
}

/// JSON body extractor whose rejections use the API error format:
/// malformed JSON is a 400, well-formed JSON of the wrong shape a 422.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(JsonRejection::JsonDataError(e)) => Err(ApiError::Unprocessable(e.body_text())),
            Err(e) => Err(ApiError::BadRequest(e.body_text())),
        }
    }
}

async fn openapi_doc() -> Json<Value> {
    Json(openapi::document())
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "model_loaded": state.worker.is_some(),
        "model_version": state.worker.as_ref().map(|w| w.version.clone()),
        "inference_pending": state.worker.as_ref().map(|w| w.pending()).unwrap_or(0),
    }))
}

async fn dataset_info(State(state): State<Arc<AppState>>) -> Json<Value> {
    let d = &state.dataset;
    let images: BTreeMap<&str, Vec<&str>> = Split::ALL.iter().map(|s| (s.as_str(), d.image_ids(*s))).collect();
    Json(json!({
        "name": d.name,
        "classes": d.meta.classes.names(),
        "image_size": d.meta.image_size,
        "images": images,
    }))
}

async fn image_png(State(state): State<Arc<AppState>>, Path(image_id): Path<String>) -> ApiResult<Response> {
    let split = state.dataset.split_of(&image_id)?;
    let path = image_path(&state.dataset.root, split, &image_id);
    let bytes = tokio::fs::read(&path).await.map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRequest {
    pub image_id: String,
    #[serde(default)]
    pub user_inputs: Vec<UserInput>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InferResponse {
    pub detections: Vec<Detection>,
    pub latency_ms: f64,
    pub model_version: String,
}

async fn infer(State(state): State<Arc<AppState>>, ApiJson(req): ApiJson<InferRequest>) -> ApiResult<Json<InferResponse>> {
    let started = Instant::now();
    let worker = state.worker.as_ref().ok_or(ApiError::ModelUnavailable)?;
    let split = state.dataset.split_of(&req.image_id)?;
    let meta = &state.dataset.meta;
    for input in &req.user_inputs {
        input
            .validate(meta.width(), meta.height(), meta.classes.len())
            .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    }
    let image = {
        let root = state.dataset.root.clone();
        let meta = meta.clone();
        let id = req.image_id.clone();
        tokio::task::spawn_blocking(move || c3det_core::dataset::load_image(&root, split, &id, &meta))
            .await
            .map_err(ApiError::internal)?
            .map_err(ApiError::internal)?
    };
    let detections = worker.infer(image, req.user_inputs).await?;
    Ok(Json(InferResponse {
        detections,
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
        model_version: worker.version.clone(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: String,
    pub mode: Mode,
}

async fn create_session(State(state): State<Arc<AppState>>, ApiJson(req): ApiJson<CreateSession>) -> ApiResult<Response> {
    if !state.dataset.matches(&req.dataset) {
        return Err(ApiError::NotFound(format!(
            "unknown dataset {:?} (this server serves {:?})",
            req.dataset, state.dataset.name
        )));
    }
    let session = state.create_session(state.dataset.name.clone(), req.mode).await?;
    log::info!("created session {} ({:?})", session.record.session_id, session.record.mode);
    Ok((StatusCode::CREATED, Json(json!({ "session_id": session.record.session_id }))).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = state.session(&id).await?;
    Ok(Json(serde_json::to_value(&session.record).map_err(ApiError::internal)?))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationBody {
    pub boxes: Vec<AnnotatedBox>,
}

async fn put_annotations(
    State(state): State<Arc<AppState>>,
    Path((id, image_id)): Path<(String, String)>,
    ApiJson(body): ApiJson<AnnotationBody>,
) -> ApiResult<StatusCode> {
    let session = state.session(&id).await?;
    state.dataset.split_of(&image_id)?;
    let meta = &state.dataset.meta;
    for (i, b) in body.boxes.iter().enumerate() {
        meta.classes
            .check(b.class_id)
            .map_err(|e| ApiError::Unprocessable(format!("box {i}: {e}")))?;
        if !b.bbox.within(meta.width() as f64, meta.height() as f64) {
            return Err(ApiError::Unprocessable(format!(
                "box {i} {:?} outside the {}x{} image",
                b.bbox.to_array(),
                meta.width(),
                meta.height()
            )));
        }
    }
    let _region = session.state.lock().await;
    let files = session.files.clone();
    tokio::task::spawn_blocking(move || files.write_annotations(&image_id, &body.boxes))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_annotations(State(state): State<Arc<AppState>>, Path((id, image_id)): Path<(String, String)>) -> ApiResult<Json<AnnotationBody>> {
    let session = state.session(&id).await?;
    state.dataset.split_of(&image_id)?;
    let _region = session.state.lock().await;
    let boxes = session.files.read_annotations(&image_id).map_err(ApiError::internal)?;
    Ok(Json(AnnotationBody { boxes }))
}

async fn post_event(State(state): State<Arc<AppState>>, Path(id): Path<String>, ApiJson(event): ApiJson<Event>) -> ApiResult<StatusCode> {
    let session = state.session(&id).await?;
    let mut region = session.state.lock().await;
    if let Some(last) = region.last_t_ms {
        if event.t_ms < last {
            return Err(ApiError::Unprocessable(format!(
                "t_ms {} is earlier than the previous event ({last})",
                event.t_ms
            )));
        }
    }
    let files = session.files.clone();
    let t_ms = event.t_ms;
    tokio::task::spawn_blocking(move || files.append_event(&event))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    region.last_t_ms = Some(t_ms);
    Ok(StatusCode::ACCEPTED)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportStats {
    /// Event count per type; every type is present.
    pub counts: BTreeMap<String, usize>,
    pub total_events: usize,
    /// `t_ms` of the last event (0 for an empty log).
    pub elapsed_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Export {
    pub session_id: String,
    pub dataset: String,
    pub mode: Mode,
    pub created_at: u64,
    /// Final boxes per image, each with score 1.
    pub annotations: BTreeMap<String, Vec<Detection>>,
    pub stats: ExportStats,
}

async fn export(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Export>> {
    let session = state.session(&id).await?;
    let _region = session.state.lock().await;
    let files = session.files.clone();
    let (snapshots, events) = tokio::task::spawn_blocking(move || Ok::<_, std::io::Error>((files.all_annotations()?, files.read_events()?)))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;

    let mut counts: BTreeMap<String, usize> = EventType::ALL.iter().map(|t| (t.as_str().to_string(), 0)).collect();
    for e in &events {
        *counts.get_mut(e.kind.as_str()).expect("every type is present") += 1;
    }
    let annotations = snapshots
        .into_iter()
        .map(|(image_id, boxes)| {
            let dets = boxes
                .into_iter()
                .map(|b| Detection {
                    bbox: b.bbox,
                    class_id: b.class_id,
                    score: 1.0,
                })
                .collect();
            (image_id, dets)
        })
        .collect();
    Ok(Json(Export {
        session_id: session.record.session_id.clone(),
        dataset: session.record.dataset.clone(),
        mode: session.record.mode,
        created_at: session.record.created_at,
        annotations,
        stats: ExportStats {
            counts,
            total_events: events.len(),
            elapsed_ms: events.last().map(|e| e.t_ms).unwrap_or(0),
        },
    }))
}
