use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde_json::json;

use super::jobs::{CancelError, JobRecord, JobService, JobState, Priority, ServiceConfig, SubmitError};
use crate::core_model::{ImagePlane, MaskKind, MaskPlane, PipelineConfig, Placement};
use crate::error::{Error, Result};
use crate::pipeline::CompositionJob;

/// Upload size cap for a job submission.
pub const MAX_UPLOAD_BYTES: usize = 64 << 20;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown job {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        let status = match e {
            SubmitError::Invalid(_) => StatusCode::BAD_REQUEST,
            SubmitError::QueueFull(_) | SubmitError::ShuttingDown => StatusCode::SERVICE_UNAVAILABLE,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Fields of a `POST /v1/jobs` multipart body.
#[derive(Default)]
struct Submission {
    bg: Option<Bytes>,
    fg: Option<Bytes>,
    fg_mask: Option<Bytes>,
    bg_box: Option<Bytes>,
    placement: Option<String>,
    prompt: Option<String>,
    params: Option<String>,
    priority: Option<String>,
    force: bool,
}

impl Submission {
    async fn read(mut mp: Multipart) -> ApiResult<Self> {
        let mut s = Submission::default();
        while let Some(field) = mp.next_field().await.map_err(|e| ApiError::bad_request(e.body_text()))? {
            let name = field.name().unwrap_or_default().to_string();
            let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
            let text = || {
                String::from_utf8(data.to_vec()).map_err(|_| ApiError::bad_request(format!("field {name} is not UTF-8")))
            };
            match name.as_str() {
                "bg" => s.bg = Some(data.clone()),
                "fg" => s.fg = Some(data.clone()),
                "fg_mask" => s.fg_mask = Some(data.clone()),
                "bg_box" => s.bg_box = Some(data.clone()),
                "placement" => s.placement = Some(text()?),
                "prompt" => s.prompt = Some(text()?).filter(|p| !p.trim().is_empty()),
                "params" => s.params = Some(text()?),
                "priority" => s.priority = Some(text()?),
                "force" => s.force = matches!(text()?.trim(), "1" | "true" | "yes"),
                other => return Err(ApiError::bad_request(format!("unexpected field {other:?}"))),
            }
        }
        Ok(s)
    }

    fn into_job(self) -> Result<(CompositionJob, Priority, bool)> {
        let need = |b: Option<Bytes>, name: &str| b.ok_or_else(|| Error::invalid(format!("missing field {name}")));
        let bg = ImagePlane::from_encoded_bytes(&need(self.bg, "bg")?).map_err(|e| field_error("bg", e))?;
        let fg = ImagePlane::from_encoded_bytes(&need(self.fg, "fg")?).map_err(|e| field_error("fg", e))?;
        let fg_mask = MaskPlane::from_encoded_bytes(&need(self.fg_mask, "fg_mask")?, MaskKind::FgObject)
            .map_err(|e| field_error("fg_mask", e))?;
        let placement = match self.placement {
            Some(p) => Placement::parse(&p)?,
            None => Placement::default(),
        };
        let cfg: PipelineConfig = match self.params {
            Some(p) if !p.trim().is_empty() => {
                serde_json::from_str(&p).map_err(|e| Error::invalid(format!("params: {e}")))?
            }
            _ => PipelineConfig::default(),
        };
        let mut job = CompositionJob::new(bg, fg, fg_mask, placement).with_cfg(cfg);
        if let Some(b) = self.bg_box {
            job = job.with_bg_box(MaskPlane::from_encoded_bytes(&b, MaskKind::BgBox).map_err(|e| field_error("bg_box", e))?);
        }
        if let Some(p) = self.prompt {
            job = job.with_prompt(p);
        }
        let priority = self.priority.as_deref().map(str::parse).transpose()?.unwrap_or_default();
        Ok((job, priority, self.force))
    }
}

fn field_error(name: &str, e: Error) -> Error {
    Error::invalid(format!("field {name}: {e}"))
}

async fn submit(State(svc): State<Arc<JobService>>, mp: Multipart) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let sub = Submission::read(mp).await?;
    let svc2 = svc.clone();
    let record = tokio::task::spawn_blocking(move || -> ApiResult<JobRecord> {
        let (job, priority, force) = sub.into_job().map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(svc2.submit(job, priority, force)?)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "job_id": record.job_id, "config_hash": record.config_hash, "state": record.state })),
    ))
}

async fn list_jobs(State(svc): State<Arc<JobService>>) -> Json<Vec<JobRecord>> {
    Json(svc.list())
}

async fn get_job(State(svc): State<Arc<JobService>>, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    svc.get(&id).map(Json).ok_or_else(|| ApiError::not_found(&id))
}

async fn cancel_job(State(svc): State<Arc<JobService>>, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    match svc.cancel(&id) {
        Ok(r) => Ok(Json(r)),
        Err(CancelError::NotFound(_)) => Err(ApiError::not_found(&id)),
        Err(e @ CancelError::AlreadyFinished(_)) => Err(ApiError::new(StatusCode::CONFLICT, e.to_string())),
    }
}

async fn file_response(path: std::path::PathBuf, content_type: &'static str) -> ApiResult<Response> {
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("reading {}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

fn finished(svc: &JobService, id: &str) -> ApiResult<JobRecord> {
    let r = svc.get(id).ok_or_else(|| ApiError::not_found(id))?;
    match (&r.state, &r.result) {
        (JobState::Done, Some(_)) => Ok(r),
        (JobState::Failed, _) => Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("job {id} failed: {}", r.error.as_deref().unwrap_or("unknown error")),
        )),
        _ => Err(ApiError::new(StatusCode::CONFLICT, format!("job {id} is {:?}", r.state).to_lowercase())),
    }
}

async fn get_result(State(svc): State<Arc<JobService>>, Path(id): Path<String>) -> ApiResult<Response> {
    let r = finished(&svc, &id)?;
    file_response(r.result.expect("done job has artifacts").result, "image/png").await
}

async fn get_trace(State(svc): State<Arc<JobService>>, Path(id): Path<String>) -> ApiResult<Response> {
    let r = finished(&svc, &id)?;
    file_response(r.result.expect("done job has artifacts").trace, "application/x-ndjson").await
}

async fn get_preview(State(svc): State<Arc<JobService>>, Path(id): Path<String>) -> ApiResult<Response> {
    let r = svc.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    match r.preview {
        Some(p) => file_response(p, "image/png").await,
        None => Err(ApiError::new(StatusCode::CONFLICT, format!("job {id} has no preview yet"))),
    }
}

async fn presets() -> Json<PipelineConfig> {
    Json(PipelineConfig::default())
}

async fn healthz(State(svc): State<Arc<JobService>>) -> Json<serde_json::Value> {
    let jobs = svc.list();
    let count = |s: JobState| jobs.iter().filter(|j| j.state == s).count();
    Json(json!({
        "status": "ok",
        "backbone": svc.profile().name,
        "workers": svc.workers(),
        "queue_limit": svc.queue_limit(),
        "queued": count(JobState::Queued),
        "running": count(JobState::Running),
    }))
}

/// All endpoints, mounted under `/v1`.
pub fn router(svc: Arc<JobService>) -> Router {
    let v1 = Router::new()
        .route("/jobs", get(list_jobs).post(submit))
        .route("/jobs/{id}", get(get_job).delete(cancel_job))
        .route("/jobs/{id}/result", get(get_result))
        .route("/jobs/{id}/preview", get(get_preview))
        .route("/jobs/{id}/trace", get(get_trace))
        .route("/presets", get(presets))
        .route("/healthz", get(healthz));
    Router::new()
        .nest("/v1", v1)
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(svc)
}

/// Starts the workers and serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig, addr: SocketAddr) -> Result<()> {
    let svc = Arc::new(tokio::task::block_in_place(|| JobService::start(&cfg))?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "serving /v1 on {} ({} backbone, {} workers)",
        listener.local_addr()?,
        svc.profile().name,
        svc.workers()
    );
    axum::serve(listener, router(svc.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    tokio::task::block_in_place(|| svc.shutdown());
    Ok(())
}
