//! HTTP session API for interactive segmentation.
//!
//! Every session wraps a [`lesionseg_core::Session`], the same state machine
//! the batch runner drives, behind a per-session read/write lock. Mutations
//! and refinement run on the blocking thread pool.
//!
//! | Method | Path | |
//! |---|---|---|
//! | GET | `/scans` | scans in the manifest |
//! | POST | `/sessions` | open a session |
//! | GET | `/sessions/{id}/slices/{k}` | 8-bit image, RLE mask, clicks |
//! | GET | `/sessions/{id}/slices/{k}/mask` | RLE mask only |
//! | POST | `/sessions/{id}/feedback` | click or erase |
//! | POST | `/sessions/{id}/refine` | refine pending slices |
//! | GET | `/sessions/{id}/metrics` | IoU (when ground truth exists) and feedback |
//! | GET | `/sessions/{id}/log` | JSONL action log |

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

use lesionseg_core::click::SliceClicks;
use lesionseg_core::dataset::{DatasetError, Manifest};
use lesionseg_core::expert::{Action, FeedbackAction};
use lesionseg_core::rle::Rle;
use lesionseg_core::runner::{FeedbackSummary, RunError, SegmenterBinding, SegmenterSettings, SystemSpec};
use lesionseg_core::seed::derive_seed;
use lesionseg_core::session::{ApplyOutcome, Session, SessionConfig, SessionError, Topology};
use lesionseg_core::volume::{preprocess_slice, VolumeError};
use lesionseg_core::Pixel;

#[derive(Debug, Clone)]
#[derive(Default)]
pub struct ServiceConfig {
    pub session: SessionConfig,
    pub segmenters: SegmenterSettings,
    pub seed: u64,
    /// When set, each session's JSONL log is rewritten here after every refine.
    pub log_dir: Option<PathBuf>,
}


type SessionHandle = Arc<RwLock<Session>>;

pub struct AppState {
    manifest: Manifest,
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, SessionHandle>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(manifest: Manifest, config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            manifest,
            config,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    async fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::Volume(VolumeError::SliceOutOfRange { .. }) | SessionError::Click(_) => {
                StatusCode::BAD_REQUEST
            }
            SessionError::NotInteractive(_) => StatusCode::CONFLICT,
            SessionError::MissingInitial(_) | SessionError::MissingRefiner(_) => StatusCode::BAD_REQUEST,
            SessionError::Segmenter { .. } | SessionError::Volume(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<RunError> for ApiError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Session(e) => e.into(),
            RunError::Dataset(DatasetError::UnknownScan(_)) => ApiError::not_found(e.to_string()),
            RunError::UnknownSegmenter(_) | RunError::WrongRole { .. } | RunError::InvalidSpec(_) => {
                ApiError::bad_request(e.to_string())
            }
            other => ApiError::internal(other.to_string()),
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScanInfo {
    pub scan_id: String,
    pub patient_id: String,
    pub has_mask: bool,
    pub relative_foreground_area: f64,
}

async fn list_scans(State(state): State<Arc<AppState>>) -> Json<Vec<ScanInfo>> {
    Json(
        state
            .manifest
            .entries
            .iter()
            .map(|e| ScanInfo {
                scan_id: e.scan_id.clone(),
                patient_id: e.patient_id.clone(),
                has_mask: e.mask_path.is_some(),
                relative_foreground_area: e.relative_foreground_area,
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub scan_id: String,
    pub topology: Topology,
    /// Shorthand binding, interpreted as on the command line.
    #[serde(default)]
    pub segmenter: Option<SegmenterBinding>,
    #[serde(default)]
    pub initial: Option<SegmenterBinding>,
    #[serde(default)]
    pub refinement: Option<SegmenterBinding>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub scan_id: String,
    pub topology: Topology,
    pub height: usize,
    pub width: usize,
    pub n_slices: usize,
    pub iteration: usize,
    pub has_gt: bool,
}

fn session_info(id: &str, s: &Session) -> SessionInfo {
    let d = s.scan().dims();
    SessionInfo {
        session_id: id.into(),
        scan_id: s.scan().scan_id.clone(),
        topology: s.topology(),
        height: d.height,
        width: d.width,
        n_slices: d.n_slices,
        iteration: s.iteration(),
        has_gt: s.gt().is_some(),
    }
}

fn resolve_spec(req: &CreateSession) -> Result<SystemSpec, ApiError> {
    let mut spec = match &req.segmenter {
        Some(seg) => SystemSpec::from_cli(req.topology, 0, seg.clone()),
        None => SystemSpec {
            topology: req.topology,
            iterations: 0,
            initial: None,
            refinement: None,
        },
    };
    if req.initial.is_some() {
        spec.initial = req.initial.clone();
    }
    if req.refinement.is_some() {
        spec.refinement = req.refinement.clone();
    }
    if spec.topology == Topology::System2 {
        spec.initial = None;
    }
    if spec.topology == Topology::System1 {
        spec.refinement = None;
    }
    let missing = match spec.topology {
        Topology::System1 => spec.initial.is_none(),
        Topology::System2 => spec.refinement.is_none(),
        Topology::System3 => spec.initial.is_none() || spec.refinement.is_none(),
    };
    if missing {
        return Err(ApiError::bad_request(format!("{} needs a segmenter binding", spec.topology)));
    }
    Ok(spec)
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let spec = resolve_spec(&req)?;
    state.manifest.entry(&req.scan_id).map_err(|e| ApiError::not_found(e.to_string()))?;
    let worker = state.clone();
    let scan_id = req.scan_id.clone();
    let session = blocking(move || {
        let (volume, mask) = worker.manifest.load_scan(&scan_id).map_err(RunError::from)?;
        let seg = &worker.config.segmenters;
        let mut initial = spec.initial.as_ref().map(|b| seg.initial(b)).transpose()?;
        let refiner = spec.refinement.as_ref().map(|b| seg.refinement(b)).transpose()?;
        let seed = derive_seed(worker.config.seed, &scan_id);
        let session = Session::start(
            Arc::new(volume),
            mask.map(Arc::new),
            spec.topology,
            initial.as_deref_mut().map(|s| s as _),
            refiner,
            worker.config.session,
            seed,
        )?;
        Ok(session)
    })
    .await?;
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let info = session_info(&id, &session);
    tracing::info!(session = %id, scan = %info.scan_id, topology = %info.topology, "session opened");
    state
        .sessions
        .write()
        .await
        .insert(id, Arc::new(RwLock::new(session)));
    Ok((StatusCode::CREATED, Json(info)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionInfo>, ApiError> {
    let handle = state.session(&id).await?;
    let s = handle.read().await;
    Ok(Json(session_info(&id, &s)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SlicePayload {
    pub k: usize,
    pub height: usize,
    pub width: usize,
    /// Preprocessed centre slice as row-major 8-bit grey levels, base64.
    pub image: String,
    pub mask: Rle,
    pub clicks: SliceClicks,
    pub iteration: usize,
}

fn check_slice(s: &Session, k: usize) -> Result<(), ApiError> {
    let n = s.scan().dims().n_slices;
    if k >= n {
        return Err(ApiError::bad_request(format!("slice {k} out of range (n_slices = {n})")));
    }
    Ok(())
}

async fn get_slice(
    State(state): State<Arc<AppState>>,
    Path((id, k)): Path<(String, usize)>,
) -> Result<Json<SlicePayload>, ApiError> {
    let handle = state.session(&id).await?;
    let s = handle.read().await;
    check_slice(&s, k)?;
    let raw = s.scan().slice(k).map_err(|e| ApiError::internal(e.to_string()))?;
    let gray: Vec<u8> = preprocess_slice(&raw, &s.config().intensity)
        .as_slice()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    Ok(Json(SlicePayload {
        k,
        height: raw.height(),
        width: raw.width(),
        image: BASE64.encode(gray),
        mask: Rle::encode(&s.slice_mask(k)?),
        clicks: s.cache().slice(k).clone(),
        iteration: s.iteration(),
    }))
}

async fn get_mask(
    State(state): State<Arc<AppState>>,
    Path((id, k)): Path<(String, usize)>,
) -> Result<Json<Rle>, ApiError> {
    let handle = state.session(&id).await?;
    let s = handle.read().await;
    check_slice(&s, k)?;
    Ok(Json(Rle::encode(&s.slice_mask(k)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    Pos,
    Neg,
    Erase,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub k: usize,
    pub action: FeedbackKind,
    #[serde(default)]
    pub i: Option<usize>,
    #[serde(default)]
    pub j: Option<usize>,
    /// Refine right away and close the iteration. Clients that batch several
    /// actions per iteration send `false` and call `/refine` afterwards.
    #[serde(default = "default_true")]
    pub refine: bool,
}

impl FeedbackRequest {
    pub fn from_action(a: &FeedbackAction, refine: bool) -> Option<Self> {
        let (action, pos) = match a.action {
            Action::PositiveClick(p) => (FeedbackKind::Pos, Some(p)),
            Action::NegativeClick(p) => (FeedbackKind::Neg, Some(p)),
            Action::Erase => (FeedbackKind::Erase, None),
            Action::NoAction => return None,
        };
        Some(Self {
            k: a.slice,
            action,
            i: pos.map(|p| p.i),
            j: pos.map(|p| p.j),
            refine,
        })
    }

    fn to_action(&self) -> Result<FeedbackAction, ApiError> {
        let click = || match (self.i, self.j) {
            (Some(i), Some(j)) => Ok(Pixel::new(i, j)),
            _ => Err(ApiError::bad_request("clicks need i and j")),
        };
        let action = match self.action {
            FeedbackKind::Pos => Action::PositiveClick(click()?),
            FeedbackKind::Neg => Action::NegativeClick(click()?),
            FeedbackKind::Erase => Action::Erase,
        };
        Ok(FeedbackAction { slice: self.k, action })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub accepted: bool,
    pub status: ApplyOutcome,
    pub mask: Rle,
    pub iteration: usize,
    pub feedback: FeedbackSummary,
}

fn persist_log(state: &AppState, id: &str, s: &Session) {
    if let Some(dir) = &state.config.log_dir {
        let path = dir.join(format!("{id}.jsonl"));
        if let Err(e) = std::fs::write(&path, s.log().to_jsonl()) {
            tracing::warn!(path = %path.display(), error = %e, "could not write session log");
        }
    }
}

async fn post_feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<FeedbackRequest>,
) -> Result<Response, ApiError> {
    let handle = state.session(&id).await?;
    let action = req.to_action()?;
    let worker = state.clone();
    let (outcome, body) = blocking(move || {
        let mut s = handle.blocking_write();
        check_slice(&s, action.slice)?;
        let outcome = s.apply(action)?;
        if outcome == ApplyOutcome::Accepted && req.refine {
            s.refine()?;
            persist_log(&worker, &id, &s);
        }
        let body = FeedbackResponse {
            accepted: outcome == ApplyOutcome::Accepted,
            status: outcome,
            mask: Rle::encode(&s.slice_mask(action.slice)?),
            iteration: s.iteration(),
            feedback: FeedbackSummary::from(s.ledger()),
        };
        Ok((outcome, body))
    })
    .await?;
    let status = match outcome {
        ApplyOutcome::Accepted | ApplyOutcome::Ignored => StatusCode::OK,
        ApplyOutcome::Cap | ApplyOutcome::Duplicate => StatusCode::CONFLICT,
    };
    Ok((status, Json(body)).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RefineResponse {
    pub refined_slices: Vec<usize>,
    pub iteration: usize,
}

async fn post_refine(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<RefineResponse>, ApiError> {
    let handle = state.session(&id).await?;
    let worker = state.clone();
    blocking(move || {
        let mut s = handle.blocking_write();
        let refined_slices = s.refine()?;
        persist_log(&worker, &id, &s);
        Ok(Json(RefineResponse {
            refined_slices,
            iteration: s.iteration(),
        }))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    pub feedback: FeedbackSummary,
}

async fn get_metrics(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<MetricsResponse>, ApiError> {
    let handle = state.session(&id).await?;
    blocking(move || {
        let s = handle.blocking_read();
        Ok(Json(MetricsResponse {
            iteration: s.iteration(),
            iou: s.iou(),
            feedback: FeedbackSummary::from(s.ledger()),
        }))
    })
    .await
}

async fn get_log(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = state.session(&id).await?;
    let s = handle.read().await;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], s.log().to_jsonl()).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scans", get(list_scans))
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/slices/:k", get(get_slice))
        .route("/sessions/:id/slices/:k/mask", get(get_mask))
        .route("/sessions/:id/feedback", post(post_feedback))
        .route("/sessions/:id/refine", post(post_refine))
        .route("/sessions/:id/metrics", get(get_metrics))
        .route("/sessions/:id/log", get(get_log))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}
