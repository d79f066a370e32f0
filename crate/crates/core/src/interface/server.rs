//! JSON-over-HTTP access to interactive sessions.
//!
//! Reads are served from a per-session snapshot that is swapped after every
//! mutation, so they never wait for retraining. Mutations of one session are
//! serialized by its mutex and run on blocking threads.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::al::{
    AlConfig, AnnotationMode, CostLedger, CurvePoint, Dataset, PositiveSnapshot, Session, SessionStatus, StopReason,
    SubmitOutcome,
};
use crate::corpus::SentenceId;
use crate::crf::TrainReport;
use crate::error::Error;
use crate::positive::PositiveSetMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSentence {
    pub id: SentenceId,
    pub tokens: Vec<String>,
    /// Current model's Viterbi tags; empty when pre-fill is off.
    pub suggested: Vec<String>,
    pub labeled: bool,
}

/// What the annotator sees of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub dataset: String,
    pub strategy: String,
    pub seed: u64,
    /// `awaiting_annotation`, `training`, `ready` or `completed`.
    pub status: String,
    pub stop_reason: Option<StopReason>,
    pub iteration: Option<usize>,
    /// Empty while training or once completed.
    pub batch: Vec<BatchSentence>,
    pub batch_iteration: Option<usize>,
    pub ledger: CostLedger,
    pub latest: Option<CurvePoint>,
    pub curve: Vec<CurvePoint>,
    pub tags: Vec<String>,
    pub last_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveStats {
    pub iteration: usize,
    pub size: usize,
    pub n_p: usize,
    pub n_t: usize,
    pub n_labeled_tokens: usize,
    pub cluster_sizes: Vec<usize>,
    pub n_noise: usize,
    pub largest_cluster: Option<usize>,
    pub no_clusters: bool,
    pub largest_tied: bool,
    pub metrics: PositiveSetMetrics,
}

impl From<&PositiveSnapshot> for PositiveStats {
    fn from(p: &PositiveSnapshot) -> Self {
        Self {
            iteration: p.iteration,
            size: p.p_prime.len(),
            n_p: p.n_p,
            n_t: p.n_t,
            n_labeled_tokens: p.n_labeled_tokens,
            cluster_sizes: p.cluster_sizes.clone(),
            n_noise: p.n_noise,
            largest_cluster: p.largest_cluster,
            no_clusters: p.no_clusters,
            largest_tied: p.largest_tied,
            metrics: p.metrics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub positive: Option<PositiveStats>,
    pub last_train: Option<TrainReport>,
    pub density_bandwidth: f64,
    pub pool_size: usize,
    pub labeled: usize,
}

struct Handle {
    dataset: String,
    suggest: bool,
    session: Mutex<Session>,
    view: RwLock<Arc<(SessionView, Diagnostics)>>,
    busy: AtomicBool,
}

impl Handle {
    fn snapshot(&self) -> Arc<(SessionView, Diagnostics)> {
        Arc::clone(&self.view.read().expect("view lock"))
    }

    /// Rebuilds the snapshot from the session. `training` hides the batch.
    fn refresh(&self, s: &Session, training: bool) {
        let st = s.state();
        let corpus = s.dataset().corpus();
        let scheme = corpus.label_scheme();
        let status = if training { SessionStatus::Training } else { st.status() };
        let (status, stop_reason) = match status {
            SessionStatus::AwaitingAnnotation => ("awaiting_annotation", None),
            SessionStatus::Training => ("training", None),
            SessionStatus::Ready => ("ready", None),
            SessionStatus::Completed { reason } => ("completed", Some(reason)),
        };
        let batch = match (&st.pending, status) {
            (Some(p), "awaiting_annotation") => {
                let suggested = if self.suggest {
                    s.suggestions(&p.ids).unwrap_or_else(|_| vec![Vec::new(); p.ids.len()])
                } else {
                    vec![Vec::new(); p.ids.len()]
                };
                p.ids
                    .iter()
                    .zip(&p.received)
                    .zip(suggested)
                    .map(|((&id, r), sug)| BatchSentence {
                        id,
                        tokens: corpus.sentence(id).tokens.iter().map(|t| t.surface.clone()).collect(),
                        suggested: sug.iter().map(|&t| scheme.tag_name(t).to_string()).collect(),
                        labeled: r.is_some(),
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        let view = SessionView {
            session_id: st.session_id.clone(),
            dataset: self.dataset.clone(),
            strategy: s.config().strategy.to_string(),
            seed: st.seed,
            status: status.to_string(),
            stop_reason,
            iteration: st.iteration,
            batch_iteration: st.pending.as_ref().filter(|_| status == "awaiting_annotation").map(|p| p.iteration),
            batch,
            ledger: st.ledger.clone(),
            latest: st.curve.last().copied(),
            curve: st.curve.points.clone(),
            tags: scheme.tags().to_vec(),
            last_failure: st.last_failure.clone(),
        };
        let diag = Diagnostics {
            positive: st.positive.as_ref().map(PositiveStats::from),
            last_train: st.last_train.clone(),
            density_bandwidth: s.dataset().density().bandwidth(),
            pool_size: st.pool.len(),
            labeled: st.labeled.len(),
        };
        *self.view.write().expect("view lock") = Arc::new((view, diag));
    }
}

/// Registered datasets and live sessions.
pub struct AppState {
    datasets: BTreeMap<String, Arc<Dataset>>,
    sessions: RwLock<HashMap<String, Arc<Handle>>>,
    dir: Option<PathBuf>,
    counter: AtomicU64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ServiceMeta {
    dataset: String,
    suggest_tags: bool,
}

impl AppState {
    /// `dir`, when given, holds one subdirectory per session; existing
    /// sessions there are reopened.
    pub fn new(datasets: BTreeMap<String, Arc<Dataset>>, dir: Option<PathBuf>) -> crate::Result<Arc<Self>> {
        let state = Arc::new(Self {
            datasets,
            sessions: RwLock::new(HashMap::new()),
            dir,
            counter: AtomicU64::new(1),
        });
        if let Some(d) = &state.dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            state.restore(d)?;
        }
        Ok(state)
    }

    fn restore(self: &Arc<Self>, dir: &Path) -> crate::Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("service.json").is_file())
            .collect();
        entries.sort();
        for p in entries {
            let meta_path = p.join("service.json");
            let bytes = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            let meta: ServiceMeta = serde_json::from_slice(&bytes)?;
            let Some(ds) = self.datasets.get(&meta.dataset) else {
                tracing::warn!(session = %p.display(), dataset = %meta.dataset, "dataset not registered; skipped");
                continue;
            };
            let mut session = Session::open(Arc::clone(ds), &p)?;
            if session.state().pending.is_none() && !session.is_finished() {
                session.query()?;
            }
            let id = session.state().session_id.clone();
            if let Some(n) = id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                self.counter.fetch_max(n + 1, Ordering::SeqCst);
            }
            self.insert(id, meta.dataset, meta.suggest_tags, session);
        }
        Ok(())
    }

    fn insert(&self, id: String, dataset: String, suggest: bool, session: Session) -> Arc<Handle> {
        let placeholder = Arc::new((
            SessionView {
                session_id: id.clone(),
                dataset: dataset.clone(),
                strategy: String::new(),
                seed: 0,
                status: String::new(),
                stop_reason: None,
                iteration: None,
                batch: Vec::new(),
                batch_iteration: None,
                ledger: CostLedger::default(),
                latest: None,
                curve: Vec::new(),
                tags: Vec::new(),
                last_failure: None,
            },
            Diagnostics {
                positive: None,
                last_train: None,
                density_bandwidth: 0.0,
                pool_size: 0,
                labeled: 0,
            },
        ));
        let handle = Arc::new(Handle {
            dataset,
            suggest,
            view: RwLock::new(placeholder),
            busy: AtomicBool::new(false),
            session: Mutex::new(session),
        });
        {
            let s = handle.session.lock().expect("session lock");
            handle.refresh(&s, false);
        }
        self.sessions.write().expect("sessions lock").insert(id, Arc::clone(&handle));
        handle
    }

    fn get(&self, id: &str) -> Result<Arc<Handle>, ApiError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config { .. } | Error::UnknownTag(_) | Error::DimensionMismatch { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::Session(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": e.to_string() });
        if let Error::Config { key, .. } = &e {
            body["key"] = json!(key);
        }
        Self { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    dataset: Option<String>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    config: Option<AlConfig>,
    #[serde(default = "yes")]
    suggest_tags: bool,
}

fn yes() -> bool {
    true
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let name = match req.dataset {
        Some(n) => n,
        None if app.datasets.len() == 1 => app.datasets.keys().next().expect("one").clone(),
        None => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "`dataset` is required")),
    };
    let ds = app
        .datasets
        .get(&name)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown dataset `{name}`")))?;
    let config = req.config.unwrap_or_default();
    let id = format!("s{:06}", app.counter.fetch_add(1, Ordering::SeqCst));
    let app2 = Arc::clone(&app);
    let handle = blocking(move || {
        let dir = app2.dir.as_ref().map(|d| d.join(&id));
        let session = Session::create(ds, config, req.seed, AnnotationMode::Interactive, id.clone(), dir.as_deref())?;
        if let Some(d) = &dir {
            let meta = ServiceMeta {
                dataset: name.clone(),
                suggest_tags: req.suggest_tags,
            };
            std::fs::write(d.join("service.json"), serde_json::to_vec(&meta).map_err(Error::from)?)
                .map_err(|e| Error::io(d, e))?;
        }
        Ok(app2.insert(id, name, req.suggest_tags, session))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(handle.snapshot().0.clone())))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(app.get(&id)?.snapshot().0.clone()))
}

async fn get_query(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let snap = app.get(&id)?.snapshot();
    let v = &snap.0;
    Ok(Json(json!({
        "session_id": v.session_id,
        "status": v.status,
        "iteration": v.batch_iteration,
        "batch": v.batch,
        "tags": v.tags,
    })))
}

async fn get_metrics(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let snap = app.get(&id)?.snapshot();
    let v = &snap.0;
    Ok(Json(json!({
        "session_id": v.session_id,
        "status": v.status,
        "ledger": v.ledger,
        "latest": v.latest,
        "curve": v.curve,
    })))
}

async fn get_diagnostics(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let snap = app.get(&id)?.snapshot();
    let mut body = serde_json::to_value(&snap.1).map_err(|e| ApiError::from(Error::from(e)))?;
    body["last_failure"] = json!(snap.0.last_failure);
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Annotation {
    sentence: u32,
    tags: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRequest {
    annotations: Vec<Annotation>,
    #[serde(default)]
    idempotency_key: Option<String>,
}

/// Records labels. When the batch becomes complete, retraining and the next
/// query run in the background while the session reports `training`.
async fn post_annotations(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    Json(req): Json<AnnotationRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let handle = app.get(&id)?;
    let key = headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or(req.idempotency_key);
    let scheme_tags = handle.snapshot().0.tags.clone();
    let mut parsed = Vec::with_capacity(req.annotations.len());
    for a in &req.annotations {
        let tags = a
            .tags
            .iter()
            .map(|t| {
                scheme_tags.iter().position(|s| s == t).ok_or_else(|| ApiError {
                    status: StatusCode::UNPROCESSABLE_ENTITY,
                    body: json!({ "error": format!("unknown tag `{t}`"), "tag": t }),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        parsed.push((SentenceId(a.sentence), tags));
    }

    let h = Arc::clone(&handle);
    let (outcomes, complete) = blocking(move || {
        let mut s = h.session.lock().expect("session lock");
        let mut outcomes: Vec<SubmitOutcome> = Vec::new();
        for (sid, tags) in parsed {
            let k = key.as_ref().map(|k| format!("{k}/{sid}"));
            if k.is_none() && h.busy.load(Ordering::SeqCst) {
                return Err(ApiError::new(StatusCode::CONFLICT, "retraining in progress"));
            }
            outcomes.push(s.submit(sid, tags, k.as_deref())?);
        }
        let complete = s.state().pending.as_ref().is_some_and(|p| p.is_complete()) && !h.busy.load(Ordering::SeqCst);
        if complete {
            h.busy.store(true, Ordering::SeqCst);
        }
        h.refresh(&s, complete);
        Ok((outcomes, complete))
    })
    .await?;

    if complete {
        let h = Arc::clone(&handle);
        tokio::task::spawn_blocking(move || {
            let mut s = h.session.lock().expect("session lock");
            let result = s.finish_batch().and_then(|_| s.query().map(|_| ()));
            if let Err(e) = result {
                tracing::error!(session = %s.state().session_id, error = %e, "retraining failed");
            }
            h.busy.store(false, Ordering::SeqCst);
            h.refresh(&s, false);
        });
    }
    let snap = handle.snapshot();
    Ok(Json(json!({
        "outcomes": outcomes,
        "status": snap.0.status,
        "ledger": snap.0.ledger,
    })))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/annotations", post(post_annotations))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/diagnostics", get(get_diagnostics))
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(addr: &str, state: Arc<AppState>) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr, e))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await.map_err(|e| Error::io(addr, e))
}
