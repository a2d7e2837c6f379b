//! HTTP API over persisted review sessions.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::cors::{Any, CorsLayer};

use super::{Assessor, ReviewError, Session};
use crate::analytics::AnnotationItem;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no session {0}")]
    UnknownSession(String),
    #[error("session {0} already exists")]
    SessionExists(String),
    #[error("invalid session id {0:?}")]
    InvalidId(String),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error("session file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl StoreError {
    fn status(&self) -> StatusCode {
        match self {
            Self::UnknownSession(_) | Self::Review(ReviewError::UnknownItem(_)) => StatusCode::NOT_FOUND,
            Self::InvalidId(_)
            | Self::Review(ReviewError::UnknownAssessor(_))
            | Self::Review(ReviewError::DuplicateItem(_)) => StatusCode::BAD_REQUEST,
            Self::SessionExists(_) | Self::Review(_) => StatusCode::CONFLICT,
            Self::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for StoreError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

/// Sessions kept in memory and written to `<dir>/<id>.session.json` after
/// every mutation. All mutations run under one lock, so writes never
/// interleave.
pub struct SessionStore {
    dir: PathBuf,
    sessions: Mutex<BTreeMap<String, Session>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !id.starts_with('.')
}

impl SessionStore {
    /// Opens `dir`, loading every session file found there.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut sessions = BTreeMap::new();
        for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if !path.to_string_lossy().ends_with(".session.json") {
                continue;
            }
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            let session: Session = serde_json::from_slice(&bytes)
                .map_err(|e| io_err(&path)(io::Error::new(io::ErrorKind::InvalidData, e)))?;
            sessions.insert(session.session_id.clone(), session);
        }
        Ok(Self {
            dir,
            sessions: Mutex::new(sessions),
        })
    }

    pub fn session_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.session.json"))
    }

    fn persist(&self, session: &Session) -> Result<(), StoreError> {
        let path = self.session_path(&session.session_id);
        let io_err = |source| StoreError::Io { path: path.clone(), source };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io_err)?;
        serde_json::to_writer_pretty(&mut tmp, session).map_err(|e| io_err(e.into()))?;
        tmp.write_all(b"\n").map_err(io_err)?;
        tmp.as_file().sync_all().map_err(io_err)?;
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        Ok(())
    }

    pub async fn create(&self, session: Session) -> Result<(), StoreError> {
        if !valid_id(&session.session_id) {
            return Err(StoreError::InvalidId(session.session_id));
        }
        let mut sessions = self.sessions.lock().await;
        if sessions.contains_key(&session.session_id) {
            return Err(StoreError::SessionExists(session.session_id));
        }
        self.persist(&session)?;
        sessions.insert(session.session_id.clone(), session);
        Ok(())
    }

    pub async fn ids(&self) -> Vec<String> {
        self.sessions.lock().await.keys().cloned().collect()
    }

    pub async fn read<T>(&self, id: &str, f: impl FnOnce(&Session) -> T) -> Result<T, StoreError> {
        let sessions = self.sessions.lock().await;
        let s = sessions.get(id).ok_or_else(|| StoreError::UnknownSession(id.to_string()))?;
        Ok(f(s))
    }

    /// Applies `f` to a copy of the session and keeps the result only if it
    /// succeeds and was persisted.
    pub async fn update<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, ReviewError>,
    ) -> Result<T, StoreError> {
        let mut sessions = self.sessions.lock().await;
        let current = sessions.get(id).ok_or_else(|| StoreError::UnknownSession(id.to_string()))?;
        let mut next = current.clone();
        let out = f(&mut next)?;
        self.persist(&next)?;
        sessions.insert(id.to_string(), next);
        Ok(out)
    }
}

type AppState = Arc<SessionStore>;

#[derive(Deserialize)]
struct CreateBody {
    session_id: String,
    #[serde(default)]
    judge: String,
    items: Vec<AnnotationItem>,
}

#[derive(Deserialize)]
struct NextQuery {
    assessor: String,
    after: Option<String>,
}

#[derive(Deserialize)]
struct JudgmentBody {
    pair_id: String,
    assessor: String,
    label: bool,
}

#[derive(Deserialize)]
struct AdjudicationBody {
    pair_id: String,
    label: bool,
}

async fn create_session(State(store): State<AppState>, Json(body): Json<CreateBody>) -> Result<Response, StoreError> {
    let session = Session::new(body.session_id, body.judge, body.items)?;
    let summary = summary(&session);
    store.create(session).await?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

fn summary(s: &Session) -> serde_json::Value {
    json!({ "session_id": s.session_id, "judge": s.judge, "progress": s.progress() })
}

async fn list_sessions(State(store): State<AppState>) -> Json<Vec<String>> {
    Json(store.ids().await)
}

async fn get_session(State(store): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, StoreError> {
    Ok(Json(store.read(&id, summary).await?).into_response())
}

async fn next_item(
    State(store): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<NextQuery>,
) -> Result<Response, StoreError> {
    let who: Assessor = q.assessor.parse()?;
    let item = store.read(&id, |s| s.next_for(who, q.after.as_deref())).await?;
    Ok(match item {
        Some(item) => Json(item).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn post_judgment(
    State(store): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<JudgmentBody>,
) -> Result<Response, StoreError> {
    let who: Assessor = body.assessor.parse()?;
    let status = store.update(&id, |s| s.judge(&body.pair_id, who, body.label)).await?;
    Ok(Json(json!({ "pair_id": body.pair_id, "status": status })).into_response())
}

async fn disagreements(State(store): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, StoreError> {
    Ok(Json(store.read(&id, Session::disagreements).await?).into_response())
}

async fn post_adjudication(
    State(store): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<AdjudicationBody>,
) -> Result<Response, StoreError> {
    let status = store.update(&id, |s| s.adjudicate(&body.pair_id, body.label)).await?;
    Ok(Json(json!({ "pair_id": body.pair_id, "status": status })).into_response())
}

async fn progress(State(store): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, StoreError> {
    Ok(Json(store.read(&id, Session::progress).await?).into_response())
}

async fn export(State(store): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, StoreError> {
    Ok(Json(store.read(&id, Session::export).await??).into_response())
}

async fn kappa(State(store): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, StoreError> {
    Ok(Json(store.read(&id, Session::kappa).await??).into_response())
}

/// Routes, all under `/api`. `cors_origin` of `None` or `"*"` allows any
/// origin.
pub fn router(store: Arc<SessionStore>, cors_origin: Option<&str>) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match cors_origin.filter(|o| *o != "*").and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => cors.allow_origin(origin),
        None => cors.allow_origin(Any),
    };
    Router::new()
        .route("/api/sessions", post(create_session).get(list_sessions))
        .route("/api/sessions/:id", get(get_session))
        .route("/api/sessions/:id/next", get(next_item))
        .route("/api/sessions/:id/judgments", post(post_judgment))
        .route("/api/sessions/:id/disagreements", get(disagreements))
        .route("/api/sessions/:id/adjudications", post(post_adjudication))
        .route("/api/sessions/:id/progress", get(progress))
        .route("/api/sessions/:id/export", get(export))
        .route("/api/sessions/:id/kappa", get(kappa))
        .layer(cors)
        .with_state(store)
}

/// Serves until `shutdown` resolves. Returns the bound address through
/// `on_bound` so callers can bind port 0.
pub async fn serve(
    store: Arc<SessionStore>,
    addr: SocketAddr,
    cors_origin: Option<&str>,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(store, cors_origin))
        .with_graceful_shutdown(shutdown)
        .await
}
