//! HTTP annotation service.
//!
//! Every session lives in its own directory as an event log (see
//! [`emobias_core::active_loop::SessionStore`]). The service keeps open
//! sessions in memory behind one async mutex each, so requests for different
//! sessions never wait on each other while mutations of one session are
//! serialized. A session not yet in memory, for instance after a restart, is
//! rebuilt by replaying its log.

pub mod api;
pub mod config;

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use emobias_core::active_loop::{LoopConfig, PersistedSession, Session, SessionSources, SessionState, SessionStore};
use emobias_core::analysis::{build_report, render_report, ReportFormat};
use emobias_core::committee::Pretrained;
use emobias_core::{Error, Excerpt, SourceTypeNames};
use serde::Deserialize;
use tokio::sync::Mutex as AsyncMutex;
use tower_http::trace::TraceLayer;

pub use api::{ApiError, ApiSessionView, CreateSession, PendingExcerpt, PoolInfo, Progress, SubmitAnnotations};
pub use config::{ConfigError, ServiceConfig};

type Shared = Arc<AsyncMutex<PersistedSession>>;

pub struct AppState {
    pool_id: String,
    pool_dir: Option<PathBuf>,
    pool: Arc<Vec<Excerpt>>,
    base: Arc<Pretrained>,
    store: SessionStore,
    sources: Option<SessionSources>,
    default_top_k: usize,
    names: SourceTypeNames,
    sessions: Mutex<HashMap<String, Shared>>,
    /// Serializes log replays so two requests never recover one session twice.
    loading: AsyncMutex<()>,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState")
            .field("pool_id", &self.pool_id)
            .field("store", &self.store.root())
            .finish_non_exhaustive()
    }
}

impl AppState {
    /// Loads the pool and the pretrained committee named by `cfg`.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, Error> {
        let pool = emobias_core::io::load_pool_with_cache(&cfg.pool_dir, cfg.feature_cache.as_deref())?;
        let base = Pretrained::load(&cfg.committee_dir)?;
        let mut state = Self::new(
            cfg.pool_id.clone(),
            Arc::new(pool),
            Arc::new(base),
            SessionStore::new(&cfg.data_dir)?,
        );
        state.pool_dir = Some(cfg.pool_dir.clone());
        state.sources = Some(SessionSources {
            pool_dir: Some(absolute(&cfg.pool_dir)),
            committee_dir: Some(absolute(&cfg.committee_dir)),
        });
        state.default_top_k = cfg.default_top_k;
        state.names = cfg.source_names.clone();
        Ok(state)
    }

    pub fn new(pool_id: String, pool: Arc<Vec<Excerpt>>, base: Arc<Pretrained>, store: SessionStore) -> Self {
        Self {
            pool_id,
            pool_dir: None,
            pool,
            base,
            store,
            sources: None,
            default_top_k: emobias_core::analysis::DEFAULT_TOP_K,
            names: SourceTypeNames::default(),
            sessions: Mutex::new(HashMap::new()),
            loading: AsyncMutex::new(()),
        }
    }

    pub fn with_pool_dir(mut self, dir: PathBuf) -> Self {
        self.pool_dir = Some(dir);
        self
    }

    fn cached(&self, id: &str) -> Option<Shared> {
        self.sessions.lock().expect("session map poisoned").get(id).cloned()
    }

    /// Returns the in-memory session, replaying its log if needed.
    async fn session(self: &Arc<Self>, id: &str) -> Result<Shared, ApiError> {
        if let Some(s) = self.cached(id) {
            return Ok(s);
        }
        let _guard = self.loading.lock().await;
        if let Some(s) = self.cached(id) {
            return Ok(s);
        }
        if !valid_session_id(id) {
            return Err(Error::NotFound {
                kind: "session",
                id: id.to_string(),
            }
            .into());
        }
        let state = Arc::clone(self);
        let sid = id.to_string();
        let ps = blocking(move || {
            let mut ps = state
                .store
                .open(&sid, Arc::clone(&state.pool), Arc::clone(&state.base))?;
            if ps.session().pool_id() != state.pool_id {
                return Err(Error::State(format!(
                    "session `{sid}` belongs to pool `{}`, not `{}`",
                    ps.session().pool_id(),
                    state.pool_id
                )));
            }
            recover(&mut ps)?;
            Ok(ps)
        })
        .await?;
        let shared = Arc::new(AsyncMutex::new(ps));
        self.sessions
            .lock()
            .expect("session map poisoned")
            .insert(id.to_string(), Arc::clone(&shared));
        Ok(shared)
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Session ids are generated by the service; anything else cannot name a
/// session directory.
fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Brings a replayed session to where a live one would be: the next batch
/// issued if one is due, and the finalization logged once complete.
fn recover(ps: &mut PersistedSession) -> Result<(), Error> {
    match ps.session().state() {
        SessionState::AwaitingBatch => {
            ps.issue_batch()?;
        }
        SessionState::Finalized => {
            ps.finalize(Utc::now())?;
        }
        SessionState::AwaitingAnnotations => {}
    }
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker task failed: {e}")))?
        .map_err(ApiError::from)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(|| async { "ok" }))
        .route("/api/pools", get(list_pools))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/annotations", post(submit_annotations))
        .route("/api/sessions/{id}/report", get(get_report))
        .route("/api/excerpts/{id}/audio", get(get_audio))
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

async fn list_pools(State(state): State<Arc<AppState>>) -> Json<Vec<PoolInfo>> {
    Json(vec![PoolInfo {
        pool_id: state.pool_id.clone(),
        n_excerpts: state.pool.len(),
    }])
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    api::Body(req): api::Body<CreateSession>,
) -> Result<(StatusCode, Json<ApiSessionView>), ApiError> {
    if req.pool_id != state.pool_id {
        return Err(Error::NotFound {
            kind: "pool",
            id: req.pool_id,
        }
        .into());
    }
    let id = uuid::Uuid::new_v4();
    let config = req.config.unwrap_or(LoopConfig {
        // A fresh initial draw per session, recorded in the log.
        seed: u64::from_le_bytes(id.as_bytes()[..8].try_into().expect("8 bytes")),
        ..LoopConfig::default()
    });
    let session_id = id.simple().to_string();
    let st = Arc::clone(&state);
    let sid = session_id.clone();
    let ps = blocking(move || {
        let session = Session::new(
            sid,
            req.user_profile,
            st.pool_id.clone(),
            Arc::clone(&st.pool),
            Arc::clone(&st.base),
            config,
        )?;
        let mut ps = st.store.create(session, st.sources.clone(), Utc::now())?;
        ps.issue_batch()?;
        Ok(ps)
    })
    .await?;
    let view = ApiSessionView::of(ps.session());
    tracing::info!(session = %session_id, seed = config.seed, "session created");
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .insert(session_id, Arc::new(AsyncMutex::new(ps)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ApiSessionView>, ApiError> {
    let shared = state.session(&id).await?;
    let ps = shared.lock().await;
    Ok(Json(ApiSessionView::of(ps.session())))
}

async fn submit_annotations(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    api::Body(req): api::Body<SubmitAnnotations>,
) -> Result<Json<ApiSessionView>, ApiError> {
    let shared = state.session(&id).await?;
    let mut guard = shared.lock_owned().await;
    // Retraining is CPU-bound; keep it off the async workers while still
    // holding this session's lock.
    let view = tokio::task::spawn_blocking(move || -> Result<ApiSessionView, Error> {
        let ps = &mut *guard;
        ps.submit(&req.labels, Utc::now())?;
        match ps.session().state() {
            SessionState::AwaitingBatch => {
                ps.issue_batch()?;
            }
            SessionState::Finalized => {
                ps.finalize(Utc::now())?;
            }
            SessionState::AwaitingAnnotations => {}
        }
        Ok(ApiSessionView::of(ps.session()))
    })
    .await
    .map_err(|e| ApiError::Internal(format!("worker task failed: {e}")))??;
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    top_k: Option<usize>,
    format: Option<String>,
}

async fn get_report(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ReportQuery>,
) -> Result<Response, ApiError> {
    let format: ReportFormat = q.format.as_deref().unwrap_or("json").parse()?;
    let top_k = q.top_k.unwrap_or(state.default_top_k);
    let shared = state.session(&id).await?;
    let ps = shared.lock().await;
    if ps.session().state() != SessionState::Finalized {
        return Err(ApiError::NotFinalized);
    }
    let model = ps.session().finalize()?;
    let report = build_report(&model, top_k)?;
    let body = render_report(&report, format, &state.names)?;
    let content_type = match format {
        ReportFormat::Json => "application/json",
        ReportFormat::Csv => "text/csv; charset=utf-8",
        ReportFormat::Table => "text/plain; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

fn audio_content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("wav") => "audio/wav",
        Some("mp3") => "audio/mpeg",
        Some("ogg") => "audio/ogg",
        Some("flac") => "audio/flac",
        _ => "application/octet-stream",
    }
}

async fn get_audio(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let not_found = || {
        ApiError::from(Error::NotFound {
            kind: "audio for excerpt",
            id: id.clone(),
        })
    };
    let excerpt = state.pool.iter().find(|e| e.id == id).ok_or_else(|| {
        ApiError::from(Error::NotFound {
            kind: "excerpt",
            id: id.clone(),
        })
    })?;
    let uri = excerpt.metadata.audio_uri.as_deref().ok_or_else(not_found)?;
    if uri.starts_with("http://") || uri.starts_with("https://") {
        return Ok(Redirect::temporary(uri).into_response());
    }
    let rel = Path::new(uri);
    let safe = rel
        .components()
        .all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    let Some(root) = state.pool_dir.as_ref().filter(|_| safe) else {
        return Err(not_found());
    };
    let path = root.join(rel);
    let bytes = tokio::fs::read(&path).await.map_err(|_| not_found())?;
    Ok(([(header::CONTENT_TYPE, audio_content_type(&path))], bytes).into_response())
}

/// Binds `cfg.addr()` and serves until interrupted.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServeError> {
    let state = Arc::new(AppState::from_config(&cfg)?);
    let listener = tokio::net::TcpListener::bind(cfg.addr()).await?;
    tracing::info!(addr = %cfg.addr(), pool = %cfg.pool_id, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Core(#[from] emobias_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
