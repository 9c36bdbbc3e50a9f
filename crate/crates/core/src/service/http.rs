//! JSON API over live triage sessions.
//!
//! Sessions are kept in memory. Each one sits behind its own mutex, so
//! verdicts on a session apply one at a time while other sessions proceed.
//! A verdict may name the rank it answers; a verdict for a rank that is no
//! longer pending is rejected with 409, which makes racing submissions safe.

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

use super::{NextView, RankingView};
use crate::error::Error;
use crate::hostmatch::{self, Nscr, NscrEntry, StateChangeLabel};
use crate::pipelines::{self, PipelineConfig};
use crate::scanmodel::{MacAddr, PortKey};
use crate::triage::{FpCounting, Mode, SessionLog, TriageReport, TriageSession, VerdictOutcome};

pub const PORT_ENV: &str = "PORTDRIFT_PORT";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub error: String,
    pub category: &'static str,
    /// Location of the offending field in a malformed body.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, category: &'static str, error: impl Into<String>) -> Self {
        ApiError {
            status,
            error: error.into(),
            category,
            path: None,
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", format!("no session `{id}`"))
    }

    fn conflict(error: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "session", error)
    }

    fn body(path: String, error: impl Into<String>) -> Self {
        ApiError {
            path: Some(path),
            ..Self::new(StatusCode::BAD_REQUEST, "body", error)
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::SessionClosed => StatusCode::CONFLICT,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.category(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

/// Deserializes `value`, reporting the failing field as `prefix.path`.
fn parse_value<T: DeserializeOwned>(value: Value, prefix: &str) -> std::result::Result<T, ApiError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, _) => inner.clone(),
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        ApiError::body(path, e.into_inner().to_string())
    })
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> std::result::Result<T, ApiError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::body(".".into(), e.to_string()))?;
    parse_value(value, "")
}

struct Session {
    triage: TriageSession,
    nscr: Arc<Nscr>,
    config: PipelineConfig,
}

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
    /// Root for server-side report paths.
    data_dir: PathBuf,
    /// Where session event logs are persisted, if anywhere.
    log_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(data_dir: impl Into<PathBuf>, log_dir: Option<PathBuf>) -> Self {
        AppState {
            data_dir: data_dir.into(),
            log_dir,
            ..Default::default()
        }
    }

    fn session(&self, id: &str) -> std::result::Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn persist(&self, id: &str, s: &Session) {
        let Some(dir) = &self.log_dir else { return };
        let record = SessionRecord {
            session_id: id.to_string(),
            config: s.config,
            log: s.triage.export_log(),
        };
        let path = dir.join(format!("{id}.json"));
        let written = serde_json::to_vec_pretty(&record)
            .map_err(Error::from)
            .and_then(|bytes| std::fs::write(&path, bytes).map_err(Error::from));
        if let Err(e) = written {
            warn!("could not persist session log {}: {e}", path.display());
        }
    }

    /// Report paths are relative to the data directory and may not leave it.
    fn resolve(&self, rel: &str) -> std::result::Result<PathBuf, ApiError> {
        let p = Path::new(rel);
        if p.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
            return Err(ApiError::body(
                "nscr".into(),
                "report path must be relative to the server data directory",
            ));
        }
        Ok(self.data_dir.join(p))
    }
}

/// What the server writes to its log directory per session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub config: PipelineConfig,
    pub log: SessionLog,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    /// Server path, or an object with `path`, `csv`, or `ports` + `rows`.
    nscr: Value,
    #[serde(default)]
    config: Option<Value>,
    #[serde(default)]
    preset: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    counting: Option<FpCounting>,
    /// Verdicts to re-apply, for resuming or reviewing a recorded session.
    #[serde(default)]
    replay: Option<SessionLog>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NscrSpec {
    #[serde(default)]
    path: Option<String>,
    #[serde(default)]
    csv: Option<String>,
    #[serde(default)]
    ports: Option<Vec<PortKey>>,
    #[serde(default)]
    rows: Option<Vec<InlineRow>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineRow {
    #[serde(default)]
    ip_initial: Option<Ipv4Addr>,
    #[serde(default)]
    ip_updated: Option<Ipv4Addr>,
    #[serde(default)]
    mac: Option<MacAddr>,
    labels: Vec<StateChangeLabel>,
    #[serde(default)]
    vulnerable: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub n_hosts: usize,
    pub mode: Mode,
    pub config: PipelineConfig,
    /// Unchanged hosts dropped before ranking.
    pub pruned: usize,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Verdict {
    vulnerable: bool,
    /// Rank the verdict answers; stale ranks are rejected.
    #[serde(default)]
    rank: Option<usize>,
}

fn load_nscr(state: &AppState, value: Value) -> std::result::Result<Nscr, ApiError> {
    let spec = match value {
        Value::String(path) => NscrSpec {
            path: Some(path),
            csv: None,
            ports: None,
            rows: None,
        },
        other => parse_value(other, "nscr")?,
    };
    match spec {
        NscrSpec { path: Some(p), csv: None, ports: None, rows: None } => {
            Ok(hostmatch::read_nscr(state.resolve(&p)?)?)
        }
        NscrSpec { path: None, csv: Some(text), ports: None, rows: None } => {
            Ok(hostmatch::read_nscr_from(text.as_bytes())?)
        }
        NscrSpec { path: None, csv: None, ports: Some(ports), rows: Some(rows) } => {
            let entries = rows
                .into_iter()
                .map(|r| NscrEntry {
                    ip_initial: r.ip_initial,
                    ip_updated: r.ip_updated,
                    mac: r.mac,
                    labels: r.labels,
                    vulnerable: r.vulnerable,
                })
                .collect();
            Ok(Nscr::new(ports, entries)?)
        }
        _ => Err(ApiError::body(
            "nscr".into(),
            "give exactly one of `path`, `csv`, or `ports` with `rows`",
        )),
    }
}

fn build_session(state: &AppState, req: CreateSession) -> std::result::Result<Session, ApiError> {
    let mut config = match (req.config, req.preset) {
        (Some(_), Some(_)) => {
            return Err(ApiError::body("preset".into(), "give either `config` or `preset`, not both"))
        }
        (Some(c), None) => parse_value::<PipelineConfig>(c, "config")?,
        (None, Some(name)) => PipelineConfig::preset(&name, 0)
            .ok_or_else(|| ApiError::body("preset".into(), format!("unknown preset `{name}`")))?,
        (None, None) => PipelineConfig::sknn15_sc20(0),
    };
    if let Some(seed) = req.seed {
        config.seed = seed;
    }
    config.validate()?;
    let nscr = load_nscr(state, req.nscr)?;
    let run = pipelines::run_pipeline(&nscr, &config)?;
    let ranking = run.ranking.hosts;
    let mut triage = match req.replay {
        Some(log) => {
            if log.sc != config.sc {
                return Err(ApiError::body("replay.sc".into(), "log SC differs from the session config"));
            }
            TriageSession::replay(ranking, &log)?
        }
        None => TriageSession::new(ranking, config.sc)?,
    };
    if let Some(c) = req.counting {
        triage = triage.with_counting(c);
    }
    if nscr.has_ground_truth() {
        triage = triage.with_total_vulnerable(nscr.vulnerable_count());
    }
    Ok(Session {
        triage,
        nscr: Arc::new(nscr),
        config,
    })
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Created> {
    let req: CreateSession = parse_body(&body)?;
    let worker = state.clone();
    // ranking can take a while on large reports; keep it off the event loop
    let session = tokio::task::spawn_blocking(move || build_session(&worker, req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let n = state.counter.fetch_add(1, Ordering::Relaxed) + 1;
    let id = format!("s{n}");
    let created = Created {
        session_id: id.clone(),
        n_hosts: session.triage.ranking().len(),
        mode: session.triage.mode(),
        config: session.config,
        pruned: session.nscr.len() - session.triage.ranking().len(),
    };
    state.persist(&id, &session);
    info!("session {id}: {} hosts, {}", created.n_hosts, session.config.name());
    state
        .sessions
        .write()
        .expect("session map poisoned")
        .insert(id, Arc::new(Mutex::new(session)));
    Ok(Json(created))
}

async fn next(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<NextView> {
    let s = state.session(&id)?;
    let s = s.lock().expect("session poisoned");
    NextView::of(&s.triage, &s.nscr)
        .map(Json)
        .ok_or_else(|| ApiError::conflict("session has stopped; see the report"))
}

async fn verdict(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<VerdictOutcome> {
    let v: Verdict = parse_body(&body)?;
    let s = state.session(&id)?;
    let mut s = s.lock().expect("session poisoned");
    if s.triage.stopped() {
        return Err(ApiError::conflict("session has stopped; no further verdicts accepted"));
    }
    let pending = s.triage.inspected() + 1;
    let rank = v.rank.unwrap_or(pending);
    if rank != pending {
        return Err(ApiError::conflict(format!("verdict for rank {rank}, but rank {pending} is pending")));
    }
    let outcome = s.triage.record_verdict(v.vulnerable)?;
    state.persist(&id, &s);
    Ok(Json(outcome))
}

async fn report(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<TriageReport> {
    let s = state.session(&id)?;
    let s = s.lock().expect("session poisoned");
    Ok(Json(s.triage.report()))
}

async fn ranking(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<RankingView> {
    let s = state.session(&id)?;
    let s = s.lock().expect("session poisoned");
    Ok(Json(RankingView::of(s.triage.ranking(), &s.nscr)))
}

async fn event_log(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<SessionLog> {
    let s = state.session(&id)?;
    let s = s.lock().expect("session poisoned");
    Ok(Json(s.triage.export_log()))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    let mut ids: Vec<String> = state.sessions.read().expect("session map poisoned").keys().cloned().collect();
    ids.sort_by_key(|id| id.trim_start_matches('s').parse::<u64>().unwrap_or(u64::MAX));
    Json(ids)
}

/// Report files the setup screen can offer.
async fn datasets(State(state): State<Arc<AppState>>) -> ApiResult<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(&state.data_dir)
        .map_err(Error::from)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    Ok(Json(names))
}

#[derive(Serialize)]
struct Preset {
    id: &'static str,
    label: &'static str,
    config: PipelineConfig,
}

async fn presets() -> Json<Vec<Preset>> {
    Json(vec![
        Preset {
            id: "sknn15-sc20",
            label: "SKNN-15 / SC=20",
            config: PipelineConfig::sknn15_sc20(0),
        },
        Preset {
            id: "sknn20-sc20",
            label: "SKNN-20 / SC=20",
            config: PipelineConfig::sknn20_sc20(0),
        },
    ])
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/verdict", post(verdict))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/ranking", get(ranking))
        .route("/sessions/{id}/log", get(event_log))
        .route("/datasets", get(datasets))
        .route("/presets", get(presets))
        .with_state(state)
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub host: IpAddr,
    pub port: u16,
    pub data_dir: PathBuf,
    pub log_dir: Option<PathBuf>,
    /// Static UI bundle served under `/ui`.
    pub ui_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("."),
            log_dir: None,
            ui_dir: None,
            cors_origin: None,
        }
    }
}

/// Full application: API routes, CORS, and the optional UI bundle.
pub fn app(opts: &ServeOptions) -> crate::Result<Router> {
    if let Some(dir) = &opts.log_dir {
        std::fs::create_dir_all(dir)?;
    }
    let state = Arc::new(AppState::new(&opts.data_dir, opts.log_dir.clone()));
    let cors = match &opts.cors_origin {
        Some(origin) => CorsLayer::new()
            .allow_origin(
                origin
                    .parse::<HeaderValue>()
                    .map_err(|e| Error::param(format!("CORS origin: {e}")))?,
            )
            .allow_methods(Any)
            .allow_headers(Any),
        None => CorsLayer::permissive(),
    };
    let mut app = router(state);
    if let Some(ui) = &opts.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(ui));
    }
    Ok(app.layer(cors))
}

pub async fn serve(opts: ServeOptions) -> crate::Result<()> {
    let app = app(&opts)?;
    let addr = SocketAddr::new(opts.host, opts.port);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
