//! HTTP JSON service over a prepared vulnembed store.
//!
//! Endpoints live under `/v1`: `predict`, `feedback`, `functions/{id}`,
//! `scan` and `scan/{id}`, plus `health` and `reload`.

mod config;
mod error;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};
use vulnembed::feedback::Polarity;
use vulnembed::pipeline::{
    Engine, FeedbackOutcome, FunctionView, PipelineError, PredictRequest, PredictResponse, ScanReport, ScanRow,
    ScanStatus,
};
use vulnembed::store::{self, Store};

pub use config::{ConfigError, ServerConfig};
pub use error::ApiError;

/// Name of the only corpus a scan can reference: the store's extracted corpus.
pub const DEFAULT_CORPUS: &str = "default";

pub struct AppState {
    config: ServerConfig,
    engine: RwLock<Option<Engine>>,
    scans: Mutex<BTreeMap<String, ScanReport>>,
    workers: Arc<Semaphore>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl AppState {
    /// Creates the state and tries to load the engine; a store that is not
    /// ready yet is retried on each request.
    pub fn new(config: ServerConfig) -> Arc<Self> {
        let workers = Arc::new(Semaphore::new(config.scan_workers.max(1)));
        let state = Arc::new(Self { config, engine: RwLock::new(None), scans: Mutex::new(BTreeMap::new()), workers });
        let _ = state.reload();
        state
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    fn store_root(&self) -> &PathBuf {
        &self.config.store
    }

    fn store(&self) -> Result<Store, ApiError> {
        if !self.store_root().join(store::MANIFEST).is_file() {
            return Err(ApiError::unavailable("store_unavailable", format!("no store at {}", self.store_root().display())));
        }
        Store::open(self.store_root()).map_err(|e| ApiError::from(PipelineError::from(e)))
    }

    /// Reloads models, index and feedback state from the store.
    pub fn reload(&self) -> Result<String, ApiError> {
        let store = self.store()?;
        let engine = Engine::load(&store, self.config.engine_options()).map_err(ApiError::not_loaded)?;
        let version = engine.model_version().to_string();
        *self.engine.write().expect("engine lock") = Some(engine);
        Ok(version)
    }

    fn ensure_loaded(&self) -> Result<(), ApiError> {
        self.store()?;
        if self.engine.read().expect("engine lock").is_none() {
            self.reload()?;
        }
        Ok(())
    }

    fn read<R>(&self, f: impl FnOnce(&Engine) -> Result<R, ApiError>) -> Result<R, ApiError> {
        self.ensure_loaded()?;
        let guard = self.engine.read().expect("engine lock");
        f(guard.as_ref().ok_or_else(|| ApiError::not_loaded(PipelineError::MissingPrerequisite("models".into())))?)
    }

    fn write<R>(&self, f: impl FnOnce(&mut Engine, &Store) -> Result<R, ApiError>) -> Result<R, ApiError> {
        self.ensure_loaded()?;
        let store = self.store()?;
        let mut guard = self.engine.write().expect("engine lock");
        let engine =
            guard.as_mut().ok_or_else(|| ApiError::not_loaded(PipelineError::MissingPrerequisite("models".into())))?;
        f(engine, &store)
    }

    fn next_scan_id(&self, store: &Store) -> String {
        let scans = self.scans.lock().expect("scan lock");
        let mut n = scans.len() + 1;
        loop {
            let id = format!("scan-{n:06}");
            let persisted = store.contains(&store::report_name(&id)).unwrap_or(false);
            if !scans.contains_key(&id) && !persisted {
                return id;
            }
            n += 1;
        }
    }

    fn set_report(&self, report: ScanReport) {
        self.scans.lock().expect("scan lock").insert(report.id.clone(), report);
    }

    fn report(&self, id: &str) -> Option<ScanReport> {
        self.scans.lock().expect("scan lock").get(id).cloned()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub source_fn: String,
    pub target_fn: String,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScanRequest {
    #[serde(default)]
    pub corpus: Option<String>,
    #[serde(default)]
    pub component: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanAccepted {
    pub id: String,
    pub status: ScanStatus,
    pub total: usize,
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let version = state.read(|e| Ok(e.model_version().to_string())).ok();
    Json(serde_json::json!({ "status": if version.is_some() { "ready" } else { "not_loaded" }, "model_version": version }))
}

async fn reload(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let version = state.reload()?;
    Ok(Json(serde_json::json!({ "model_version": version })))
}

async fn predict(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<PredictRequest>, JsonRejection>,
) -> Result<Json<PredictResponse>, ApiError> {
    let req = body(payload)?;
    let response = state.write(|engine, store| {
        let (response, submission) = engine.predict(&req, now())?;
        Engine::persist_submission(store, &submission)?;
        engine.add_submission(submission);
        Ok(response)
    })?;
    Ok(Json(response))
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Json<FeedbackOutcome>, ApiError> {
    let req = body(payload)?;
    let outcome = state.write(|engine, store| {
        let outcome = engine.feedback(&req.source_fn, &req.target_fn, req.polarity, now())?;
        engine.persist_feedback(store, &outcome)?;
        Ok(outcome)
    })?;
    Ok(Json(outcome))
}

async fn function(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<FunctionView>, ApiError> {
    Ok(Json(state.read(|engine| Ok(engine.function(&id)?))?))
}

async fn start_scan(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<ScanRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<ScanAccepted>), ApiError> {
    let req = body(payload)?;
    if let Some(corpus) = req.corpus.as_deref().filter(|c| *c != DEFAULT_CORPUS) {
        return Err(ApiError::not_found("unknown_corpus", format!("no corpus named {corpus}")));
    }
    let targets = state.read(|engine| Ok(engine.scan_targets(req.component.as_deref())))?;
    let store = state.store()?;
    let id = state.next_scan_id(&store);
    let component = req.component.clone();
    if targets.is_empty() {
        let report = ScanReport::finished(&id, component, Vec::new());
        persist_report(&state, &report)?;
        state.set_report(report);
        return Ok((StatusCode::OK, Json(ScanAccepted { id, status: ScanStatus::Complete, total: 0 })));
    }
    let total = targets.len();
    state.set_report(ScanReport {
        id: id.clone(),
        status: ScanStatus::Running,
        progress: 0.0,
        component: component.clone(),
        total,
        rows: Vec::new(),
        error: None,
    });
    let job_state = Arc::clone(&state);
    let job_id = id.clone();
    let workers = Arc::clone(&state.workers);
    tokio::spawn(async move {
        let Ok(_permit) = workers.acquire_owned().await else { return };
        let _ = tokio::task::spawn_blocking(move || run_scan(&job_state, &job_id, component, &targets)).await;
    });
    Ok((StatusCode::ACCEPTED, Json(ScanAccepted { id, status: ScanStatus::Running, total })))
}

fn persist_report(state: &AppState, report: &ScanReport) -> Result<(), ApiError> {
    let store = state.store()?;
    // one writer at a time through the engine lock
    let _guard = state.engine.write().expect("engine lock");
    Engine::persist_report(&store, report)?;
    Ok(())
}

fn run_scan(state: &AppState, id: &str, component: Option<String>, targets: &[String]) {
    let mut rows: Vec<ScanRow> = Vec::with_capacity(targets.len());
    for (i, fid) in targets.iter().enumerate() {
        match state.read(|engine| Ok(engine.scan_one(fid)?)) {
            Ok(row) => rows.push(row),
            Err(e) => {
                state.set_report(ScanReport {
                    id: id.to_string(),
                    status: ScanStatus::Failed,
                    progress: i as f64 / targets.len() as f64,
                    component,
                    total: targets.len(),
                    rows: Vec::new(),
                    error: Some(e.detail),
                });
                return;
            }
        }
        if let Some(mut report) = state.report(id) {
            report.progress = (i + 1) as f64 / targets.len() as f64;
            state.set_report(report);
        }
    }
    let report = ScanReport::finished(id, component, rows);
    let final_report = match persist_report(state, &report) {
        Ok(()) => report,
        Err(e) => ScanReport { status: ScanStatus::Failed, error: Some(e.detail), ..report },
    };
    state.set_report(final_report);
}

async fn get_scan(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<ScanReport>, ApiError> {
    if let Some(report) = state.report(&id) {
        return Ok(Json(report));
    }
    let store = state.store()?;
    Ok(Json(Engine::load_report(&store, &id)?))
}

fn cors(config: &ServerConfig) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE]);
    match HeaderValue::from_str(&config.cors_origin) {
        Ok(origin) if config.cors_origin != "*" => layer.allow_origin(AllowOrigin::exact(origin)),
        _ => layer.allow_origin(AllowOrigin::any()),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = cors(state.config());
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/reload", post(reload))
        .route("/v1/predict", post(predict))
        .route("/v1/feedback", post(feedback))
        .route("/v1/functions/{*id}", get(function))
        .route("/v1/scan", post(start_scan))
        .route("/v1/scan/{id}", get(get_scan))
        .layer(cors)
        .with_state(state)
}

/// Binds the configured address and serves until the process ends.
pub async fn serve(config: ServerConfig) -> std::io::Result<()> {
    let addr = format!("{}:{}", config.host, config.port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config))).await
}
