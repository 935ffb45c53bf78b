//! HTTP API over the experiment runner, plus static hosting for the web UI.
//!
//! Runs are admitted by content-addressed id, so posting the same config twice
//! attaches to the first submission instead of scoring again.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::experiment::{
    list_runs, load_run, render_plot, ExperimentConfig, ExperimentError, RunState, Runner,
    CACHE_DIR_ENV, SERIES_FILE,
};
use crate::stats::fit;
use crate::templates::{builtin_axis, builtin_lexicon, AxisCategory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub state: RunState,
    pub probes_done: usize,
    pub probes_total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Set on failed runs whose cause was transient (timeouts, 5xx, 429).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retriable: Option<bool>,
}

fn rank(s: RunState) -> u8 {
    match s {
        RunState::Queued => 0,
        RunState::Scoring => 1,
        RunState::Fitting => 2,
        RunState::Done | RunState::Failed => 3,
    }
}

impl RunStatus {
    fn queued(run_id: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            state: RunState::Queued,
            probes_done: 0,
            probes_total: 0,
            error: None,
            retriable: None,
        }
    }

    // Never moves backwards; late progress callbacks are dropped.
    fn advance(&mut self, state: RunState, done: usize, total: usize) {
        if self.state.is_terminal() || rank(state) < rank(self.state) {
            return;
        }
        self.state = state;
        self.probes_done = self.probes_done.max(done);
        self.probes_total = self.probes_total.max(total);
    }
}

pub struct AppState {
    root: PathBuf,
    registry: Mutex<HashMap<String, RunStatus>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(Self { root: root.into(), registry: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut RunStatus)) {
        let mut reg = self.registry.lock().expect("registry lock");
        if let Some(status) = reg.get_mut(id) {
            f(status);
        }
    }

    fn status(&self, id: &str) -> Option<RunStatus> {
        if let Some(s) = self.registry.lock().expect("registry lock").get(id) {
            return Some(s.clone());
        }
        let dir = self.run_dir(id)?;
        load_run(&dir).ok().map(|r| RunStatus {
            run_id: id.to_string(),
            state: RunState::Done,
            probes_done: r.manifest.probe_count,
            probes_total: r.manifest.probe_count,
            error: None,
            retriable: None,
        })
    }

    fn run_dir(&self, id: &str) -> Option<PathBuf> {
        // Ids are hex; anything else could escape the root.
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric()) {
            return None;
        }
        Some(self.root.join(id))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into() }) }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown run {id}"))
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        let status = match &e {
            ExperimentError::NotFound(_) => StatusCode::NOT_FOUND,
            ExperimentError::Scorer { .. } => StatusCode::BAD_GATEWAY,
            ExperimentError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            e if e.is_degenerate() => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        let mut body = json!({ "error": e.to_string() });
        if let ExperimentError::Scorer { source, .. } = &e {
            body["retriable"] = json!(source.is_retriable());
        }
        Self { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
pub struct DegreeQuery {
    pub degree: Option<usize>,
}

async fn get_lexicon() -> Json<serde_json::Value> {
    let lex = builtin_lexicon();
    let pairs: Vec<_> = lex.pairs().iter().map(|(m, f)| json!({ "male": m, "female": f })).collect();
    Json(json!({ "pairs": pairs }))
}

async fn get_axis(UrlPath(category): UrlPath<String>) -> ApiResult<Json<serde_json::Value>> {
    let cat: AxisCategory = category
        .parse()
        .map_err(|e: crate::templates::TemplateError| ApiError::new(StatusCode::NOT_FOUND, e.to_string()))?;
    let axis = builtin_axis(cat).map_err(|e| ApiError::new(StatusCode::NOT_FOUND, e.to_string()))?;
    Ok(Json(json!({ "category": cat, "values": axis.values })))
}

async fn post_run(
    State(state): State<Arc<AppState>>,
    Json(body): Json<serde_json::Value>,
) -> ApiResult<(StatusCode, Json<RunStatus>)> {
    let mut config: ExperimentConfig = serde_json::from_value(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    config.out = state.root.clone();
    // Resolving reads input files and hashes them.
    let runner = tokio::task::spawn_blocking(move || Runner::new(config))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    if runner.dir().parent() != Some(state.root.as_path()) {
        return Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("{CACHE_DIR_ENV} disagrees with the service root"),
        ));
    }
    let id = runner.run_id().to_string();

    {
        let mut reg = state.registry.lock().expect("registry lock");
        match reg.get(&id) {
            Some(s) if s.state != RunState::Failed => return Ok((StatusCode::OK, Json(s.clone()))),
            _ => {}
        }
        if runner.is_complete() {
            drop(reg);
            let status = state.status(&id).ok_or_else(|| ApiError::not_found(&id))?;
            state.registry.lock().expect("registry lock").insert(id, status.clone());
            return Ok((StatusCode::OK, Json(status)));
        }
        reg.insert(id.clone(), RunStatus::queued(&id));
    }

    let progress_state = state.clone();
    let progress_id = id.clone();
    let runner = runner.on_progress(move |p| {
        // Terminal states are set below, together with the error details.
        if !p.state.is_terminal() {
            progress_state.update(&progress_id, |s| s.advance(p.state, p.probes_done, p.probes_total));
        }
    });
    let task_state = state.clone();
    let task_id = id.clone();
    tokio::task::spawn_blocking(move || match runner.run() {
        Ok(result) => {
            info!("run {task_id} finished");
            let n = result.manifest.probe_count;
            task_state.update(&task_id, |s| s.advance(RunState::Done, n, n));
        }
        Err(e) => {
            warn!("run {task_id} failed: {e}");
            let retriable = match &e {
                ExperimentError::Scorer { source, .. } => Some(source.is_retriable()),
                _ => None,
            };
            task_state.update(&task_id, |s| {
                s.advance(RunState::Failed, 0, 0);
                s.error = Some(e.to_string());
                s.retriable = retriable;
            });
        }
    });
    let status = state.status(&id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn list_all(State(state): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    let root = state.root.clone();
    let manifests = tokio::task::spawn_blocking(move || list_runs(&root))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let mut statuses: HashMap<String, RunStatus> =
        state.registry.lock().expect("registry lock").clone();
    let mut runs = Vec::new();
    for m in manifests {
        statuses.remove(&m.run_id);
        runs.push(json!({
            "run_id": m.run_id,
            "state": RunState::Done,
            "axis_category": m.axis_category,
            "scorer": m.scorer,
            "probe_count": m.probe_count,
            "completed_at": m.completed_at,
        }));
    }
    let mut pending: Vec<_> = statuses.into_values().collect();
    pending.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    for s in pending {
        runs.push(serde_json::to_value(s).expect("serializes"));
    }
    Ok(Json(json!({ "runs": runs })))
}

async fn get_status(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<RunStatus>> {
    state.status(&id).map(Json).ok_or_else(|| ApiError::not_found(&id))
}

/// Loads a finished run, mapping unfinished and failed runs to errors.
fn finished(state: &AppState, id: &str) -> ApiResult<crate::experiment::RunResult> {
    let status = state.status(id).ok_or_else(|| ApiError::not_found(id))?;
    match status.state {
        RunState::Done => {}
        RunState::Failed => {
            let mut err = ApiError::new(
                if status.retriable.is_some() { StatusCode::BAD_GATEWAY } else { StatusCode::BAD_REQUEST },
                status.error.unwrap_or_default(),
            );
            if let Some(r) = status.retriable {
                err.body["retriable"] = json!(r);
            }
            return Err(err);
        }
        other => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("run {id} is {}", serde_json::to_value(other).expect("serializes")),
            ))
        }
    }
    let dir = state.run_dir(id).ok_or_else(|| ApiError::not_found(id))?;
    Ok(load_run(&dir)?)
}

async fn get_series(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let result = finished(&state, &id)?;
    let csv = std::fs::read_to_string(result.dir.join(SERIES_FILE))
        .map_err(|e| ApiError::from(ExperimentError::Io(e)))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn get_fit(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<DegreeQuery>,
) -> ApiResult<Response> {
    let result = finished(&state, &id)?;
    let fitted = match q.degree {
        Some(d) => {
            ExperimentConfig { fit_degree: d, ..result.manifest.config.clone() }.validate()?;
            fit(&result.series, d).map_err(ExperimentError::from)?
        }
        None => result.fit.clone(),
    };
    let degenerate: Vec<_> =
        result.manifest.genders.iter().copied().filter(|&g| fitted.is_degenerate(g)).collect();
    let body = serde_json::to_value(&fitted).expect("serializes");
    if degenerate.is_empty() {
        Ok(Json(body).into_response())
    } else {
        let err = json!({
            "error": "zero-variance series, Pearson's r undefined",
            "degenerate": degenerate,
            "fit": body,
        });
        Ok((StatusCode::CONFLICT, Json(err)).into_response())
    }
}

async fn get_plot(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<DegreeQuery>,
) -> ApiResult<Response> {
    let result = finished(&state, &id)?;
    let svg = render_plot(&result, q.degree)?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/lexicon", get(get_lexicon))
        .route("/api/axes/{category}", get(get_axis))
        .route("/api/runs", get(list_all).post(post_run))
        .route("/api/runs/{id}", get(get_status))
        .route("/api/runs/{id}/series", get(get_series))
        .route("/api/runs/{id}/fit", get(get_fit))
        .route("/api/runs/{id}/plot.svg", get(get_plot))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(addr: SocketAddr, root: PathBuf, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let app = router(AppState::new(root), static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}

/// Runs the service on its own runtime. `BIASPROBE_CACHE_DIR` overrides `out`.
pub fn serve_blocking(port: u16, out: PathBuf, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let root = std::env::var_os(CACHE_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or(out);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve(SocketAddr::from(([0, 0, 0, 0], port)), root, static_dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_never_regresses() {
        let mut s = RunStatus::queued("abc");
        s.advance(RunState::Scoring, 50, 100);
        s.advance(RunState::Scoring, 20, 100);
        assert_eq!(s.probes_done, 50);
        s.advance(RunState::Queued, 0, 0);
        assert_eq!(s.state, RunState::Scoring);
        s.advance(RunState::Done, 100, 100);
        s.advance(RunState::Failed, 0, 0);
        assert_eq!(s.state, RunState::Done);
    }

    #[test]
    fn run_ids_cannot_escape_root() {
        let state = AppState::new("/tmp/x");
        assert!(state.run_dir("../etc").is_none());
        assert!(state.run_dir("").is_none());
        assert_eq!(state.run_dir("ab12").unwrap(), Path::new("/tmp/x/ab12"));
    }
}
