//! HTTP/JSON API over a directory of freshcast runs.
//!
//! Read endpoints return persisted artifacts unchanged. Scenario requests
//! become jobs that a single worker runs in submission order, so at most one
//! re-optimization touches the runs directory at a time.
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/api/runs` | every run's `meta.json`, oldest first |
//! | GET | `/api/runs/{id}` | `meta.json` |
//! | GET | `/api/runs/{id}/forecast` | forecast bundles in category order |
//! | GET | `/api/runs/{id}/plan` | `plan.json` |
//! | GET | `/api/runs/{id}/inputs` | `pricing_inputs.json` |
//! | POST | `/api/runs/{id}/scenarios` | scenario override; returns a job |
//! | GET | `/api/jobs` | every job |
//! | GET | `/api/jobs/{id}` | one job |
//!
//! Errors carry `{"error": message, "code": code}`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use freshcast::pipeline::{
    list_runs, run_scenario, PipelineError, RunDir, RunStatus, ScenarioOverride,
};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tower_http::services::ServeDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub base_run: String,
    pub state: JobState,
    /// Swarm iterations completed so far.
    pub progress: usize,
    pub max_iters: usize,
    pub scenario: ScenarioOverride,
    /// Id of the resulting run once done.
    pub result_run: Option<String>,
    /// `/api/runs/{id}` of the resulting run once done.
    pub result_link: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                code: code.to_string(),
            },
        }
    }

    fn unknown_run(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown_run",
            format!("unknown run `{id}`"),
        )
    }

    fn not_ready(what: &str) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "not_ready",
            format!("{what} has not been produced yet"),
        )
    }

    fn internal(e: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

struct Jobs {
    next: u64,
    table: BTreeMap<String, JobStatus>,
}

#[derive(Clone)]
pub struct AppState {
    runs_root: Arc<PathBuf>,
    jobs: Arc<Mutex<Jobs>>,
    queue: mpsc::UnboundedSender<String>,
}

impl AppState {
    /// Starts the job worker; must be called inside a tokio runtime.
    pub fn new(runs_root: impl Into<PathBuf>) -> Self {
        let (tx, rx) = mpsc::unbounded_channel();
        let state = Self {
            runs_root: Arc::new(runs_root.into()),
            jobs: Arc::new(Mutex::new(Jobs {
                next: 1,
                table: BTreeMap::new(),
            })),
            queue: tx,
        };
        tokio::spawn(worker(state.clone(), rx));
        state
    }

    fn update(&self, job_id: &str, f: impl FnOnce(&mut JobStatus)) {
        let mut jobs = self.jobs.lock().expect("job table poisoned");
        if let Some(job) = jobs.table.get_mut(job_id) {
            f(job);
        }
    }

    fn open(&self, id: &str) -> Result<RunDir, ApiError> {
        RunDir::open(self.runs_root.as_path(), id).map_err(|_| ApiError::unknown_run(id))
    }
}

async fn worker(state: AppState, mut rx: mpsc::UnboundedReceiver<String>) {
    while let Some(job_id) = rx.recv().await {
        let job = {
            let jobs = state.jobs.lock().expect("job table poisoned");
            jobs.table.get(&job_id).cloned()
        };
        let Some(job) = job else { continue };
        state.update(&job_id, |j| j.state = JobState::Running);
        let progress_state = state.clone();
        let progress_id = job_id.clone();
        let root = state.runs_root.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            let base = RunDir::open(root.as_path(), &job.base_run)?;
            run_scenario(&base, &job.scenario, |iter, _| {
                progress_state.update(&progress_id, |j| j.progress = iter);
            })
        })
        .await;
        state.update(&job_id, |j| match outcome {
            Ok(Ok(art)) => {
                j.state = JobState::Done;
                j.result_link = Some(format!("/api/runs/{}", art.id()));
                j.result_run = Some(art.id().to_string());
            }
            Ok(Err(e)) => {
                j.state = JobState::Failed;
                j.error = Some(e.to_string());
            }
            Err(e) => {
                j.state = JobState::Failed;
                j.error = Some(format!("job aborted: {e}"));
            }
        });
    }
}

/// The API routes, plus static files from `static_dir` for every other path.
pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/runs", get(runs))
        .route("/api/runs/{id}", get(run_meta))
        .route("/api/runs/{id}/forecast", get(run_forecast))
        .route("/api/runs/{id}/plan", get(run_plan))
        .route("/api/runs/{id}/inputs", get(run_inputs))
        .route("/api/runs/{id}/scenarios", post(submit_scenario))
        .route("/api/jobs", get(jobs))
        .route("/api/jobs/{id}", get(job))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(
    addr: SocketAddr,
    runs_root: PathBuf,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let app = router(AppState::new(runs_root), static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn read_artifact(path: PathBuf, what: &str) -> Result<Vec<u8>, ApiError> {
    match tokio::fs::read(&path).await {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::not_ready(what)),
        Err(e) => Err(ApiError::internal(e)),
    }
}

async fn runs(State(state): State<AppState>) -> Result<Response, ApiError> {
    let root = state.runs_root.clone();
    let metas = tokio::task::spawn_blocking(move || list_runs(root.as_path()))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    Ok(Json(metas).into_response())
}

async fn run_meta(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let run = state.open(&id)?;
    Ok(json_bytes(read_artifact(run.meta_path(), "meta").await?))
}

async fn run_plan(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let run = state.open(&id)?;
    Ok(json_bytes(read_artifact(run.plan_path(), "plan").await?))
}

async fn run_inputs(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let run = state.open(&id)?;
    Ok(json_bytes(
        read_artifact(run.inputs_path(), "pricing inputs").await?,
    ))
}

async fn run_forecast(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let run = state.open(&id)?;
    let meta = run.meta().map_err(ApiError::internal)?;
    if meta.status < RunStatus::Forecast {
        return Err(ApiError::not_ready("forecast"));
    }
    let mut bundles = Vec::with_capacity(meta.categories.len());
    let config = run.config().map_err(ApiError::internal)?;
    if config.forecast.enabled {
        for cat in &meta.categories {
            let bytes = read_artifact(run.forecast_path(cat), "forecast").await?;
            let value: serde_json::Value =
                serde_json::from_slice(&bytes).map_err(ApiError::internal)?;
            bundles.push(value);
        }
    }
    Ok(Json(bundles).into_response())
}

async fn submit_scenario(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let run = state.open(&id)?;
    let invalid =
        |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_override", m);
    let scenario: ScenarioOverride = if body.iter().all(u8::is_ascii_whitespace) {
        ScenarioOverride::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| invalid(e.to_string()))?
    };
    let meta = run.meta().map_err(ApiError::internal)?;
    scenario.validate(&meta.categories).map_err(invalid)?;
    if meta.status < RunStatus::Forecast {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "base_incomplete",
            format!("run `{id}` has no forecasts yet"),
        ));
    }
    let config = run
        .config()
        .map_err(|e: PipelineError| ApiError::internal(e))?;
    let max_iters = scenario.max_iters.unwrap_or(config.pso.max_iters);
    let status = {
        let mut jobs = state.jobs.lock().expect("job table poisoned");
        let job_id = format!("job-{}", jobs.next);
        jobs.next += 1;
        let status = JobStatus {
            job_id: job_id.clone(),
            base_run: id,
            state: JobState::Queued,
            progress: 0,
            max_iters,
            scenario,
            result_run: None,
            result_link: None,
            error: None,
        };
        jobs.table.insert(job_id, status.clone());
        status
    };
    state
        .queue
        .send(status.job_id.clone())
        .map_err(|_| ApiError::internal("job worker has stopped"))?;
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn jobs(State(state): State<AppState>) -> Json<Vec<JobStatus>> {
    let jobs = state.jobs.lock().expect("job table poisoned");
    let mut all: Vec<JobStatus> = jobs.table.values().cloned().collect();
    all.sort_by_key(|j| {
        j.job_id
            .trim_start_matches("job-")
            .parse::<u64>()
            .unwrap_or(0)
    });
    Json(all)
}

async fn job(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<JobStatus>, ApiError> {
    let jobs = state.jobs.lock().expect("job table poisoned");
    jobs.table.get(&id).cloned().map(Json).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_job",
            format!("unknown job `{id}`"),
        )
    })
}
