//! JSON-over-HTTP service that runs interactive sessions.
//!
//! Each session sits behind its own mutex so choices are applied one at a
//! time. Completed blocks trigger a refit on a snapshot of the log, run on
//! the blocking pool; `/fit` serves the latest finished result.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use riskreach_core::analysis::{
    build_choice_dataset, compensation_probability, curve_export, uniform_grid, CurveModel, CurvePoint,
};
use riskreach_core::estimation::{blr_map, fit_cpt, FitConfig, MapConfig};
use riskreach_core::model::{BlrParams, CptParams, HumanAction, Probability};
use riskreach_core::protocol::{LogLine, Order, ProtocolConfig, SessionLog};
use riskreach_core::session::{resolve_action, ChoiceOutcome, NextTrial, Phase, SessionState};
use riskreach_core::Error as CoreError;

const CURVE_POINTS: usize = 101;

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    BadRequest(String),
    Internal(String),
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::WrongPhase { .. } | CoreError::UnfinishableBlock { .. } => ApiError::Conflict(e.to_string()),
            CoreError::InvalidParameter(_) | CoreError::ProbabilityOutOfRange(_) => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(serde_json::json!({ "error": message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelCurve<P> {
    pub params: P,
    pub curve: Vec<CurvePoint>,
}

/// Latest live fit of a session.
#[derive(Debug, Clone, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FitSnapshot {
    /// Completed blocks included in this fit.
    pub blocks_fitted: usize,
    pub trials_fitted: usize,
    pub cpt: Option<ModelCurve<CptParams>>,
    pub blr: Option<ModelCurve<BlrParams>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct SessionEntry {
    participant_id: String,
    started: Instant,
    state: Mutex<SessionState>,
    fit: RwLock<FitSnapshot>,
    log_path: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<SessionEntry>>>>,
    data_dir: Option<PathBuf>,
    fit_config: FitConfig,
}

impl AppState {
    pub fn new(data_dir: Option<PathBuf>, fit_config: FitConfig) -> Self {
        AppState { sessions: Arc::default(), data_dir, fit_config }
    }

    fn session(&self, id: &str) -> Result<Arc<SessionEntry>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_trial))
        .route("/sessions/{id}/choice", post(submit_choice))
        .route("/sessions/{id}/summary", get(summary))
        .route("/sessions/{id}/fit", get(latest_fit))
        .route("/sessions/{id}/log", get(session_log))
        .with_state(state)
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub order: Option<Order>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub participant_id: Option<String>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionCreated {
    pub session_id: String,
    pub participant_id: String,
    pub seed: u64,
    pub config: ProtocolConfig,
}

async fn create_session(State(app): State<AppState>, Json(req): Json<CreateSession>) -> ApiResult<SessionCreated> {
    let session_id = uuid::Uuid::new_v4().to_string();
    let seed = req.seed.unwrap_or_else(|| {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or_default()
    });
    let config = ProtocolConfig::default().with_order(req.order.unwrap_or_default());
    let state = SessionState::new(session_id.clone(), config.clone(), seed)?;
    let participant_id = req.participant_id.unwrap_or_else(|| session_id.clone());
    let log_path = app.data_dir.as_ref().map(|d| d.join(format!("{session_id}.jsonl")));
    if let Some(p) = &log_path {
        fs::write(p, "").map_err(|e| ApiError::Internal(format!("creating {}: {e}", p.display())))?;
    }
    let entry = SessionEntry {
        participant_id: participant_id.clone(),
        started: Instant::now(),
        state: Mutex::new(state),
        fit: RwLock::default(),
        log_path,
    };
    app.sessions.write().expect("session table poisoned").insert(session_id.clone(), Arc::new(entry));
    Ok(Json(SessionCreated { session_id, participant_id, seed, config }))
}

async fn next_trial(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<NextTrial> {
    let entry = app.session(&id)?;
    let mut state = entry.state.lock().expect("session poisoned");
    Ok(Json(state.next()?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ChoiceRequest {
    #[serde(default)]
    pub human_action: Option<HumanAction>,
    #[serde(default)]
    pub hold_ms: Option<u64>,
}

async fn submit_choice(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ChoiceRequest>,
) -> ApiResult<ChoiceOutcome> {
    let entry = app.session(&id)?;
    let action = resolve_action(req.human_action, req.hold_ms)?;
    let (outcome, snapshot) = {
        let mut state = entry.state.lock().expect("session poisoned");
        let at_ms = entry.started.elapsed().as_millis() as u64;
        let outcome = state.choice(action, at_ms)?;
        if let Some(path) = &entry.log_path {
            let trial = state.trials().last().expect("choice recorded a trial");
            let seed = state
                .seeds()
                .iter()
                .find(|s| s.round == trial.round && s.block == trial.block)
                .map_or(0, |s| s.seed);
            let line = LogLine::new(&entry.participant_id, trial, seed);
            OpenOptions::new()
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{}", line.to_json()))
                .map_err(|e| ApiError::Internal(format!("appending to {}: {e}", path.display())))?;
        }
        let snapshot = outcome.block_done.then(|| state.log(&entry.participant_id));
        (outcome, snapshot)
    };
    if let Some(log) = snapshot {
        let entry = Arc::clone(&entry);
        let config = app.fit_config;
        tokio::task::spawn_blocking(move || {
            let fit = fit_snapshot(&log, &config);
            let mut slot = entry.fit.write().expect("fit slot poisoned");
            if fit.trials_fitted >= slot.trials_fitted {
                *slot = fit;
            }
        });
    }
    Ok(Json(outcome))
}

fn completed_blocks(log: &SessionLog) -> Vec<(u32, u32)> {
    let needed = log.config.successes_per_block as usize;
    log.blocks()
        .into_iter()
        .filter(|&(r, b)| log.block_trials(r, b).iter().filter(|t| t.success).count() >= needed)
        .collect()
}

/// Fits both models to the completed blocks of `log`.
pub fn fit_snapshot(log: &SessionLog, config: &FitConfig) -> FitSnapshot {
    let done = completed_blocks(log);
    let mut fitted = log.clone();
    fitted.trials.retain(|t| done.contains(&(t.round, t.block)));
    let mut snapshot = FitSnapshot { blocks_fitted: done.len(), trials_fitted: fitted.trials.len(), ..FitSnapshot::default() };
    if fitted.trials.is_empty() {
        return snapshot;
    }
    let grid = uniform_grid(CURVE_POINTS);
    let result = build_choice_dataset(&fitted).and_then(|ds| {
        let cpt = fit_cpt(&ds, config)?;
        let blr = blr_map(&ds, &MapConfig::default())?;
        Ok((cpt, blr))
    });
    match result {
        Ok((cpt, blr)) => {
            let payoff = config.payoff;
            snapshot.cpt = Some(ModelCurve {
                params: cpt.params,
                curve: curve_export(&CurveModel::Cpt { params: cpt.params, payoff }, &grid),
            });
            snapshot.blr = Some(ModelCurve { params: blr, curve: curve_export(&CurveModel::Blr { params: blr }, &grid) });
        }
        Err(e) => snapshot.error = Some(e.to_string()),
    }
    snapshot
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SummaryRow {
    pub round: u32,
    pub block: u32,
    pub p_r: Probability,
    pub trials: usize,
    pub successes: usize,
    pub p2: f64,
    pub complete: bool,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionSummary {
    pub session_id: String,
    pub participant_id: String,
    pub phase: Phase,
    pub trials: usize,
    pub blocks: Vec<SummaryRow>,
}

async fn summary(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionSummary> {
    let entry = app.session(&id)?;
    let (phase, log) = {
        let state = entry.state.lock().expect("session poisoned");
        (state.phase(), state.log(&entry.participant_id))
    };
    let needed = log.config.successes_per_block as usize;
    let blocks = log
        .blocks()
        .into_iter()
        .map(|(round, block)| {
            let trials = log.block_trials(round, block);
            let successes = trials.iter().filter(|t| t.success).count();
            Ok(SummaryRow {
                round,
                block,
                p_r: trials[0].p_r,
                trials: trials.len(),
                successes,
                p2: compensation_probability(trials.iter().copied())?.get(),
                complete: successes >= needed,
            })
        })
        .collect::<Result<Vec<_>, CoreError>>()?;
    Ok(Json(SessionSummary { session_id: id, participant_id: entry.participant_id.clone(), phase, trials: log.trials.len(), blocks }))
}

async fn latest_fit(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<FitSnapshot> {
    let entry = app.session(&id)?;
    let fit = entry.fit.read().expect("fit slot poisoned").clone();
    Ok(Json(fit))
}

async fn session_log(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let entry = app.session(&id)?;
    let body = entry.state.lock().expect("session poisoned").log(&entry.participant_id).to_jsonl();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
