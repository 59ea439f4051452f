//! Request handlers, wire types and error mapping.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use rttseg_core::changepoint::extract_changepoints;
use rttseg_core::hdphmm::{fit, HdpHmmConfig, HdpHmmError};
use rttseg_core::series::{regularize, SeriesError};

use crate::{request_seed, AppState};

#[derive(Debug)]
pub(crate) enum ApiError {
    BadRequest(String),
    NotFound(String),
    Unprocessable(String),
    Timeout,
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Timeout => (
                StatusCode::SERVICE_UNAVAILABLE,
                "segmentation exceeded its time budget; retry shortly".to_string(),
            ),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        let mut response = (status, Json(serde_json::json!({ "error": msg }))).into_response();
        if status == StatusCode::SERVICE_UNAVAILABLE {
            response.headers_mut().insert("retry-after", "5".parse().expect("static header"));
        }
        response
    }
}

impl From<SeriesError> for ApiError {
    fn from(e: SeriesError) -> Self {
        match e {
            SeriesError::NotFound { .. } => ApiError::NotFound(e.to_string()),
            SeriesError::EmptyWindow { .. } | SeriesError::InvalidInterval(_) => {
                ApiError::BadRequest(e.to_string())
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<HdpHmmError> for ApiError {
    fn from(e: HdpHmmError) -> Self {
        match e {
            HdpHmmError::AllMissing | HdpHmmError::TooShort { .. } => {
                ApiError::Unprocessable(e.to_string())
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

#[derive(Deserialize)]
pub(crate) struct WindowQuery {
    start: Option<String>,
    stop: Option<String>,
}

/// `YYYY-MM-DD` or `YYYY-MM-DDTHH:MM`, read as UTC.
fn parse_time(s: &str) -> Option<i64> {
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M") {
        return Some(dt.and_utc().timestamp());
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

fn parse_window(query: &WindowQuery) -> Result<(i64, i64), ApiError> {
    let start = query
        .start
        .as_deref()
        .ok_or_else(|| ApiError::BadRequest("missing 'start' parameter".into()))?;
    let stop = query
        .stop
        .as_deref()
        .ok_or_else(|| ApiError::BadRequest("missing 'stop' parameter".into()))?;
    let start = parse_time(start)
        .ok_or_else(|| ApiError::BadRequest(format!("malformed start time '{start}'")))?;
    let stop = parse_time(stop)
        .ok_or_else(|| ApiError::BadRequest(format!("malformed stop time '{stop}'")))?;
    if start >= stop {
        return Err(ApiError::BadRequest(format!("start {start} >= stop {stop}")));
    }
    Ok((start, stop))
}

#[derive(Debug, Clone, Serialize)]
pub struct TickJson {
    pub t: i64,
    pub rtt: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TicksResponse {
    pub msm_id: u64,
    pub prb_id: u64,
    pub start: i64,
    pub stop: i64,
    pub interval: i64,
    pub ticks: Vec<TickJson>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StateSummaryJson {
    pub id: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// `null` for an absorbing state (single-state models).
    pub expected_duration_steps: Option<f64>,
    pub occupancy_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendsSummary {
    pub msm_id: u64,
    pub prb_id: u64,
    pub start: i64,
    pub stop: i64,
    pub num_states: usize,
    pub states: Vec<StateSummaryJson>,
    pub change_times: Vec<i64>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendTickJson {
    pub t: i64,
    pub rtt: Option<f64>,
    pub state: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendsResponse {
    pub msm_id: u64,
    pub prb_id: u64,
    pub start: i64,
    pub stop: i64,
    pub interval: i64,
    pub ticks: Vec<TrendTickJson>,
    pub summary: TrendsSummary,
}

/// Everything derived from one segmentation, shared by `/trends` and its
/// `/summary` projection.
pub(crate) struct Analysis {
    ticks: Vec<TrendTickJson>,
    summary: TrendsSummary,
    interval: i64,
}

pub(crate) async fn ticks(
    State(state): State<Arc<AppState>>,
    Path((msm_id, prb_id)): Path<(u64, u64)>,
    Query(query): Query<WindowQuery>,
) -> Result<Json<TicksResponse>, ApiError> {
    let (start, stop) = parse_window(&query)?;
    let raw = state.store.fetch(msm_id, prb_id, start, stop)?;
    let series = regularize::<f64>(&raw, start, stop, state.config.interval)?;
    let ticks = (0..series.len())
        .map(|i| TickJson { t: series.time_of(i), rtt: series.value(i) })
        .collect();
    Ok(Json(TicksResponse {
        msm_id,
        prb_id,
        start,
        stop,
        interval: state.config.interval,
        ticks,
    }))
}

async fn analysis_for(
    state: &Arc<AppState>,
    msm_id: u64,
    prb_id: u64,
    start: i64,
    stop: i64,
) -> Result<Arc<Analysis>, ApiError> {
    let key = (msm_id, prb_id, start, stop);
    let budget = state.config.fit_timeout;
    let state_for_compute = state.clone();
    state
        .cache
        .get_or_compute(key, move || async move {
            let st = state_for_compute;
            let work = tokio::task::spawn_blocking(move || compute_analysis(&st, msm_id, prb_id, start, stop));
            match tokio::time::timeout(budget, work).await {
                Err(_) => Err(ApiError::Timeout),
                Ok(Err(join_err)) => Err(ApiError::Internal(join_err.to_string())),
                Ok(Ok(result)) => result.map(Arc::new),
            }
        })
        .await
}

fn compute_analysis(
    state: &AppState,
    msm_id: u64,
    prb_id: u64,
    start: i64,
    stop: i64,
) -> Result<Analysis, ApiError> {
    let raw = state.store.fetch(msm_id, prb_id, start, stop)?;
    let series = regularize::<f64>(&raw, start, stop, state.config.interval)?;
    let config = HdpHmmConfig::<f64> {
        sweeps: state.config.sweeps,
        burn_in: state.config.burn_in,
        chains: state.config.chains,
        seed: request_seed(state.config.seed_salt, msm_id, prb_id, start, stop),
        ..Default::default()
    };
    let result = fit(&series, &config)?;
    let t_len = series.len();
    let ticks = (0..t_len)
        .map(|i| TrendTickJson {
            t: series.time_of(i),
            rtt: series.value(i),
            state: result.states[i],
        })
        .collect();
    let occupancy = {
        let mut counts = vec![0usize; result.model.num_states()];
        for &s in &result.states {
            counts[s] += 1;
        }
        counts
    };
    let states = result
        .model
        .per_state()
        .iter()
        .enumerate()
        .map(|(id, s)| StateSummaryJson {
            id,
            mean_ms: s.mean_ms,
            std_ms: s.std_ms,
            expected_duration_steps: s.expected_duration_steps.is_finite().then_some(s.expected_duration_steps),
            occupancy_fraction: occupancy[id] as f64 / t_len as f64,
        })
        .collect();
    let change_times = extract_changepoints(&result.states, &series)
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .change_times;
    let summary = TrendsSummary {
        msm_id,
        prb_id,
        start,
        stop,
        num_states: result.model.num_states(),
        states,
        change_times,
        log_likelihood: result.log_likelihood,
    };
    Ok(Analysis { ticks, summary, interval: state.config.interval })
}

pub(crate) async fn trends(
    State(state): State<Arc<AppState>>,
    Path((msm_id, prb_id)): Path<(u64, u64)>,
    Query(query): Query<WindowQuery>,
) -> Result<Json<TrendsResponse>, ApiError> {
    let (start, stop) = parse_window(&query)?;
    let analysis = analysis_for(&state, msm_id, prb_id, start, stop).await?;
    Ok(Json(TrendsResponse {
        msm_id,
        prb_id,
        start,
        stop,
        interval: analysis.interval,
        ticks: analysis.ticks.clone(),
        summary: analysis.summary.clone(),
    }))
}

pub(crate) async fn summary(
    State(state): State<Arc<AppState>>,
    Path((msm_id, prb_id)): Path<(u64, u64)>,
    Query(query): Query<WindowQuery>,
) -> Result<Json<TrendsSummary>, ApiError> {
    let (start, stop) = parse_window(&query)?;
    let analysis = analysis_for(&state, msm_id, prb_id, start, stop).await?;
    Ok(Json(analysis.summary.clone()))
}
