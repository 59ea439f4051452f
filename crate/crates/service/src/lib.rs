//! HTTP service exposing RTT trend analysis over a measurement store.
//!
//! Three endpoints under `/api/v1`:
//!
//! - `GET /ticks/{msm_id}/{prb_id}?start&stop` — the regularized minimum-RTT
//!   series with explicit `null` gaps.
//! - `GET /trends/{msm_id}/{prb_id}?start&stop` — ticks plus the per-tick
//!   state labels and the model summary.
//! - `GET /trends/{msm_id}/{prb_id}/summary?start&stop` — the summary alone.
//!
//! Start/stop accept `YYYY-MM-DD` or `YYYY-MM-DDTHH:MM` (UTC, time-of-day
//! defaulting to midnight). Responses are deterministic: the sampler seed is
//! derived from the request key, and segmentations are cached and coalesced
//! per key.

mod cache;
mod handlers;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::routing::get;
use axum::Router;
use rttseg_core::rng::derive_seed;
use rttseg_core::series::MeasurementClient;

pub use handlers::{StateSummaryJson, TickJson, TicksResponse, TrendTickJson, TrendsResponse, TrendsSummary};

/// Service configuration; every field has a sensible default.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Root of the fixture store (`<root>/<msm_id>/<prb_id>.jsonl`).
    pub fixture_root: PathBuf,
    /// Tick interval in seconds.
    pub interval: i64,
    /// Sampler sweeps per chain.
    pub sweeps: usize,
    pub burn_in: usize,
    /// Independent chains per fit.
    pub chains: usize,
    /// Base seed all request seeds derive from.
    pub seed_salt: u64,
    /// Budget for one segmentation before the request gives up with 503.
    pub fit_timeout: Duration,
    /// Cached segmentations kept in memory.
    pub cache_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            fixture_root: PathBuf::from("fixtures"),
            interval: 240,
            sweeps: 500,
            burn_in: 200,
            chains: 3,
            seed_salt: 0,
            fit_timeout: Duration::from_secs(10),
            cache_capacity: 256,
        }
    }
}

/// Shared state behind the router.
pub struct AppState {
    pub(crate) store: Arc<dyn MeasurementClient>,
    pub(crate) config: ServiceConfig,
    pub(crate) cache: cache::AnalysisCache,
}

impl AppState {
    pub fn new(store: Arc<dyn MeasurementClient>, config: ServiceConfig) -> Self {
        let cache = cache::AnalysisCache::new(config.cache_capacity);
        Self { store, config, cache }
    }

    /// State backed by the fixture store at `config.fixture_root`.
    pub fn with_fixtures(config: ServiceConfig) -> Self {
        let store = Arc::new(rttseg_core::series::FixtureStore::new(config.fixture_root.clone()));
        Self::new(store, config)
    }
}

/// The sampler seed used for a request key; exposed so offline runs can
/// reproduce a response bit for bit.
pub fn request_seed(seed_salt: u64, msm_id: u64, prb_id: u64, start: i64, stop: i64) -> u64 {
    derive_seed(
        seed_salt,
        &[&msm_id.to_string(), &prb_id.to_string(), &start.to_string(), &stop.to_string()],
    )
}

/// Builds the router.
pub fn app(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/ticks/:msm_id/:prb_id", get(handlers::ticks))
        .route("/api/v1/trends/:msm_id/:prb_id", get(handlers::trends))
        .route("/api/v1/trends/:msm_id/:prb_id/summary", get(handlers::summary))
        .with_state(state)
}

/// Binds and serves until the task is dropped or the process exits.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let app = app(state);
    axum::serve(listener, app).await
}
