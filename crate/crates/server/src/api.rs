//! HTTP endpoints.
//!
//! | method | path                 | purpose                                   |
//! |--------|----------------------|-------------------------------------------|
//! | GET    | `/api/sites`         | configured sites with derived availability |
//! | GET    | `/api/heatmap`       | grid-cell means for a viewport             |
//! | GET    | `/api/timeseries`    | hourly means per site                      |
//! | GET    | `/api/site-summary`  | trailing-window summary of one site        |
//! | POST   | `/api/measurements`  | ingest one device report                   |
//! | GET    | `/api/health`        | liveness and record count                  |
//!
//! Errors are JSON `{"code", "field"?, "message"}` bodies. Malformed input is
//! always a 4xx, never a 500.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use chrono::{DateTime, Duration, Utc};
use coverage_core::aggregate::{self, AggregateError};
use coverage_core::model::{format_instant, parse_instant, MetricKind, RawRecord};
use coverage_core::projection::GridSpec;
use coverage_core::store::{IngestError, MeasurementStore, QueryFilter, StoreError};
use serde::Serialize;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::config::ServiceConfig;
use crate::wire::{
    ErrorBody, HealthBody, HeatmapBody, IngestedBody, SeriesBody, SiteBody, SitesBody, SummaryBody,
    TimeseriesBody,
};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<MeasurementStore>,
    pub config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(store: MeasurementStore, config: ServiceConfig) -> Self {
        AppState {
            store: Arc::new(store),
            config: Arc::new(config),
        }
    }
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let cors = if state.config.cors_origins.is_empty() {
        cors.allow_origin(Any)
    } else {
        let origins: Vec<HeaderValue> = state
            .config
            .cors_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        cors.allow_origin(AllowOrigin::list(origins))
    };
    Router::new()
        .route("/api/sites", get(sites))
        .route("/api/heatmap", get(heatmap))
        .route("/api/timeseries", get(timeseries))
        .route("/api/site-summary", get(site_summary))
        .route("/api/measurements", axum::routing::post(ingest))
        .route("/api/health", get(health))
        .layer(cors)
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    field: Option<&'static str>,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            field: None,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn with_field(mut self, field: &'static str) -> Self {
        self.field = Some(field);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            field: self.field,
            message: self.message,
        };
        json_response(self.status, &body)
    }
}

impl From<AggregateError> for ApiError {
    fn from(e: AggregateError) -> Self {
        let code = match &e {
            AggregateError::InvalidGrid(_) => "invalid_grid",
            AggregateError::GridTooFine { .. } => "grid_too_fine",
            AggregateError::BadKMin => "bad_request",
            AggregateError::NoSites => "no_sites",
            AggregateError::BadRange => "bad_range",
            AggregateError::UnknownSite(_) => "unknown_site",
        };
        ApiError::new(StatusCode::BAD_REQUEST, code, e.to_string())
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let bytes = serde_json::to_vec(body).expect("response bodies serialize");
    (
        status,
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        bytes,
    )
        .into_response()
}

type Params = Query<HashMap<String, String>>;

fn param<'a>(q: &'a HashMap<String, String>, name: &'static str) -> Result<&'a str, ApiError> {
    q.get(name)
        .map(String::as_str)
        .ok_or_else(|| ApiError::bad_request(format!("missing query parameter `{name}`")).with_field(name))
}

fn parse_param<T: std::str::FromStr>(q: &HashMap<String, String>, name: &'static str) -> Result<T, ApiError> {
    param(q, name)?
        .trim()
        .parse()
        .map_err(|_| ApiError::bad_request(format!("query parameter `{name}` is not valid")).with_field(name))
}

fn parse_metric(q: &HashMap<String, String>) -> Result<MetricKind, ApiError> {
    param(q, "metric")?
        .parse()
        .map_err(|e: coverage_core::model::UnknownMetric| {
            ApiError::new(StatusCode::BAD_REQUEST, "bad_metric", e.to_string()).with_field("metric")
        })
}

/// Parses the comma-separated `sites` parameter and checks every id.
fn parse_sites(q: &HashMap<String, String>, state: &AppState) -> Result<BTreeSet<String>, ApiError> {
    let ids: BTreeSet<String> = param(q, "sites")?
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect();
    if ids.is_empty() {
        return Err(ApiError::from(AggregateError::NoSites).with_field("sites"));
    }
    for id in &ids {
        if !state.config.sites.iter().any(|s| &s.site_id == id) {
            return Err(ApiError::from(AggregateError::UnknownSite(id.clone())).with_field("sites"));
        }
    }
    Ok(ids)
}

fn parse_time(q: &HashMap<String, String>, name: &'static str) -> Result<Option<DateTime<Utc>>, ApiError> {
    match q.get(name) {
        None => Ok(None),
        Some(s) => parse_instant(s).map(Some).ok_or_else(|| {
            ApiError::bad_request(format!("`{name}` must be an RFC 3339 instant")).with_field(name)
        }),
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    })?
}

async fn sites(State(state): State<AppState>) -> Response {
    let latest = state.store.time_span().map(|(_, l)| l);
    let window = state.config.windows().availability;
    let body = SitesBody {
        sites: state
            .config
            .sites
            .iter()
            .map(|s| {
                let available = match (latest, state.store.last_seen(&s.site_id)) {
                    (Some(now), Some(seen)) => seen >= now - window,
                    _ => false,
                };
                SiteBody::new(s, available)
            })
            .collect(),
    };
    json_response(StatusCode::OK, &body)
}

async fn heatmap(State(state): State<AppState>, Query(q): Params) -> Result<Response, ApiError> {
    let ids = parse_sites(&q, &state)?;
    let metric = parse_metric(&q)?;
    let grid = GridSpec {
        zoom: parse_param(&q, "zoom")?,
        origin_x: parse_param(&q, "origin_x")?,
        origin_y: parse_param(&q, "origin_y")?,
        width_px: parse_param(&q, "width_px")?,
        height_px: parse_param(&q, "height_px")?,
        cell_px: parse_param(&q, "cell_px")?,
    };
    let policy = state.config.privacy();
    aggregate::check_grid(&grid, &policy).map_err(|e| match e {
        AggregateError::GridTooFine { .. } => ApiError::from(e).with_field("cell_px"),
        e => e.into(),
    })?;
    let snapshot = state
        .store
        .snapshot(&QueryFilter {
            site_ids: Some(ids.clone()),
            ..QueryFilter::all()
        })
        .map_err(store_error)?;
    let body = blocking(move || {
        let cells = aggregate::heatmap(snapshot.iter(), &ids, metric, &grid, &policy)?;
        Ok(HeatmapBody::new(metric, &grid, policy.k_min, &cells))
    })
    .await?;
    Ok(json_response(StatusCode::OK, &body))
}

async fn timeseries(State(state): State<AppState>, Query(q): Params) -> Result<Response, ApiError> {
    let ids = parse_sites(&q, &state)?;
    let metric = parse_metric(&q)?;
    let from = parse_time(&q, "from")?;
    let to = parse_time(&q, "to")?;
    if let (Some(f), Some(t)) = (from, to) {
        if f >= t {
            return Err(AggregateError::BadRange.into());
        }
    }
    let span = state.store.time_span();
    let from = from.or(span.map(|(e, _)| e));
    let to = to.or(span.map(|(_, l)| l + Duration::seconds(1)));
    let snapshot = state
        .store
        .snapshot(&QueryFilter {
            site_ids: Some(ids.clone()),
            from,
            to,
        })
        .map_err(store_error)?;
    let body = blocking(move || {
        let series = match (from, to) {
            (Some(f), Some(t)) => aggregate::timeseries(snapshot.iter(), &ids, metric, f, t)?,
            // Empty store and no explicit range: nothing to report.
            _ => ids
                .iter()
                .map(|id| aggregate::SiteSeries {
                    site_id: id.clone(),
                    points: Vec::new(),
                })
                .collect(),
        };
        Ok(TimeseriesBody {
            metric: metric.as_str(),
            unit: metric.unit(),
            from: from.as_ref().map(format_instant),
            to: to.as_ref().map(format_instant),
            series: series.into_iter().map(SeriesBody::from).collect(),
        })
    })
    .await?;
    Ok(json_response(StatusCode::OK, &body))
}

async fn site_summary(State(state): State<AppState>, Query(q): Params) -> Result<Response, ApiError> {
    let id = param(&q, "site")?.to_owned();
    if !state.config.sites.iter().any(|s| s.site_id == id) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_site",
            format!("unknown site `{id}`"),
        )
        .with_field("site"));
    }
    let latest = state.store.time_span().map(|(_, l)| l);
    let snapshot = state
        .store
        .snapshot(&QueryFilter::sites([id.clone()]))
        .map_err(store_error)?;
    let config = state.config.clone();
    let body = blocking(move || {
        let now = latest.unwrap_or(DateTime::UNIX_EPOCH);
        let summary = aggregate::site_summary(snapshot.iter(), &config.sites, &id, now, &config.windows())?;
        Ok(SummaryBody::new(summary, latest.as_ref().map(format_instant)))
    })
    .await?;
    Ok(json_response(StatusCode::OK, &body))
}

async fn ingest(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let raw: RawRecord = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("body is not a JSON object: {e}")))?;
    let store = state.store.clone();
    let sequence = blocking(move || store.ingest(&raw).map_err(ingest_error)).await?;
    Ok(json_response(StatusCode::CREATED, &IngestedBody { sequence }))
}

async fn health(State(state): State<AppState>) -> Response {
    json_response(
        StatusCode::OK,
        &HealthBody {
            status: "ok",
            records: state.store.sequence(),
        },
    )
}

fn ingest_error(e: IngestError) -> ApiError {
    match &e {
        IngestError::Invalid(v) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, v.code(), e.to_string()).with_field(v.field())
        }
        IngestError::UnknownSite(_) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_site", e.to_string()).with_field("site_id")
        }
        IngestError::Io(_) => {
            tracing::error!("ingest failed: {e}");
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", "record could not be stored")
        }
    }
}

fn store_error(e: StoreError) -> ApiError {
    match e {
        StoreError::BadRange => AggregateError::BadRange.into(),
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", other.to_string()),
    }
}
