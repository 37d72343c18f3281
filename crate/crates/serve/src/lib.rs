//! Read-only HTTP JSON API over an analysis bundle, plus static assets for
//! the map explorer under `/ui/`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;
use tracing::info;

use countylens_core::bundle::{
    export_assignments, filter_distribution, AnalysisBundle, Assignments, BundleError, FilterOp,
};
use countylens_core::interpret::{
    county_gap, scatter_pairs, ClusterProfile, FeatureImportance, InterpretError, Membership,
    PcaScore, PerformanceLabeling,
};
use countylens_core::pca::BiplotLoading;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("bundle directory {0} not found")]
    BundleNotFound(PathBuf),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads and validates a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<AnalysisBundle, ServeError> {
    match AnalysisBundle::read(dir) {
        Err(BundleError::NotFound(p)) => Err(ServeError::BundleNotFound(p)),
        other => Ok(other?),
    }
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServeError::PortInUse(addr.port())
        } else {
            ServeError::Io(e)
        }
    })
}

/// Serves until the process is stopped.
pub async fn serve(listener: TcpListener, app: Router) -> Result<(), ServeError> {
    info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, app).await?;
    Ok(())
}

struct AppState {
    bundle: AnalysisBundle,
    membership: Membership,
    assignments: Assignments,
}

type Shared = State<Arc<AppState>>;

/// Builds the API router. `ui_dir`, when given, is served under `/ui/`.
pub fn router(bundle: AnalysisBundle, ui_dir: Option<&Path>) -> Result<Router, ServeError> {
    let assignments = export_assignments(&bundle)?;
    let state = Arc::new(AppState {
        membership: bundle.membership(),
        bundle,
        assignments,
    });
    let api = Router::new()
        .route("/meta", get(meta))
        .route("/clusters", get(clusters))
        .route("/features", get(features))
        .route("/county/{fips}", get(county))
        .route("/distribution", get(distribution))
        .route("/scatter", get(scatter))
        .route("/importance", get(importance))
        .route("/profile", get(profile))
        .route("/states", get(states))
        .route("/gap", get(gap))
        .route("/pca", get(pca))
        .route("/assignments", get(assignments_handler))
        .fallback(not_found)
        .with_state(state);
    let mut app = Router::new().nest("/api", api);
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    Ok(app.fallback(not_found))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<BundleError> for ApiError {
    fn from(e: BundleError) -> Self {
        let (status, code) = match &e {
            BundleError::UnknownFeature(_) => (StatusCode::NOT_FOUND, "unknown_feature"),
            BundleError::UnknownCounty(_) => (StatusCode::NOT_FOUND, "unknown_county"),
            BundleError::BadOperator(_) => (StatusCode::BAD_REQUEST, "bad_operator"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl From<InterpretError> for ApiError {
    fn from(e: InterpretError) -> Self {
        let (status, code) = match &e {
            InterpretError::UnknownFeature(_) => (StatusCode::NOT_FOUND, "unknown_feature"),
            InterpretError::UnknownCounty(_) => (StatusCode::NOT_FOUND, "unknown_county"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self {
            status,
            code,
            message: e.to_string(),
        }
    }
}

type Params = Query<HashMap<String, String>>;

fn param<'a>(params: &'a HashMap<String, String>, name: &str) -> Result<&'a str, ApiError> {
    params
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| ApiError::bad_request(format!("missing query parameter {name:?}")))
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such endpoint".into(),
    }
}

async fn meta(State(s): Shared) -> Response {
    Json(&s.bundle.meta).into_response()
}

async fn clusters(State(s): Shared) -> Response {
    Json(s.bundle.cluster_summary()).into_response()
}

async fn features(State(s): Shared) -> Response {
    Json(s.bundle.feature_summaries()).into_response()
}

async fn county(State(s): Shared, UrlPath(fips): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(s.bundle.county(&fips)?).into_response())
}

async fn distribution(State(s): Shared, Query(q): Params) -> Result<Response, ApiError> {
    let feature = param(&q, "feature")?;
    let op: FilterOp = param(&q, "op")?.parse()?;
    let raw = param(&q, "threshold")?;
    let threshold: f64 = raw
        .parse()
        .ok()
        .filter(|t: &f64| !t.is_nan())
        .ok_or_else(|| ApiError::bad_request(format!("threshold {raw:?} is not a number")))?;
    Ok(Json(filter_distribution(&s.bundle, feature, op, threshold)?).into_response())
}

async fn scatter(State(s): Shared, Query(q): Params) -> Result<Response, ApiError> {
    let x = param(&q, "x")?;
    let y = param(&q, "y")?;
    Ok(Json(scatter_pairs(&s.bundle.master, &s.membership, x, y)?).into_response())
}

#[derive(Serialize)]
struct ImportanceView<'a> {
    method: &'a str,
    importance: &'a FeatureImportance,
    post_hoc_importance: Option<&'a FeatureImportance>,
}

async fn importance(State(s): Shared) -> Response {
    let report = &s.bundle.report;
    Json(ImportanceView {
        method: &report.method,
        importance: &report.importance,
        post_hoc_importance: report.post_hoc_importance.as_ref(),
    })
    .into_response()
}

#[derive(Serialize)]
struct ProfileView<'a> {
    profile: &'a ClusterProfile,
    labeling: Option<&'a PerformanceLabeling>,
    skipped_outcomes: &'a [String],
}

async fn profile(State(s): Shared) -> Response {
    let report = &s.bundle.report;
    Json(ProfileView {
        profile: &report.profile,
        labeling: report.labeling.as_ref(),
        skipped_outcomes: &report.skipped_outcomes,
    })
    .into_response()
}

async fn states(State(s): Shared) -> Response {
    Json(&s.bundle.report.states).into_response()
}

async fn gap(State(s): Shared, Query(q): Params) -> Result<Response, ApiError> {
    let a = param(&q, "a")?;
    let b = param(&q, "b")?;
    Ok(Json(county_gap(&s.bundle.master, a, b, &s.bundle.scaler)?).into_response())
}

#[derive(Serialize)]
struct PcaView<'a> {
    feature_names: &'a [String],
    eigenvalues: &'a [f64],
    explained_variance_ratio: &'a [f64],
    biplot: &'a [BiplotLoading],
    scores: &'a [PcaScore],
}

async fn pca(State(s): Shared) -> Response {
    let b = &s.bundle;
    Json(PcaView {
        feature_names: &b.pca.feature_names,
        eigenvalues: &b.pca.eigenvalues,
        explained_variance_ratio: &b.pca.explained_variance_ratio,
        biplot: &b.report.biplot,
        scores: &b.report.pca_scores,
    })
    .into_response()
}

async fn assignments_handler(State(s): Shared) -> Response {
    Json(&s.assignments).into_response()
}
