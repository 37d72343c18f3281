//! County-level clustering analytics.
//!
//! Fuses county tables keyed by FIPS into a master table, standardizes and
//! reduces the features with PCA, clusters counties with k-means, and
//! explains the clusters through per-feature within-cluster sum of squares,
//! per-cluster profiles and state distributions. The results are persisted as
//! an [`bundle::AnalysisBundle`] directory that the HTTP service reads.

pub mod bundle;
pub mod cluster;
pub mod config;
pub mod ingest;
pub mod interpret;
pub mod linalg;
pub mod matrix;
pub mod pca;
pub mod pipeline;
pub mod preprocess;
pub mod synth;

pub use matrix::FeatureMatrix;

use thiserror::Error;

/// Umbrella error for the end-to-end pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Preprocess(#[from] preprocess::PreprocessError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Pca(#[from] pca::PcaError),
    #[error(transparent)]
    Cluster(#[from] cluster::ClusterError),
    #[error(transparent)]
    Interpret(#[from] interpret::InterpretError),
    #[error(transparent)]
    Bundle(#[from] bundle::BundleError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Matrix(#[from] matrix::MatrixError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
