//! K-means clustering, model-selection diagnostics and an exhaustive oracle.

mod kmeans;
mod metrics;
mod oracle;
mod silhouette;
mod sweep;

use thiserror::Error;

pub use kmeans::{
    derive_seed, fit_best, inertia, kmeans_pp_init, lloyd, ClusterModel, LloydParams,
};
pub use metrics::adjusted_rand_index;
pub use oracle::{exact_oracle, OracleSolution, MAX_ORACLE_ROWS};
pub use silhouette::{silhouette, Silhouette};
pub use sweep::{elbow_point, sweep_k, Elbow, KSweepReport, SweepEntry, SweepParams};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("k = {k} exceeds the {distinct} distinct rows")]
    KTooLarge { k: usize, distinct: usize },
    #[error("centroids have {got} columns, data has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("invalid k range {k_min}..={k_max} for {n_rows} rows")]
    KRangeInvalid {
        k_min: usize,
        k_max: usize,
        n_rows: usize,
    },
    #[error("elbow detection needs at least 3 sweep entries, got {0}")]
    TooFewEntries(usize),
    #[error("exhaustive search is limited to {MAX_ORACLE_ROWS} rows, got {0}")]
    TooManyRows(usize),
}
