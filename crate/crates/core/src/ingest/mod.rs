//! Loading, aggregating, joining and cleaning heterogeneous county tables.
//!
//! The flow is `load_table` → (`aggregate_by_crosswalk` for zip / point keyed
//! tables) → `join_on_fips` → `drop_sparse_columns` → `filter_sparse_rows` →
//! `impute_median`.

mod clean;
mod crosswalk;
mod descriptor;
mod master;
mod table;

use std::path::PathBuf;

use thiserror::Error;

pub use clean::{
    drop_sparse_columns, filter_sparse_rows, impute_median, DroppedColumn, Imputed, RowFilterReport,
};
pub use crosswalk::{aggregate_by_crosswalk, AggregateReport, Crosswalk, CrosswalkEntry};
pub use descriptor::{
    Aggregation, CategoricalEncoding, ColumnKind, ColumnSpec, DatasetDescriptor, KeySpec,
};
pub use master::{
    join_on_fips, read_master, write_master, CountyRecord, DataDictionary, DedupEntry,
    FeatureColumn, FeatureMeta, JoinReport, MasterTable, DICTIONARY_FILE, MASTER_FILE,
};
pub use table::{load_table, normalize_fips, IdentifierColumn, KeyKind, RawColumn, RawTable};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: header is missing declared columns: {missing:?}")]
    HeaderMismatch { path: PathBuf, missing: Vec<String> },
    #[error("{0}: table has no data rows")]
    EmptyTable(PathBuf),
    #[error("invalid descriptor {id}: {reason}")]
    InvalidDescriptor { id: String, reason: String },
    #[error("invalid crosswalk: {0}")]
    InvalidCrosswalk(String),
    #[error("dataset {0}: no keys matched the crosswalk")]
    NoOverlap(String),
    #[error("dataset {id} is keyed by {kind:?}; expected {expected:?}")]
    WrongKeyKind {
        id: String,
        kind: KeyKind,
        expected: KeyKind,
    },
    #[error("no tables to join")]
    NoTables,
    #[error("threshold {0} must lie in (0, 1]")]
    InvalidThreshold(f64),
    #[error("every column exceeded the missing-value threshold")]
    AllColumnsDropped,
    #[error("only {survivors} rows survived the row filter; at least {required} required")]
    TooFewRows { survivors: usize, required: usize },
    #[error("column {0} has no present values")]
    EmptyColumn(String),
    #[error("master table: {0}")]
    MalformedMaster(String),
    #[error(transparent)]
    Matrix(#[from] crate::matrix::MatrixError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
