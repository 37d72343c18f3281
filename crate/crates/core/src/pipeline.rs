//! End-to-end runs: ingest, clean, standardize, reduce, sweep, fit, explain.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::info;

use crate::bundle::{AnalysisBundle, ClusterArtifact, RunMeta};
use crate::cluster::{fit_best, silhouette, sweep_k, ClusterModel, KSweepReport, SweepParams};
use crate::config::{ClusterSpace, ConfigError, RunConfig};
use crate::ingest::{
    aggregate_by_crosswalk, drop_sparse_columns, filter_sparse_rows, impute_median, join_on_fips,
    load_table, write_master, AggregateReport, Crosswalk, DatasetDescriptor, DroppedColumn,
    JoinReport, KeyKind, MasterTable, RowFilterReport,
};
use crate::interpret::{build_report, Membership, ReportInputs};
use crate::matrix::FeatureMatrix;
use crate::pca::{pca_fit, PcaModel, Retention};
use crate::preprocess::{zscore, ScalerStats};
use crate::Result;

pub const CLEANING_FILE: &str = "cleaning.json";
const BIPLOT_TOP: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub key_kind: KeyKind,
    pub rows: usize,
    pub columns: usize,
    pub parse_warnings: usize,
    pub skipped_keys: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CleaningReport {
    pub datasets: Vec<DatasetSummary>,
    pub aggregation: Vec<AggregateReport>,
    pub join: JoinReport,
    pub dropped_columns: Vec<DroppedColumn>,
    pub row_filter: RowFilterReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    /// After the column drop, every county.
    pub master: MasterTable,
    /// After the row filter: the counties that get clustered.
    pub clustered: MasterTable,
    pub report: CleaningReport,
    /// SHA-256 over the descriptor list, every source file and the crosswalk.
    pub input_digest: String,
}

/// Reads a JSON array of descriptors; relative dataset paths are resolved
/// against the descriptor file's directory.
pub fn load_descriptors(path: &Path) -> Result<Vec<DatasetDescriptor>> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut descriptors: Vec<DatasetDescriptor> =
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
    if descriptors.is_empty() {
        return Err(ConfigError::NoDatasets(path.to_path_buf()).into());
    }
    let base = path.parent().unwrap_or(Path::new("."));
    for d in &mut descriptors {
        d.path = base.join(&d.path);
    }
    Ok(descriptors)
}

pub fn run_ingest(cfg: &RunConfig) -> Result<IngestOutput> {
    let mut descriptors = load_descriptors(&cfg.descriptors)?;
    descriptors.sort_by(|a, b| a.id.cmp(&b.id));

    let mut digest = Sha256::new();
    digest.update(std::fs::read(&cfg.descriptors)?);

    let crosswalk = match &cfg.crosswalk {
        Some(path) => {
            digest.update(std::fs::read(path).unwrap_or_default());
            Some(Crosswalk::load(path)?)
        }
        None => None,
    };

    let mut tables = Vec::with_capacity(descriptors.len());
    let mut datasets = Vec::with_capacity(descriptors.len());
    let mut aggregation = Vec::new();
    for d in &descriptors {
        let table = load_table(d)?;
        digest.update(std::fs::read(&d.path)?);
        datasets.push(DatasetSummary {
            id: table.dataset_id.clone(),
            key_kind: table.key_kind,
            rows: table.len(),
            columns: table.columns.len(),
            parse_warnings: table.parse_warnings,
            skipped_keys: table.skipped_keys,
        });
        let table = if table.key_kind == KeyKind::Fips {
            table
        } else {
            let cw = crosswalk
                .as_ref()
                .ok_or_else(|| ConfigError::MissingCrosswalk(d.id.clone()))?;
            let (table, report) = aggregate_by_crosswalk(&table, cw)?;
            aggregation.push(report);
            table
        };
        tables.push(table);
    }

    let (joined, join) = join_on_fips(&tables)?;
    let (master, dropped_columns) = drop_sparse_columns(joined, cfg.column_threshold)?;
    let (clustered, row_filter) =
        filter_sparse_rows(master.clone(), cfg.row_threshold, cfg.k_max.max(1) + 1)?;
    info!(
        counties = master.n_rows(),
        clustered = clustered.n_rows(),
        features = master.features().len(),
        "ingest complete"
    );
    Ok(IngestOutput {
        master,
        clustered,
        report: CleaningReport {
            datasets,
            aggregation,
            join,
            dropped_columns,
            row_filter,
        },
        input_digest: hex::encode(digest.finalize()),
    })
}

/// Writes `master.csv`, `dictionary.json` and `cleaning.json`.
pub fn write_ingest(output: &IngestOutput, dir: &Path) -> Result<()> {
    write_master(&output.master, dir)?;
    let mut json = serde_json::to_string_pretty(&output.report)?;
    json.push('\n');
    std::fs::write(dir.join(CLEANING_FILE), json)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSettings {
    pub variance_target: f64,
    pub cluster_space: ClusterSpace,
    pub sweep: SweepParams,
    /// Overrides the elbow recommendation.
    pub k: Option<usize>,
}

impl From<&RunConfig> for ClusterSettings {
    fn from(cfg: &RunConfig) -> Self {
        Self {
            variance_target: cfg.variance_target,
            cluster_space: cfg.cluster_space,
            sweep: cfg.sweep(),
            k: cfg.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRun {
    pub scaler: ScalerStats,
    pub standardized: FeatureMatrix,
    pub pca: PcaModel,
    /// The matrix k-means ran on.
    pub clustered: FeatureMatrix,
    pub sweep: KSweepReport,
    pub model: ClusterModel,
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reduced {
    pub scaler: ScalerStats,
    pub standardized: FeatureMatrix,
    pub pca: PcaModel,
    /// The matrix k-means runs on.
    pub clustered: FeatureMatrix,
}

/// Standardize and fit PCA on a dense matrix.
pub fn reduce(raw: &FeatureMatrix, variance_target: f64, space: ClusterSpace) -> Result<Reduced> {
    let (standardized, scaler) = zscore(raw)?;
    let pca = pca_fit(&standardized, Retention::VarianceTarget(variance_target))?;
    let clustered = match space {
        ClusterSpace::Pca => pca.project(&standardized)?,
        ClusterSpace::Standardized => standardized.clone(),
    };
    Ok(Reduced {
        scaler,
        standardized,
        pca,
        clustered,
    })
}

/// Ingest, impute, reduce and sweep k without fitting a final model.
pub fn run_sweep(cfg: &RunConfig) -> Result<KSweepReport> {
    let ingest = run_ingest(cfg)?;
    let imputed = impute_median(&ingest.clustered)?;
    let reduced = reduce(&imputed.matrix, cfg.variance_target, cfg.cluster_space)?;
    Ok(sweep_k(reduced.clustered.values(), &cfg.sweep())?)
}

/// Standardize, fit PCA, sweep k and fit the final model on a dense matrix.
pub fn cluster_matrix(raw: &FeatureMatrix, settings: &ClusterSettings) -> Result<ClusterRun> {
    let Reduced {
        scaler,
        standardized,
        pca,
        clustered,
    } = reduce(raw, settings.variance_target, settings.cluster_space)?;
    info!(
        features = standardized.n_cols(),
        components = pca.n_components(),
        "sweeping k"
    );
    let sweep = sweep_k(clustered.values(), &settings.sweep)?;
    let k = settings.k.unwrap_or(sweep.recommended_k);
    let s = &settings.sweep;
    let model = fit_best(clustered.values(), k, s.restarts, s.seed, &s.lloyd)?;
    let silhouette = if k >= 2 {
        Some(silhouette(clustered.values(), &model.assignments)?.mean)
    } else {
        None
    };
    info!(k, inertia = model.inertia, "final model fitted");
    Ok(ClusterRun {
        scaler,
        standardized,
        pca,
        clustered,
        sweep,
        model,
        silhouette,
    })
}

/// Clusters the ingested counties and assembles the bundle.
pub fn run_cluster(cfg: &RunConfig, ingest: IngestOutput) -> Result<AnalysisBundle> {
    let imputed = impute_median(&ingest.clustered)?;
    let mut run = cluster_matrix(&imputed.matrix, &ClusterSettings::from(cfg))?;
    run.scaler.set_fill_values(
        imputed
            .matrix
            .col_names()
            .iter()
            .map(String::as_str)
            .zip(imputed.medians.iter().copied()),
    );

    let membership = Membership::new(run.clustered.row_ids(), &run.model);
    let report = build_report(&ReportInputs {
        master: &ingest.master,
        membership: &membership,
        model: &run.model,
        clustered: &run.clustered,
        standardized: &run.standardized,
        pca: &run.pca,
        outcomes: &cfg.outcome_features,
        state_threshold: cfg.state_flag_threshold,
        biplot_top: BIPLOT_TOP,
    })?;

    let display_features = if cfg.display_features.is_empty() {
        ingest
            .master
            .feature_names()
            .into_iter()
            .map(str::to_string)
            .collect()
    } else {
        cfg.display_features.clone()
    };
    let meta = RunMeta {
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        input_digest: ingest.input_digest,
        parameters: cfg.result_params(),
        k: run.model.k,
        recommended_k: run.sweep.recommended_k,
        n_counties: ingest.master.n_rows(),
        n_clustered: membership.fips.len(),
        display_features,
        cleaning: ingest.report,
        created_at: None,
    };
    let bundle = AnalysisBundle {
        master: ingest.master,
        scaler: run.scaler,
        pca: run.pca,
        clusters: ClusterArtifact {
            cluster_space: cfg.cluster_space,
            row_ids: membership.fips,
            model: run.model,
            silhouette: run.silhouette,
            sweep: run.sweep,
        },
        report,
        meta,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Ingest followed by clustering.
pub fn run(cfg: &RunConfig) -> Result<AnalysisBundle> {
    let ingest = run_ingest(cfg)?;
    run_cluster(cfg, ingest)
}
