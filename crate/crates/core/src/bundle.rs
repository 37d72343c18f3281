//! The persisted result of a run and the read-only queries served over it.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterModel, KSweepReport};
use crate::config::{ClusterSpace, ResultParams};
use crate::ingest::{read_master, write_master, IngestError, MasterTable, DICTIONARY_FILE, MASTER_FILE};
use crate::interpret::{InterpretationReport, Membership};
use crate::pca::PcaModel;
use crate::pipeline::CleaningReport;
use crate::preprocess::ScalerStats;

pub const SCALER_FILE: &str = "scaler.json";
pub const PCA_FILE: &str = "pca.json";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const REPORT_FILE: &str = "report.json";
pub const META_FILE: &str = "meta.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const ASSIGNMENTS_FILE: &str = "assignments.json";

const REQUIRED_FILES: [&str; 7] = [
    MASTER_FILE,
    DICTIONARY_FILE,
    SCALER_FILE,
    PCA_FILE,
    CLUSTERS_FILE,
    REPORT_FILE,
    META_FILE,
];

/// Number of most extreme standardized features reported per county.
const COUNTY_EXTREMES: usize = 3;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bundle directory {0} not found")]
    NotFound(PathBuf),
    #[error("bundle {dir} is missing {missing:?}")]
    Incomplete { dir: PathBuf, missing: Vec<String> },
    #[error("bundle is inconsistent: {0}")]
    Inconsistent(String),
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("unknown county {0}")]
    UnknownCounty(String),
    #[error("unknown operator {0:?}; expected gte or lte")]
    BadOperator(String),
    #[error("{file}: {source}")]
    Parse {
        file: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub cluster_space: ClusterSpace,
    /// FIPS of the clustered counties, aligned with `model.assignments`.
    pub row_ids: Vec<String>,
    pub model: ClusterModel,
    pub silhouette: Option<f64>,
    pub sweep: KSweepReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub engine_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub input_digest: String,
    pub parameters: ResultParams,
    pub k: usize,
    pub recommended_k: usize,
    pub n_counties: usize,
    pub n_clustered: usize,
    pub display_features: Vec<String>,
    pub cleaning: CleaningReport,
    /// Seconds since the Unix epoch. Only recorded on request, since it would
    /// make otherwise identical runs differ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisBundle {
    /// Every county after the column drop, including the ones the row
    /// filter kept out of clustering.
    pub master: MasterTable,
    pub scaler: ScalerStats,
    pub pca: PcaModel,
    pub clusters: ClusterArtifact,
    pub report: InterpretationReport,
    pub meta: RunMeta,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BundleError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(dir: &Path, file: &str) -> Result<T, BundleError> {
    let reader = BufReader::new(File::open(dir.join(file))?);
    serde_json::from_reader(reader).map_err(|source| BundleError::Parse {
        file: file.to_string(),
        source,
    })
}

impl AnalysisBundle {
    pub fn write(&self, dir: &Path) -> Result<(), BundleError> {
        std::fs::create_dir_all(dir)?;
        write_master(&self.master, dir)?;
        write_json(&dir.join(SCALER_FILE), &self.scaler)?;
        write_json(&dir.join(PCA_FILE), &self.pca)?;
        write_json(&dir.join(CLUSTERS_FILE), &self.clusters)?;
        write_json(&dir.join(REPORT_FILE), &self.report)?;
        write_json(&dir.join(META_FILE), &self.meta)?;
        std::fs::write(dir.join(SWEEP_FILE), self.clusters.sweep.to_csv())?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, BundleError> {
        if !dir.is_dir() {
            return Err(BundleError::NotFound(dir.to_path_buf()));
        }
        let missing: Vec<String> = REQUIRED_FILES
            .iter()
            .filter(|f| !dir.join(f).is_file())
            .map(|f| f.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(BundleError::Incomplete {
                dir: dir.to_path_buf(),
                missing,
            });
        }
        let bundle = Self {
            master: read_master(dir)?,
            scaler: read_json(dir, SCALER_FILE)?,
            pca: read_json(dir, PCA_FILE)?,
            clusters: read_json(dir, CLUSTERS_FILE)?,
            report: read_json(dir, REPORT_FILE)?,
            meta: read_json(dir, META_FILE)?,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Checks that every part refers to the same counties and features.
    pub fn validate(&self) -> Result<(), BundleError> {
        let c = &self.clusters;
        if c.row_ids.len() != c.model.assignments.len() {
            return Err(BundleError::Inconsistent(format!(
                "{} clustered counties but {} assignments",
                c.row_ids.len(),
                c.model.assignments.len()
            )));
        }
        let mut seen = HashSet::new();
        for fips in &c.row_ids {
            if !seen.insert(fips) {
                return Err(BundleError::Inconsistent(format!("county {fips} clustered twice")));
            }
            if self.master.row_index(fips).is_none() {
                return Err(BundleError::Inconsistent(format!(
                    "clustered county {fips} is not in the master table"
                )));
            }
        }
        for name in self.scaler.names().iter().chain(&self.meta.display_features) {
            if self.master.feature(name).is_none() {
                return Err(BundleError::Inconsistent(format!(
                    "feature {name} is not in the master table"
                )));
            }
        }
        if self.pca.feature_names != self.scaler.names() {
            return Err(BundleError::Inconsistent(
                "pca and scaler disagree on features".into(),
            ));
        }
        Ok(())
    }

    pub fn membership(&self) -> Membership {
        Membership::new(&self.clusters.row_ids, &self.clusters.model)
    }

    pub fn cluster_of(&self, fips: &str) -> Option<usize> {
        let i = self.clusters.row_ids.iter().position(|f| f == fips)?;
        Some(self.clusters.model.assignments[i])
    }

    fn label_name(&self, cluster: usize) -> Option<String> {
        self.report
            .label_of(cluster)
            .map(|l| l.as_str().to_string())
    }

    pub fn cluster_summary(&self) -> ClusterSummary {
        let model = &self.clusters.model;
        ClusterSummary {
            k: model.k,
            recommended_k: self.clusters.sweep.recommended_k,
            cluster_space: self.clusters.cluster_space,
            labels: (0..model.k).map(|c| self.label_name(c)).collect(),
            sizes: model.sizes(),
            inertia: model.inertia,
            silhouette: self.clusters.silhouette,
        }
    }

    /// Range and coverage of every master feature over the clustered
    /// counties.
    pub fn feature_summaries(&self) -> Vec<FeatureSummary> {
        let rows: Vec<usize> = self
            .clusters
            .row_ids
            .iter()
            .filter_map(|f| self.master.row_index(f))
            .collect();
        self.master
            .features()
            .iter()
            .map(|f| {
                let present: Vec<f64> = rows.iter().filter_map(|&r| f.values[r]).collect();
                FeatureSummary {
                    name: f.name.clone(),
                    source: f.source.clone(),
                    units: f.units.clone(),
                    min: present.iter().copied().reduce(f64::min),
                    max: present.iter().copied().reduce(f64::max),
                    missing: rows.len() - present.len(),
                    standardized: self.scaler.column(&f.name).is_some(),
                }
            })
            .collect()
    }

    pub fn county(&self, fips: &str) -> Result<CountyDetail, BundleError> {
        let row = self
            .master
            .row_index(fips)
            .ok_or_else(|| BundleError::UnknownCounty(fips.to_string()))?;
        let record = &self.master.counties()[row];
        let cluster = self.cluster_of(fips);
        let values = self
            .master
            .features()
            .iter()
            .map(|f| (f.name.clone(), f.values[row]))
            .collect();
        let mut extremes: Vec<Extreme> = self
            .scaler
            .columns
            .iter()
            .filter_map(|c| {
                let raw = self.master.feature(&c.name)?.values[row]?;
                Some(Extreme {
                    feature: c.name.clone(),
                    z: (raw - c.mean) / c.std,
                    raw,
                })
            })
            .collect();
        extremes.sort_by(|a, b| {
            b.z.abs()
                .total_cmp(&a.z.abs())
                .then_with(|| a.feature.cmp(&b.feature))
        });
        extremes.truncate(COUNTY_EXTREMES);
        Ok(CountyDetail {
            fips: record.fips.clone(),
            state: record.state.clone(),
            county_name: record.county_name.clone(),
            cluster,
            performance_label: cluster.and_then(|c| self.label_name(c)),
            reason: cluster.is_none().then(|| FILTERED.to_string()),
            values,
            extremes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub recommended_k: usize,
    pub cluster_space: ClusterSpace,
    /// Performance label per cluster.
    pub labels: Vec<Option<String>>,
    pub sizes: Vec<usize>,
    pub inertia: f64,
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub name: String,
    pub source: String,
    pub units: Option<String>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Clustered counties without a value.
    pub missing: usize,
    /// Whether the feature entered clustering (not constant).
    pub standardized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extreme {
    pub feature: String,
    pub z: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyDetail {
    pub fips: String,
    pub state: String,
    pub county_name: String,
    pub cluster: Option<usize>,
    pub performance_label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub values: BTreeMap<String, Option<f64>>,
    /// Features with the largest |z|, at most three.
    pub extremes: Vec<Extreme>,
}

const FILTERED: &str = "filtered";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub cluster: Option<usize>,
    pub performance_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub state: String,
    pub county_name: String,
    pub values: BTreeMap<String, Option<f64>>,
}

/// Choropleth export keyed by FIPS in ascending order.
pub type Assignments = BTreeMap<String, AssignmentEntry>;

/// One entry per master county; counties the row filter excluded carry a
/// null cluster and reason `"filtered"`.
pub fn export_assignments(bundle: &AnalysisBundle) -> Result<Assignments, BundleError> {
    bundle.validate()?;
    let display: Vec<usize> = bundle
        .meta
        .display_features
        .iter()
        .map(|name| {
            bundle
                .master
                .feature_index(name)
                .ok_or_else(|| BundleError::UnknownFeature(name.clone()))
        })
        .collect::<Result<_, _>>()?;
    let clusters: BTreeMap<&str, usize> = bundle
        .clusters
        .row_ids
        .iter()
        .map(String::as_str)
        .zip(bundle.clusters.model.assignments.iter().copied())
        .collect();
    Ok(bundle
        .master
        .counties()
        .iter()
        .enumerate()
        .map(|(row, c)| {
            let cluster = clusters.get(c.fips.as_str()).copied();
            let values = display
                .iter()
                .map(|&j| {
                    let f = &bundle.master.features()[j];
                    (f.name.clone(), f.values[row])
                })
                .collect();
            let entry = AssignmentEntry {
                cluster,
                performance_label: cluster.and_then(|k| bundle.label_name(k)),
                reason: cluster.is_none().then(|| FILTERED.to_string()),
                state: c.state.clone(),
                county_name: c.county_name.clone(),
                values,
            };
            (c.fips.clone(), entry)
        })
        .collect())
}

pub fn assignments_json(assignments: &Assignments) -> Result<String, BundleError> {
    let mut json = serde_json::to_string_pretty(assignments)?;
    json.push('\n');
    Ok(json)
}

/// Writes `assignments.json` into `dir`.
pub fn write_assignments(bundle: &AnalysisBundle, dir: &Path) -> Result<PathBuf, BundleError> {
    let json = assignments_json(&export_assignments(bundle)?)?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join(ASSIGNMENTS_FILE);
    std::fs::write(&path, json)?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterOp {
    Gte,
    Lte,
}

impl FilterOp {
    pub fn test(self, value: f64, threshold: f64) -> bool {
        match self {
            FilterOp::Gte => value >= threshold,
            FilterOp::Lte => value <= threshold,
        }
    }
}

impl FromStr for FilterOp {
    type Err = BundleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gte" => Ok(FilterOp::Gte),
            "lte" => Ok(FilterOp::Lte),
            other => Err(BundleError::BadOperator(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub feature: String,
    pub op: FilterOp,
    pub threshold: f64,
    /// Clustered counties passing the filter, per cluster.
    pub counts: Vec<usize>,
    /// Clustered counties without a value for the feature.
    pub missing: usize,
    pub total: usize,
}

pub fn filter_distribution(
    bundle: &AnalysisBundle,
    feature: &str,
    op: FilterOp,
    threshold: f64,
) -> Result<Distribution, BundleError> {
    let column = bundle
        .master
        .feature(feature)
        .ok_or_else(|| BundleError::UnknownFeature(feature.to_string()))?;
    let mut counts = vec![0; bundle.clusters.model.k];
    let mut missing = 0;
    for (fips, &cluster) in bundle
        .clusters
        .row_ids
        .iter()
        .zip(&bundle.clusters.model.assignments)
    {
        let row = bundle
            .master
            .row_index(fips)
            .ok_or_else(|| BundleError::UnknownCounty(fips.clone()))?;
        match column.values[row] {
            Some(v) if op.test(v, threshold) => counts[cluster] += 1,
            Some(_) => {}
            None => missing += 1,
        }
    }
    Ok(Distribution {
        feature: feature.to_string(),
        op,
        threshold,
        counts,
        missing,
        total: bundle.clusters.row_ids.len(),
    })
}
