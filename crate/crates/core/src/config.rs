//! Run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{LloydParams, SweepParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("no datasets listed in {0}")]
    NoDatasets(PathBuf),
    #[error("dataset {0} needs a crosswalk but none is configured")]
    MissingCrosswalk(String),
}

/// Space k-means runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSpace {
    /// Retained principal component scores.
    #[default]
    Pca,
    /// All standardized features.
    Standardized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeFeature {
    pub name: String,
    #[serde(default = "yes")]
    pub lower_is_better: bool,
}

fn yes() -> bool {
    true
}

fn default_outcomes() -> Vec<OutcomeFeature> {
    ["positivity_rate", "cases_per_person", "deaths_per_person"]
        .into_iter()
        .map(|name| OutcomeFeature {
            name: name.into(),
            lower_is_better: true,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// JSON array of dataset descriptors.
    pub descriptors: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crosswalk: Option<PathBuf>,
    #[serde(default = "RunConfig::default_column_threshold")]
    pub column_threshold: f64,
    #[serde(default = "RunConfig::default_row_threshold")]
    pub row_threshold: f64,
    #[serde(default = "RunConfig::default_variance_target")]
    pub variance_target: f64,
    #[serde(default = "RunConfig::default_k_min")]
    pub k_min: usize,
    #[serde(default = "RunConfig::default_k_max")]
    pub k_max: usize,
    #[serde(default = "RunConfig::default_restarts")]
    pub restarts: usize,
    pub seed: u64,
    #[serde(default = "default_outcomes")]
    pub outcome_features: Vec<OutcomeFeature>,
    #[serde(default = "RunConfig::default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cluster_space: ClusterSpace,
    /// Final cluster count; the elbow recommendation when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default = "RunConfig::default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "RunConfig::default_tol")]
    pub tol: f64,
    /// Features carried into the assignment export; every feature when empty.
    #[serde(default)]
    pub display_features: Vec<String>,
    #[serde(default = "RunConfig::default_state_flag_threshold")]
    pub state_flag_threshold: f64,
}

/// The parameters that influence results. Hashed into the bundle metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultParams {
    pub column_threshold: f64,
    pub row_threshold: f64,
    pub variance_target: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub seed: u64,
    pub outcome_features: Vec<OutcomeFeature>,
    pub cluster_space: ClusterSpace,
    pub k: Option<usize>,
    pub max_iter: usize,
    pub tol: f64,
    pub display_features: Vec<String>,
    pub state_flag_threshold: f64,
}

impl RunConfig {
    fn default_column_threshold() -> f64 {
        0.5
    }
    fn default_row_threshold() -> f64 {
        0.25
    }
    fn default_variance_target() -> f64 {
        0.90
    }
    fn default_k_min() -> usize {
        2
    }
    fn default_k_max() -> usize {
        20
    }
    fn default_restarts() -> usize {
        10
    }
    fn default_output_dir() -> PathBuf {
        PathBuf::from("out")
    }
    fn default_max_iter() -> usize {
        LloydParams::default().max_iter
    }
    fn default_tol() -> f64 {
        LloydParams::default().tol
    }
    fn default_state_flag_threshold() -> f64 {
        0.6
    }

    /// Defaults for everything except the inputs and seed.
    pub fn new(descriptors: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            descriptors: descriptors.into(),
            crosswalk: None,
            column_threshold: Self::default_column_threshold(),
            row_threshold: Self::default_row_threshold(),
            variance_target: Self::default_variance_target(),
            k_min: Self::default_k_min(),
            k_max: Self::default_k_max(),
            restarts: Self::default_restarts(),
            seed,
            outcome_features: default_outcomes(),
            output_dir: Self::default_output_dir(),
            cluster_space: ClusterSpace::default(),
            k: None,
            max_iter: Self::default_max_iter(),
            tol: Self::default_tol(),
            display_features: Vec::new(),
            state_flag_threshold: Self::default_state_flag_threshold(),
        }
    }

    /// Reads a JSON config. Relative paths are resolved against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.descriptors = base.join(&cfg.descriptors);
        cfg.crosswalk = cfg.crosswalk.map(|c| base.join(c));
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} = {v} must lie in (0, 1]")))
            }
        };
        unit("column_threshold", self.column_threshold)?;
        unit("row_threshold", self.row_threshold)?;
        unit("variance_target", self.variance_target)?;
        unit("state_flag_threshold", self.state_flag_threshold)?;
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(ConfigError::Invalid(format!(
                "k range {}..={} is empty or starts at 0",
                self.k_min, self.k_max
            )));
        }
        if self.k == Some(0) {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(ConfigError::Invalid(
                "restarts and max_iter must be positive".into(),
            ));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(ConfigError::Invalid(format!("tol = {} must be positive", self.tol)));
        }
        Ok(())
    }

    pub fn result_params(&self) -> ResultParams {
        ResultParams {
            column_threshold: self.column_threshold,
            row_threshold: self.row_threshold,
            variance_target: self.variance_target,
            k_min: self.k_min,
            k_max: self.k_max,
            restarts: self.restarts,
            seed: self.seed,
            outcome_features: self.outcome_features.clone(),
            cluster_space: self.cluster_space,
            k: self.k,
            max_iter: self.max_iter,
            tol: self.tol,
            display_features: self.display_features.clone(),
            state_flag_threshold: self.state_flag_threshold,
        }
    }

    /// SHA-256 over the result-affecting parameters. Paths are excluded so a
    /// run can be moved without changing its identity.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(&self.result_params()).expect("params serialize");
        hex::encode(Sha256::digest(json))
    }

    pub fn lloyd(&self) -> LloydParams {
        LloydParams {
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }

    pub fn sweep(&self) -> SweepParams {
        SweepParams {
            k_min: self.k_min,
            k_max: self.k_max,
            restarts: self.restarts,
            seed: self.seed,
            lloyd: self.lloyd(),
        }
    }
}
