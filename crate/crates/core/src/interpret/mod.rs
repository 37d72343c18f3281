//! Explaining a clustering: feature importance, cluster profiles,
//! performance labels, state make-up, scatter extracts and county gaps.

mod geography;
mod importance;
mod profile;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub use geography::{
    county_gap, scatter_pairs, state_distribution, CountyGap, FeatureGap, Scatter, ScatterPoint,
    StateDistribution, StateFlag, StateRow,
};
pub use importance::{
    feature_wcss_decomposition, post_hoc_importance, FeatureImportance, FeatureScore,
};
pub use profile::{
    cluster_profile, performance_label, ClusterProfile, ClusterStats, FeatureProfile,
    PerformanceLabel, PerformanceLabeling, Rating,
};

use crate::cluster::ClusterModel;
use crate::config::OutcomeFeature;
use crate::ingest::MasterTable;
use crate::matrix::FeatureMatrix;
use crate::pca::{BiplotLoading, PcaError, PcaModel};

pub const IMPORTANCE_METHOD: &str = "importance_j = 1 - WCSS_j / TSS_j, where WCSS_j sums squared \
deviations of each county from its cluster centroid along feature j and TSS_j sums squared \
deviations from the feature mean; features with TSS_j = 0 are reported as 0 and flagged degenerate";

#[derive(Debug, Error, PartialEq)]
pub enum InterpretError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("unknown county {0}")]
    UnknownCounty(String),
    #[error("cluster membership does not align with the master table: {0}")]
    Alignment(String),
    #[error(transparent)]
    Pca(#[from] PcaError),
}

/// Cluster label of every clustered county.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub k: usize,
    pub fips: Vec<String>,
    pub labels: Vec<usize>,
}

impl Membership {
    pub fn new(fips: &[String], model: &ClusterModel) -> Self {
        Self {
            k: model.k,
            fips: fips.to_vec(),
            labels: model.assignments.clone(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn label_of(&self, fips: &str) -> Option<usize> {
        self.fips.iter().position(|f| f == fips).map(|i| self.labels[i])
    }

    /// Master row of every clustered county.
    pub(crate) fn rows(&self, master: &MasterTable) -> Result<Vec<usize>, InterpretError> {
        if self.fips.len() != self.labels.len() {
            return Err(InterpretError::Alignment(format!(
                "{} counties but {} labels",
                self.fips.len(),
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.k) {
            return Err(InterpretError::Alignment(format!(
                "label {bad} out of range for k = {}",
                self.k
            )));
        }
        self.fips
            .iter()
            .map(|f| {
                master
                    .row_index(f)
                    .ok_or_else(|| InterpretError::Alignment(format!("county {f} not in master")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaScore {
    pub fips: String,
    pub pc1: f64,
    pub pc2: Option<f64>,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationReport {
    pub method: String,
    /// Importance in the space the model was fitted in.
    pub importance: FeatureImportance,
    /// Importance of the standardized input features, present when the model
    /// was fitted in another space (PCA scores).
    pub post_hoc_importance: Option<FeatureImportance>,
    pub profile: ClusterProfile,
    /// Absent when none of the configured outcome features exist.
    pub labeling: Option<PerformanceLabeling>,
    /// Configured outcome features that are not in the master table.
    pub skipped_outcomes: Vec<String>,
    pub states: StateDistribution,
    pub biplot: Vec<BiplotLoading>,
    pub pca_scores: Vec<PcaScore>,
}

impl InterpretationReport {
    /// Importance over input features: post-hoc if available, else the
    /// clustered-space one.
    pub fn feature_importance(&self) -> &FeatureImportance {
        self.post_hoc_importance.as_ref().unwrap_or(&self.importance)
    }

    pub fn label_of(&self, cluster: usize) -> Option<PerformanceLabel> {
        self.labeling.as_ref().and_then(|l| l.label(cluster))
    }
}

pub struct ReportInputs<'a> {
    pub master: &'a MasterTable,
    pub membership: &'a Membership,
    pub model: &'a ClusterModel,
    /// The matrix the model was fitted on.
    pub clustered: &'a FeatureMatrix,
    pub standardized: &'a FeatureMatrix,
    pub pca: &'a PcaModel,
    pub outcomes: &'a [OutcomeFeature],
    pub state_threshold: f64,
    pub biplot_top: usize,
}

pub fn build_report(inputs: &ReportInputs<'_>) -> Result<InterpretationReport, InterpretError> {
    let importance = feature_wcss_decomposition(inputs.clustered, inputs.model)?;
    let post_hoc_importance = if inputs.clustered.col_names() == inputs.standardized.col_names() {
        None
    } else {
        Some(post_hoc_importance(
            inputs.standardized,
            &inputs.model.assignments,
            inputs.model.k,
        )?)
    };
    let profile = cluster_profile(inputs.master, inputs.membership)?;

    let (present, skipped): (Vec<OutcomeFeature>, Vec<OutcomeFeature>) = inputs
        .outcomes
        .iter()
        .cloned()
        .partition(|o| inputs.master.feature(&o.name).is_some());
    let skipped_outcomes: Vec<String> = skipped.into_iter().map(|o| o.name).collect();
    if !skipped_outcomes.is_empty() {
        warn!(?skipped_outcomes, "outcome features not in master table");
    }
    let labeling = if present.is_empty() {
        None
    } else {
        Some(performance_label(&profile, &present)?)
    };

    let states = state_distribution(inputs.master, inputs.membership, inputs.state_threshold)?;
    let biplot = match inputs.pca.biplot_data(inputs.biplot_top) {
        Ok(b) => b,
        Err(PcaError::TooFewComponents(_)) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let scores = inputs.pca.project(inputs.standardized)?;
    let pca_scores = scores
        .values()
        .outer_iter()
        .zip(scores.row_ids())
        .zip(&inputs.model.assignments)
        .map(|((row, fips), &cluster)| PcaScore {
            fips: fips.clone(),
            pc1: row[0],
            pc2: row.get(1).copied(),
            cluster,
        })
        .collect();

    Ok(InterpretationReport {
        method: IMPORTANCE_METHOD.to_string(),
        importance,
        post_hoc_importance,
        profile,
        labeling,
        skipped_outcomes,
        states,
        biplot,
        pca_scores,
    })
}
