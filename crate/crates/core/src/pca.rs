//! Principal component analysis on top of the Jacobi eigensolver.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{covariance, eigen_symmetric, LinalgError};
use crate::matrix::{FeatureMatrix, MatrixError};

/// Column means above this are treated as "not standardized".
const CENTERING_TOLERANCE: f64 = 1e-8;
const NEGATIVE_EIGENVALUE_CLAMP: f64 = -1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum PcaError {
    #[error("column {column} has mean {mean}; standardize before fitting")]
    NotCentered { column: String, mean: f64 },
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("biplot needs at least 2 components, model has {0}")]
    TooFewComponents(usize),
    #[error("invalid retention: {0}")]
    InvalidRetention(String),
    #[error("eigenvalue {0} is negative beyond rounding")]
    NegativeEigenvalue(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// How many leading components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    /// Smallest count whose cumulative explained variance reaches the target.
    VarianceTarget(f64),
    Components(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub feature_names: Vec<String>,
    /// `n_components × n_features`, orthonormal rows.
    #[serde(with = "crate::matrix::rows")]
    pub components: Array2<f64>,
    /// Eigenvalues of the retained components, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Sum of all eigenvalues (trace of the covariance).
    pub total_variance: f64,
    pub col_means: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.components.ncols()
    }

    pub fn component_names(&self) -> Vec<String> {
        (1..=self.n_components()).map(|i| format!("PC{i}")).collect()
    }

    /// Scores of `matrix` on the retained components.
    pub fn project(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix, PcaError> {
        if matrix.n_cols() != self.n_features() {
            return Err(PcaError::DimensionMismatch {
                expected: self.n_features(),
                got: matrix.n_cols(),
            });
        }
        let means = Array1::from(self.col_means.clone());
        let centered = &matrix.values() - &means;
        let scores = centered.dot(&self.components.t());
        Ok(FeatureMatrix::new(
            scores,
            matrix.row_ids().to_vec(),
            self.component_names(),
        )?)
    }

    /// Maps scores back to feature space.
    pub fn reconstruct(&self, scores: &FeatureMatrix) -> Result<FeatureMatrix, PcaError> {
        if scores.n_cols() != self.n_components() {
            return Err(PcaError::DimensionMismatch {
                expected: self.n_components(),
                got: scores.n_cols(),
            });
        }
        let means = Array1::from(self.col_means.clone());
        let values = scores.values().dot(&self.components) + &means;
        Ok(FeatureMatrix::new(
            values,
            scores.row_ids().to_vec(),
            self.feature_names.clone(),
        )?)
    }

    /// Per-feature coefficients on PC1 and PC2, largest magnitude first.
    pub fn biplot_data(&self, top_n: usize) -> Result<Vec<BiplotLoading>, PcaError> {
        if self.n_components() < 2 {
            return Err(PcaError::TooFewComponents(self.n_components()));
        }
        let mut loadings: Vec<BiplotLoading> = self
            .feature_names
            .iter()
            .enumerate()
            .map(|(j, name)| BiplotLoading {
                feature: name.clone(),
                pc1: self.components[[0, j]],
                pc2: self.components[[1, j]],
            })
            .collect();
        loadings.sort_by(|a, b| {
            b.magnitude()
                .total_cmp(&a.magnitude())
                .then_with(|| a.feature.cmp(&b.feature))
        });
        loadings.truncate(top_n);
        Ok(loadings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiplotLoading {
    pub feature: String,
    pub pc1: f64,
    pub pc2: f64,
}

impl BiplotLoading {
    pub fn magnitude(&self) -> f64 {
        self.pc1.hypot(self.pc2)
    }
}

/// Fits PCA on a standardized (column-centered) matrix.
pub fn pca_fit(matrix: &FeatureMatrix, retention: Retention) -> Result<PcaModel, PcaError> {
    let data = matrix.values();
    let means = data.mean_axis(Axis(0)).expect("matrix has rows");
    if let Some((j, &m)) = means
        .iter()
        .enumerate()
        .find(|(_, m)| m.abs() > CENTERING_TOLERANCE)
    {
        return Err(PcaError::NotCentered {
            column: matrix.col_names()[j].clone(),
            mean: m,
        });
    }
    let cov = covariance(data)?;
    let eig = eigen_symmetric(&cov)?;
    let mut values = eig.values.to_vec();
    for v in &mut values {
        if *v < NEGATIVE_EIGENVALUE_CLAMP {
            return Err(PcaError::NegativeEigenvalue(*v));
        }
        *v = v.max(0.0);
    }
    let total: f64 = values.iter().sum();
    let ratios: Vec<f64> = values
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();

    let d = values.len();
    let keep = match retention {
        Retention::Components(n) if n == 0 || n > d => {
            return Err(PcaError::InvalidRetention(format!(
                "{n} components requested for {d} features"
            )))
        }
        Retention::Components(n) => n,
        Retention::VarianceTarget(t) if !(t > 0.0 && t <= 1.0) => {
            return Err(PcaError::InvalidRetention(format!(
                "variance target {t} outside (0, 1]"
            )))
        }
        Retention::VarianceTarget(t) => components_for_target(&ratios, t),
    };

    let components = eig
        .vectors
        .slice(ndarray::s![.., ..keep])
        .t()
        .to_owned();
    Ok(PcaModel {
        feature_names: matrix.col_names().to_vec(),
        components,
        eigenvalues: values[..keep].to_vec(),
        explained_variance_ratio: ratios[..keep].to_vec(),
        total_variance: total,
        col_means: means.to_vec(),
    })
}

fn components_for_target(ratios: &[f64], target: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cumulative += r;
        // Absorb summation rounding so a target of 1.0 is reachable.
        if cumulative >= target - 1e-12 {
            return i + 1;
        }
    }
    ratios.len()
}
