//! Z-score standardization.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::matrix::{FeatureMatrix, MatrixError};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("every column is constant")]
    AllColumnsConstant,
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation (n divisor).
    pub std: f64,
    /// Value substituted for a missing raw cell before standardizing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill: Option<f64>,
}

/// Everything needed to apply or invert the standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    /// Always `"population"`: variances divide by n.
    pub variance: String,
    pub columns: Vec<ColumnScale>,
    /// Constant columns removed before scaling.
    pub dropped: Vec<String>,
}

impl ScalerStats {
    pub fn column(&self, name: &str) -> Option<&ColumnScale> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Records the imputation value used for each named column.
    pub fn set_fill_values<'a>(&mut self, fills: impl IntoIterator<Item = (&'a str, f64)>) {
        for (name, value) in fills {
            if let Some(c) = self.columns.iter_mut().find(|c| c.name == name) {
                c.fill = Some(value);
            }
        }
    }

    pub fn standardize(&self, name: &str, raw: f64) -> Option<f64> {
        self.column(name).map(|c| (raw - c.mean) / c.std)
    }

    /// Standardizes the retained columns of `matrix` (matched by name).
    pub fn transform(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix, PreprocessError> {
        let idx = self
            .columns
            .iter()
            .map(|c| {
                matrix
                    .column_index(&c.name)
                    .ok_or_else(|| PreprocessError::UnknownColumn(c.name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let src = matrix.values();
        let values = Array2::from_shape_fn((matrix.n_rows(), self.columns.len()), |(i, j)| {
            let c = &self.columns[j];
            (src[[i, idx[j]]] - c.mean) / c.std
        });
        Ok(FeatureMatrix::new(
            values,
            matrix.row_ids().to_vec(),
            self.names(),
        )?)
    }

    /// Maps standardized values back to raw units.
    pub fn inverse(&self, standardized: &FeatureMatrix) -> Result<FeatureMatrix, PreprocessError> {
        let idx = self
            .columns
            .iter()
            .map(|c| {
                standardized
                    .column_index(&c.name)
                    .ok_or_else(|| PreprocessError::UnknownColumn(c.name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let src = standardized.values();
        let values = Array2::from_shape_fn((standardized.n_rows(), self.columns.len()), |(i, j)| {
            let c = &self.columns[j];
            src[[i, idx[j]]] * c.std + c.mean
        });
        Ok(FeatureMatrix::new(
            values,
            standardized.row_ids().to_vec(),
            self.names(),
        )?)
    }
}

/// Standardizes every column to mean 0 and population variance 1. Constant
/// columns are dropped.
pub fn zscore(matrix: &FeatureMatrix) -> Result<(FeatureMatrix, ScalerStats), PreprocessError> {
    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for (name, stats) in matrix.col_names().iter().zip(matrix.column_stats()) {
        // Spread below a few ulps of the mean is rounding noise on a constant column.
        if stats.std <= 4.0 * f64::EPSILON * stats.mean.abs() || stats.std == 0.0 {
            warn!(column = %name, "dropping constant column");
            dropped.push(name.clone());
        } else {
            columns.push(ColumnScale {
                name: name.clone(),
                mean: stats.mean,
                std: stats.std,
                fill: None,
            });
        }
    }
    if columns.is_empty() {
        return Err(PreprocessError::AllColumnsConstant);
    }
    let scaler = ScalerStats {
        variance: "population".into(),
        columns,
        dropped,
    };
    let standardized = scaler.transform(matrix)?;
    Ok((standardized, scaler))
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn one_two_three() {
        // population std of [1,2,3] is sqrt(2/3); (1-2)/sqrt(2/3) = -1.224744871391589
        let m = FeatureMatrix::from_array(array![[1.0], [2.0], [3.0]]).unwrap();
        let (z, stats) = zscore(&m).unwrap();
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in z.column(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(stats.variance, "population");
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        let m = FeatureMatrix::from_array(array![[-1.0], [1.0], [-1.0], [1.0]]).unwrap();
        let (z, _) = zscore(&m).unwrap();
        for (a, b) in z.values().iter().zip(m.values().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_columns_are_dropped() {
        let m = FeatureMatrix::from_array(array![[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]).unwrap();
        let (z, stats) = zscore(&m).unwrap();
        assert_eq!(z.col_names(), ["f1"]);
        assert_eq!(stats.dropped, vec!["f0"]);
    }

    #[test]
    fn all_constant_is_an_error() {
        let m = FeatureMatrix::from_array(array![[5.0], [5.0]]).unwrap();
        assert_eq!(zscore(&m).unwrap_err(), PreprocessError::AllColumnsConstant);
    }

    #[test]
    fn scaler_json_shape() {
        let m = FeatureMatrix::from_array(array![[1.0], [3.0]]).unwrap();
        let (_, stats) = zscore(&m).unwrap();
        let json = serde_json::to_value(&stats).unwrap();
        assert_eq!(json["columns"][0]["mean"], 2.0);
        assert_eq!(json["columns"][0]["std"], 1.0);
    }

    fn arb_matrix() -> impl Strategy<Value = Array2<f64>> {
        (2usize..30, 1usize..6).prop_flat_map(|(r, c)| {
            prop::collection::vec(-1e3f64..1e3, r * c)
                .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn output_columns_have_zero_mean_unit_variance(values in arb_matrix()) {
            let m = FeatureMatrix::from_array(values).unwrap();
            let Ok((z, _)) = zscore(&m) else { return Ok(()) };
            for s in z.column_stats() {
                prop_assert!(s.mean.abs() < 1e-12, "mean {}", s.mean);
                prop_assert!((s.std * s.std - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn inverse_recovers_input(values in arb_matrix()) {
            let m = FeatureMatrix::from_array(values).unwrap();
            let Ok((z, stats)) = zscore(&m) else { return Ok(()) };
            let back = stats.inverse(&z).unwrap();
            for (j, name) in back.col_names().iter().enumerate() {
                let src = m.column_index(name).unwrap();
                for (a, b) in back.column(j).iter().zip(m.column(src).iter()) {
                    prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
                }
            }
        }
    }
}
