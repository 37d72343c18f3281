//! Dense county × feature matrix shared by the numeric stages.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("matrix must have at least 2 rows and 1 column, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("{ids} row ids / {names} column names do not match a {rows}x{cols} matrix")]
    Shape {
        rows: usize,
        cols: usize,
        ids: usize,
        names: usize,
    },
    #[error("duplicate row id {0}")]
    DuplicateRow(String),
    #[error("duplicate column name {0}")]
    DuplicateColumn(String),
}

/// Per-column location and spread. `std` is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

/// Rows are counties (keyed by FIPS), columns are named features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    row_ids: Vec<String>,
    col_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        values: Array2<f64>,
        row_ids: Vec<String>,
        col_names: Vec<String>,
    ) -> Result<Self, MatrixError> {
        let (rows, cols) = values.dim();
        if row_ids.len() != rows || col_names.len() != cols {
            return Err(MatrixError::Shape {
                rows,
                cols,
                ids: row_ids.len(),
                names: col_names.len(),
            });
        }
        if rows < 2 || cols < 1 {
            return Err(MatrixError::TooSmall { rows, cols });
        }
        let mut seen = HashSet::new();
        for id in &row_ids {
            if !seen.insert(id.as_str()) {
                return Err(MatrixError::DuplicateRow(id.clone()));
            }
        }
        let mut seen = HashSet::new();
        for name in &col_names {
            if !seen.insert(name.as_str()) {
                return Err(MatrixError::DuplicateColumn(name.clone()));
            }
        }
        Ok(Self {
            values,
            row_ids,
            col_names,
        })
    }

    /// Builds a matrix with generated ids (`r0`, `r1`, ... and `f0`, `f1`, ...).
    pub fn from_array(values: Array2<f64>) -> Result<Self, MatrixError> {
        let (rows, cols) = values.dim();
        let row_ids = (0..rows).map(|i| format!("r{i}")).collect();
        let col_names = (0..cols).map(|j| format!("f{j}")).collect();
        Self::new(values, row_ids, col_names)
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.col_names.iter().position(|c| c == name)
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.row_ids.iter().position(|r| r == id)
    }

    /// Two-pass mean and population standard deviation of every column.
    pub fn column_stats(&self) -> Vec<ColumnStats> {
        self.values
            .axis_iter(Axis(1))
            .map(column_stats)
            .collect()
    }
}

pub(crate) fn column_stats(col: ArrayView1<'_, f64>) -> ColumnStats {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    ColumnStats {
        mean,
        std: var.sqrt(),
    }
}

/// Squared Euclidean distance between two equal-length rows.
#[inline]
pub fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Serialize an `Array2` as a list of rows.
pub(crate) mod rows {
    use ndarray::Array2;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.outer_iter().map(|r| r.to_vec()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Array2::from_shape_vec((flat.len().checked_div(ncols).unwrap_or(0), ncols), flat)
            .map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_degenerate_shapes() {
        let err = FeatureMatrix::from_array(array![[1.0, 2.0]]).unwrap_err();
        assert_eq!(err, MatrixError::TooSmall { rows: 1, cols: 2 });
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = FeatureMatrix::new(
            array![[1.0], [2.0]],
            vec!["01001".into(), "01001".into()],
            vec!["a".into()],
        )
        .unwrap_err();
        assert_eq!(err, MatrixError::DuplicateRow("01001".into()));
    }

    #[test]
    fn stats_use_population_divisor() {
        let m = FeatureMatrix::from_array(array![[1.0], [2.0], [3.0]]).unwrap();
        let s = m.column_stats()[0];
        assert_eq!(s.mean, 2.0);
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
