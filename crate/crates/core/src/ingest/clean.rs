use ndarray::Array2;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::master::MasterTable;
use super::IngestError;
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub missing_fraction: f64,
}

fn check_threshold(threshold: f64) -> Result<(), IngestError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(IngestError::InvalidThreshold(threshold))
    }
}

/// Removes columns whose missing fraction is strictly greater than `threshold`.
pub fn drop_sparse_columns(
    mut master: MasterTable,
    threshold: f64,
) -> Result<(MasterTable, Vec<DroppedColumn>), IngestError> {
    check_threshold(threshold)?;
    let mut dropped = Vec::new();
    master.retain_features(|f| {
        let fraction = f.missing_fraction();
        if fraction > threshold {
            warn!(feature = %f.name, fraction, "dropping sparse column");
            dropped.push(DroppedColumn {
                name: f.name.clone(),
                missing_fraction: fraction,
            });
            false
        } else {
            true
        }
    });
    if master.features().is_empty() {
        return Err(IngestError::AllColumnsDropped);
    }
    Ok((master, dropped))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RowFilterReport {
    pub threshold: f64,
    pub removed: Vec<String>,
    pub survivors: usize,
}

/// Removes counties missing more than `row_threshold` of the remaining
/// features. Fails when fewer than `min_rows` survive.
pub fn filter_sparse_rows(
    mut master: MasterTable,
    row_threshold: f64,
    min_rows: usize,
) -> Result<(MasterTable, RowFilterReport), IngestError> {
    check_threshold(row_threshold)?;
    let n_features = master.features().len();
    if n_features == 0 {
        return Err(IngestError::AllColumnsDropped);
    }
    let keep: Vec<bool> = (0..master.n_rows())
        .map(|row| {
            let missing = master
                .features()
                .iter()
                .filter(|f| f.values[row].is_none())
                .count();
            missing as f64 / n_features as f64 <= row_threshold
        })
        .collect();
    let removed: Vec<String> = master
        .counties()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| !k)
        .map(|(c, _)| c.fips.clone())
        .collect();
    master.retain_rows(&keep);
    let survivors = master.n_rows();
    info!(survivors, removed = removed.len(), "row filter applied");
    if survivors < min_rows {
        return Err(IngestError::TooFewRows {
            survivors,
            required: min_rows,
        });
    }
    Ok((
        master,
        RowFilterReport {
            threshold: row_threshold,
            removed,
            survivors,
        },
    ))
}

/// Dense matrix produced by median imputation, with the fill value used for
/// each column and how many cells were filled.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputed {
    pub matrix: FeatureMatrix,
    pub medians: Vec<f64>,
    pub filled: Vec<usize>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Replaces remaining missing cells by the column median of present values.
pub fn impute_median(master: &MasterTable) -> Result<Imputed, IngestError> {
    let (rows, cols) = (master.n_rows(), master.features().len());
    let mut values = Array2::zeros((rows, cols));
    let mut medians = Vec::with_capacity(cols);
    let mut filled = Vec::with_capacity(cols);
    for (j, f) in master.features().iter().enumerate() {
        let mut present: Vec<f64> = f.values.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(IngestError::EmptyColumn(f.name.clone()));
        }
        let m = median(&mut present);
        for (i, v) in f.values.iter().enumerate() {
            values[[i, j]] = v.unwrap_or(m);
        }
        medians.push(m);
        filled.push(rows - present.len());
    }
    let matrix = FeatureMatrix::new(
        values,
        master.counties().iter().map(|c| c.fips.clone()).collect(),
        master.features().iter().map(|f| f.name.clone()).collect(),
    )?;
    Ok(Imputed {
        matrix,
        medians,
        filled,
    })
}
