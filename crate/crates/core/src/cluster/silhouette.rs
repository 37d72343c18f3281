use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::matrix::squared_distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    pub mean: f64,
    pub per_point: Vec<f64>,
}

/// Silhouette width of every row under `assignments`, using Euclidean
/// distance. Rows alone in their cluster score 0.
pub fn silhouette(
    data: ArrayView2<'_, f64>,
    assignments: &[usize],
) -> Result<Silhouette, ClusterError> {
    let n = data.nrows();
    if assignments.len() != n {
        return Err(ClusterError::ShapeMismatch(format!(
            "{} assignments for {n} rows",
            assignments.len()
        )));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }

    let per_point: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignments[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            let row = data.row(i);
            for (j, other) in data.outer_iter().enumerate() {
                if j != i {
                    sums[assignments[j]] += squared_distance(row, other).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    let mean = per_point.iter().sum::<f64>() / n as f64;
    Ok(Silhouette { mean, per_point })
}
