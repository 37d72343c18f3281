use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::InterpretError;
use crate::cluster::ClusterModel;
use crate::matrix::FeatureMatrix;

/// Relative total sum of squares below which a feature is treated as constant.
const DEGENERATE_TSS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: String,
    /// Within-cluster sum of squares along this feature.
    pub wcss: f64,
    /// Total sum of squares along this feature.
    pub tss: f64,
    /// `1 - wcss / tss`, clamped to [0, 1]; 0 when `degenerate`.
    pub importance: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    /// Which space the importances were measured in.
    pub space: String,
    /// Sorted by importance, highest first.
    pub features: Vec<FeatureScore>,
    pub total_wcss: f64,
}

impl FeatureImportance {
    /// The first `n` features, ties already ordered by name.
    pub fn top_features(&self, n: usize) -> &[FeatureScore] {
        &self.features[..n.min(self.features.len())]
    }

    pub fn get(&self, feature: &str) -> Option<&FeatureScore> {
        self.features.iter().find(|f| f.feature == feature)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,wcss,tss,importance,degenerate\n");
        for f in &self.features {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                f.feature, f.wcss, f.tss, f.importance, f.degenerate
            );
        }
        out
    }
}

/// Splits the model's inertia across features: `wcss_j` sums squared
/// deviations from the model centroids along feature j. `matrix` must be the
/// matrix the model was fitted on.
pub fn feature_wcss_decomposition(
    matrix: &FeatureMatrix,
    model: &ClusterModel,
) -> Result<FeatureImportance, InterpretError> {
    check_assignments(matrix, &model.assignments, model.k)?;
    if model.centroids.ncols() != matrix.n_cols() {
        return Err(InterpretError::ShapeMismatch(format!(
            "centroids have {} columns, matrix has {}",
            model.centroids.ncols(),
            matrix.n_cols()
        )));
    }
    Ok(decompose(
        matrix,
        model.centroids.view(),
        &model.assignments,
        "clustered",
    ))
}

/// Importance of the features of `matrix` for a partition found elsewhere
/// (for example in PCA space). Centroids are the cluster means in `matrix`.
pub fn post_hoc_importance(
    matrix: &FeatureMatrix,
    assignments: &[usize],
    k: usize,
) -> Result<FeatureImportance, InterpretError> {
    check_assignments(matrix, assignments, k)?;
    let data = matrix.values();
    let mut sums = Array2::<f64>::zeros((k, matrix.n_cols()));
    let mut counts = vec![0usize; k];
    for (row, &c) in data.outer_iter().zip(assignments) {
        let mut s = sums.row_mut(c);
        s += &row;
        counts[c] += 1;
    }
    for (mut s, &n) in sums.outer_iter_mut().zip(&counts) {
        if n > 0 {
            s /= n as f64;
        }
    }
    Ok(decompose(matrix, sums.view(), assignments, "post_hoc"))
}

fn check_assignments(
    matrix: &FeatureMatrix,
    assignments: &[usize],
    k: usize,
) -> Result<(), InterpretError> {
    if assignments.len() != matrix.n_rows() {
        return Err(InterpretError::ShapeMismatch(format!(
            "{} assignments for {} rows",
            assignments.len(),
            matrix.n_rows()
        )));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
        return Err(InterpretError::ShapeMismatch(format!(
            "assignment {bad} out of range for k = {k}"
        )));
    }
    Ok(())
}

fn decompose(
    matrix: &FeatureMatrix,
    centroids: ArrayView2<'_, f64>,
    assignments: &[usize],
    space: &str,
) -> FeatureImportance {
    let data = matrix.values();
    let n = data.nrows() as f64;
    let means = data.mean_axis(Axis(0)).expect("matrix has rows");
    let mut features: Vec<FeatureScore> = matrix
        .col_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = data.column(j);
            let wcss: f64 = col
                .iter()
                .zip(assignments)
                .map(|(x, &c)| (x - centroids[[c, j]]).powi(2))
                .sum();
            let tss: f64 = col.iter().map(|x| (x - means[j]).powi(2)).sum();
            let degenerate = tss <= DEGENERATE_TSS * n;
            let importance = if degenerate {
                0.0
            } else {
                (1.0 - wcss / tss).clamp(0.0, 1.0)
            };
            FeatureScore {
                feature: name.clone(),
                wcss,
                tss,
                importance,
                degenerate,
            }
        })
        .collect();
    let total_wcss = features.iter().map(|f| f.wcss).sum();
    features.sort_by(|a, b| {
        b.importance
            .total_cmp(&a.importance)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    FeatureImportance {
        space: space.to_string(),
        features,
        total_wcss,
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::cluster::{lloyd, LloydParams};

    fn four_points() -> (FeatureMatrix, ClusterModel) {
        let m = FeatureMatrix::new(
            array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]],
            (0..4).map(|i| format!("c{i}")).collect(),
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        let model = lloyd(
            m.values(),
            array![[0.0, 0.0], [10.0, 0.0]].view(),
            &LloydParams::default(),
        )
        .unwrap();
        (m, model)
    }

    #[test]
    fn four_point_importances() {
        let (m, model) = four_points();
        let imp = feature_wcss_decomposition(&m, &model).unwrap();
        let x = imp.get("x").unwrap();
        let y = imp.get("y").unwrap();
        assert_eq!((x.tss, x.wcss, x.importance), (100.0, 0.0, 1.0));
        assert_eq!((y.tss, y.wcss, y.importance), (1.0, 1.0, 0.0));
        assert_eq!(imp.total_wcss, model.inertia);
        assert_eq!(imp.features[0].feature, "x");
    }

    #[test]
    fn post_hoc_matches_when_centroids_are_means() {
        let (m, model) = four_points();
        let a = feature_wcss_decomposition(&m, &model).unwrap();
        let b = post_hoc_importance(&m, &model.assignments, model.k).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(b.space, "post_hoc");
    }

    #[test]
    fn constant_feature_is_degenerate() {
        let m = FeatureMatrix::from_array(array![[0.0, 5.0], [1.0, 5.0], [9.0, 5.0], [10.0, 5.0]])
            .unwrap();
        let imp = post_hoc_importance(&m, &[0, 0, 1, 1], 2).unwrap();
        let f = imp.get("f1").unwrap();
        assert!(f.degenerate);
        assert_eq!(f.importance, 0.0);
    }

    #[test]
    fn ties_break_by_name_and_top_clamps() {
        let m = FeatureMatrix::new(
            array![[0.0, 0.0], [1.0, 1.0]],
            vec!["a".into(), "b".into()],
            vec!["zeta".into(), "alpha".into()],
        )
        .unwrap();
        let imp = post_hoc_importance(&m, &[0, 1], 2).unwrap();
        let names: Vec<&str> = imp.top_features(10).iter().map(|f| f.feature.as_str()).collect();
        assert_eq!(names, vec!["alpha", "zeta"]);
        assert_eq!(imp.top_features(1).len(), 1);
    }

    #[test]
    fn shape_mismatch() {
        let (m, mut model) = four_points();
        model.assignments.pop();
        assert!(matches!(
            feature_wcss_decomposition(&m, &model),
            Err(InterpretError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn csv_header() {
        let (m, model) = four_points();
        let csv = feature_wcss_decomposition(&m, &model).unwrap().to_csv();
        assert_eq!(
            csv,
            "feature,wcss,tss,importance,degenerate\nx,0,100,1,false\ny,1,1,0,false\n"
        );
    }
}
