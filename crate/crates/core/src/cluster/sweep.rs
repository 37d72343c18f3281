use std::fmt::Write as _;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{fit_best, LloydParams};
use super::silhouette::silhouette;
use super::ClusterError;

/// Normalized chord distance below which a curve is treated as straight.
const FLAT_CURVE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub seed: u64,
    pub lloyd: LloydParams,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 20,
            restarts: 10,
            seed: 0,
            lloyd: LloydParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: usize,
    pub best_inertia: f64,
    /// Absent for k = 1.
    pub mean_silhouette: Option<f64>,
    pub restarts_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepReport {
    pub entries: Vec<SweepEntry>,
    pub recommended_k: usize,
    /// Set when the elbow was not well defined (flat curve or too few points).
    pub low_confidence: bool,
}

impl KSweepReport {
    /// `k,inertia,silhouette` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,inertia,silhouette\n");
        for e in &self.entries {
            let sil = e.mean_silhouette.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", e.k, e.best_inertia, sil);
        }
        out
    }

    pub fn entry(&self, k: usize) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.k == k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Elbow {
    pub k: usize,
    /// Normalized perpendicular distance of the chosen point from the chord.
    pub distance: f64,
    pub low_confidence: bool,
}

/// Picks the k whose (k, inertia) point lies farthest from the chord joining
/// the first and last points, after min-max normalizing both axes. A straight
/// curve yields the first interior k flagged as low confidence.
pub fn elbow_point(points: &[(usize, f64)]) -> Result<Elbow, ClusterError> {
    if points.len() < 3 {
        return Err(ClusterError::TooFewEntries(points.len()));
    }
    let (k0, k1) = (points[0].0 as f64, points[points.len() - 1].0 as f64);
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let norm = |&(k, v): &(usize, f64)| {
        let x = (k as f64 - k0) / (k1 - k0);
        let y = if span > 0.0 { (v - lo) / span } else { 0.0 };
        (x, y)
    };
    let (ax, ay) = norm(&points[0]);
    let (bx, by) = norm(&points[points.len() - 1]);
    let (dx, dy) = (bx - ax, by - ay);
    let length = dx.hypot(dy);

    let mut best = Elbow {
        k: points[1].0,
        distance: 0.0,
        low_confidence: true,
    };
    for p in &points[1..points.len() - 1] {
        let (x, y) = norm(p);
        let distance = ((x - ax) * dy - (y - ay) * dx).abs() / length;
        if distance > best.distance {
            best.k = p.0;
            best.distance = distance;
        }
    }
    if best.distance < FLAT_CURVE {
        best.k = points[1].0;
        best.low_confidence = true;
    } else {
        best.low_confidence = false;
    }
    Ok(best)
}

/// Fits the best-of-restarts model for every k in range and recommends one
/// by the elbow rule.
pub fn sweep_k(
    data: ArrayView2<'_, f64>,
    params: &SweepParams,
) -> Result<KSweepReport, ClusterError> {
    let n = data.nrows();
    if params.k_min == 0 || params.k_min > params.k_max || params.k_max >= n {
        return Err(ClusterError::KRangeInvalid {
            k_min: params.k_min,
            k_max: params.k_max,
            n_rows: n,
        });
    }
    let entries: Vec<SweepEntry> = (params.k_min..=params.k_max)
        .into_par_iter()
        .map(|k| {
            let model = fit_best(data, k, params.restarts, params.seed, &params.lloyd)?;
            let mean_silhouette = if k >= 2 {
                Some(silhouette(data, &model.assignments)?.mean)
            } else {
                None
            };
            Ok(SweepEntry {
                k,
                best_inertia: model.inertia,
                mean_silhouette,
                restarts_used: params.restarts.max(1),
            })
        })
        .collect::<Result<_, ClusterError>>()?;

    let (recommended_k, low_confidence) = match entries.len() {
        1 => (entries[0].k, false),
        2 => (entries[0].k, true),
        _ => {
            let points: Vec<(usize, f64)> =
                entries.iter().map(|e| (e.k, e.best_inertia)).collect();
            let elbow = elbow_point(&points)?;
            (elbow.k, elbow.low_confidence)
        }
    };
    Ok(KSweepReport {
        entries,
        recommended_k,
        low_confidence,
    })
}
