use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::matrix::squared_distance;

/// Row count above which the assignment step runs on the rayon pool.
const PARALLEL_ASSIGN_ROWS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LloydParams {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl Default for LloydParams {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    #[serde(with = "crate::matrix::rows")]
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Total within-cluster sum of squared distances.
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Base seed of the restart schedule, when the model came from [`fit_best`].
    pub seed: Option<u64>,
    /// Index of the winning restart.
    pub restart: Option<usize>,
    /// Inertia after every assignment step, ending with the final inertia.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn distinct_rows(data: ArrayView2<'_, f64>) -> usize {
    data.outer_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len()
}

/// k-means++ seeding: the first centroid is a uniformly drawn row, each later
/// one is drawn with probability proportional to its squared distance from
/// the nearest centroid chosen so far.
pub fn kmeans_pp_init<R: Rng + ?Sized>(
    data: ArrayView2<'_, f64>,
    k: usize,
    rng: &mut R,
) -> Result<Array2<f64>, ClusterError> {
    if k == 0 {
        return Err(ClusterError::InvalidK);
    }
    let distinct = distinct_rows(data);
    if k > distinct {
        return Err(ClusterError::KTooLarge { k, distinct });
    }
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut nearest: Vec<f64> = data
        .outer_iter()
        .map(|r| squared_distance(r, data.row(first)))
        .collect();

    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut cumulative = 0.0;
        let mut pick = None;
        for (i, &w) in nearest.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            cumulative += w;
            pick = Some(i);
            if cumulative > target {
                break;
            }
        }
        // k <= distinct rows guarantees some row is still at positive distance.
        let pick = pick.expect("a row at positive distance");
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(squared_distance(data.row(i), data.row(pick)));
        }
    }
    Ok(centroids)
}

/// Nearest centroid for every row; ties go to the lowest cluster index.
fn assign(
    data: ArrayView2<'_, f64>,
    centroids: &Array2<f64>,
    assignments: &mut [usize],
    distances: &mut [f64],
) {
    let nearest = |i: usize| {
        let row = data.row(i);
        let mut best = (0, f64::INFINITY);
        for (c, centroid) in centroids.outer_iter().enumerate() {
            let d = squared_distance(row, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    };
    if data.nrows() >= PARALLEL_ASSIGN_ROWS {
        assignments
            .par_iter_mut()
            .zip(distances.par_iter_mut())
            .enumerate()
            .for_each(|(i, (a, d))| (*a, *d) = nearest(i));
    } else {
        for i in 0..data.nrows() {
            (assignments[i], distances[i]) = nearest(i);
        }
    }
}

/// Moves the row farthest from its centroid into each empty cluster, never
/// emptying the donor cluster.
fn repair_empty_clusters(
    data: ArrayView2<'_, f64>,
    centroids: &mut Array2<f64>,
    assignments: &mut [usize],
    distances: &mut [f64],
) {
    let k = centroids.nrows();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let donor = (0..assignments.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if distances[b] >= distances[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n leaves a cluster with a spare row");
        sizes[assignments[donor]] -= 1;
        sizes[empty] = 1;
        assignments[donor] = empty;
        distances[donor] = 0.0;
        centroids.row_mut(empty).assign(&data.row(donor));
    }
}

/// Cluster means, accumulated in row order.
fn update_centroids(data: ArrayView2<'_, f64>, assignments: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, data.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &a) in data.outer_iter().zip(assignments) {
        let mut s = sums.row_mut(a);
        s += &row;
        counts[a] += 1;
    }
    for (mut s, &c) in sums.outer_iter_mut().zip(&counts) {
        s /= c as f64;
    }
    sums
}

/// Lloyd iterations from the given starting centroids.
pub fn lloyd(
    data: ArrayView2<'_, f64>,
    init: ArrayView2<'_, f64>,
    params: &LloydParams,
) -> Result<ClusterModel, ClusterError> {
    let (n, d) = data.dim();
    let k = init.nrows();
    if init.ncols() != d {
        return Err(ClusterError::DimensionMismatch {
            expected: d,
            got: init.ncols(),
        });
    }
    if k == 0 {
        return Err(ClusterError::InvalidK);
    }
    if k > n {
        return Err(ClusterError::KTooLarge { k, distinct: n });
    }

    let mut centroids = init.to_owned();
    let mut assignments = vec![0; n];
    let mut distances = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        iterations += 1;
        assign(data, &centroids, &mut assignments, &mut distances);
        repair_empty_clusters(data, &mut centroids, &mut assignments, &mut distances);
        history.push(distances.iter().sum());

        let updated = update_centroids(data, &assignments, k);
        let shift = updated
            .outer_iter()
            .zip(centroids.outer_iter())
            .map(|(a, b)| squared_distance(a, b))
            .fold(0.0f64, f64::max)
            .sqrt();
        centroids = updated;
        if shift < params.tol {
            converged = true;
            break;
        }
    }
    let total = inertia(data, centroids.view(), &assignments)?;
    history.push(total);
    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        inertia: total,
        iterations,
        converged,
        seed: None,
        restart: None,
        inertia_history: history,
    })
}

/// Σᵢ ‖xᵢ − c_{a(i)}‖².
pub fn inertia(
    data: ArrayView2<'_, f64>,
    centroids: ArrayView2<'_, f64>,
    assignments: &[usize],
) -> Result<f64, ClusterError> {
    if assignments.len() != data.nrows() {
        return Err(ClusterError::ShapeMismatch(format!(
            "{} assignments for {} rows",
            assignments.len(),
            data.nrows()
        )));
    }
    if centroids.ncols() != data.ncols() {
        return Err(ClusterError::ShapeMismatch(format!(
            "centroids have {} columns, data has {}",
            centroids.ncols(),
            data.ncols()
        )));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= centroids.nrows()) {
        return Err(ClusterError::ShapeMismatch(format!(
            "assignment {bad} out of range for {} centroids",
            centroids.nrows()
        )));
    }
    Ok(data
        .outer_iter()
        .zip(assignments)
        .map(|(row, &a)| squared_distance(row, centroids.row(a)))
        .sum())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for restart `restart` at cluster count `k`. Independent of the total
/// number of restarts, so restart schedules nest.
pub fn derive_seed(seed: u64, k: usize, restart: usize) -> u64 {
    splitmix64(seed ^ splitmix64(((k as u64) << 32) | restart as u64))
}

/// Best (lowest inertia) of `restarts` k-means++ / Lloyd runs. Ties keep the
/// earliest restart.
pub fn fit_best(
    data: ArrayView2<'_, f64>,
    k: usize,
    restarts: usize,
    seed: u64,
    params: &LloydParams,
) -> Result<ClusterModel, ClusterError> {
    let runs: Vec<ClusterModel> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k, r));
            let init = kmeans_pp_init(data, k, &mut rng)?;
            let mut model = lloyd(data, init.view(), params)?;
            model.seed = Some(seed);
            model.restart = Some(r);
            Ok(model)
        })
        .collect::<Result<_, ClusterError>>()?;
    Ok(runs
        .into_iter()
        .reduce(|best, m| if m.inertia < best.inertia { m } else { best })
        .expect("at least one restart"))
}
