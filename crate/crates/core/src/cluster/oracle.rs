use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::ClusterError;

/// Largest input `exact_oracle` will enumerate.
pub const MAX_ORACLE_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    /// Restricted growth labels: row 0 is in block 0, and each new block
    /// takes the next unused label.
    pub labels: Vec<usize>,
    pub inertia: f64,
}

/// Globally optimal k-partition by exhaustive search over set partitions.
/// Deliberately shares no code with the Lloyd implementation.
pub fn exact_oracle(data: ArrayView2<'_, f64>, k: usize) -> Result<OracleSolution, ClusterError> {
    let n = data.nrows();
    if k == 0 {
        return Err(ClusterError::InvalidK);
    }
    if n > MAX_ORACLE_ROWS {
        return Err(ClusterError::TooManyRows(n));
    }
    if k > n {
        return Err(ClusterError::KTooLarge { k, distinct: n });
    }
    let rows: Vec<Vec<f64>> = data.outer_iter().map(|r| r.to_vec()).collect();
    let mut search = Search {
        rows: &rows,
        k,
        labels: vec![0; n],
        best: None,
    };
    search.descend(0, 0);
    Ok(search.best.expect("k <= n admits a partition"))
}

struct Search<'a> {
    rows: &'a [Vec<f64>],
    k: usize,
    labels: Vec<usize>,
    best: Option<OracleSolution>,
}

impl Search<'_> {
    fn descend(&mut self, i: usize, used: usize) {
        let n = self.rows.len();
        // Not enough rows left to open the remaining blocks.
        if self.k - used > n - i {
            return;
        }
        if i == n {
            let cost = self.cost();
            if self.best.as_ref().is_none_or(|b| cost < b.inertia) {
                self.best = Some(OracleSolution {
                    labels: self.labels.clone(),
                    inertia: cost,
                });
            }
            return;
        }
        let limit = (used + 1).min(self.k);
        for label in 0..limit {
            self.labels[i] = label;
            self.descend(i + 1, used.max(label + 1));
        }
    }

    fn cost(&self) -> f64 {
        let d = self.rows[0].len();
        let mut total = 0.0;
        for block in 0..self.k {
            let members: Vec<&Vec<f64>> = self
                .rows
                .iter()
                .zip(&self.labels)
                .filter(|(_, &l)| l == block)
                .map(|(r, _)| r)
                .collect();
            let count = members.len() as f64;
            for j in 0..d {
                let mean = members.iter().map(|r| r[j]).sum::<f64>() / count;
                total += members.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>();
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn four_points() {
        let data = array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let s = exact_oracle(data.view(), 2).unwrap();
        assert_eq!(s.labels, vec![0, 0, 1, 1]);
        assert!((s.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_block_is_total_scatter() {
        let data = array![[1.0], [2.0], [3.0], [6.0]];
        let s = exact_oracle(data.view(), 1).unwrap();
        // mean 3: 4 + 1 + 0 + 9
        assert_eq!(s.inertia, 14.0);
    }

    #[test]
    fn k_equals_n_is_zero() {
        let data = array![[1.0], [2.0], [3.0]];
        let s = exact_oracle(data.view(), 3).unwrap();
        assert_eq!(s.labels, vec![0, 1, 2]);
        assert_eq!(s.inertia, 0.0);
    }

    #[test]
    fn rejects_large_inputs() {
        let data = ndarray::Array2::<f64>::zeros((11, 1));
        assert_eq!(
            exact_oracle(data.view(), 2).unwrap_err(),
            ClusterError::TooManyRows(11)
        );
    }

    #[test]
    fn enumerates_every_partition() {
        // Stirling numbers of the second kind S(6, k).
        fn count(n: usize, k: usize) -> usize {
            fn walk(i: usize, used: usize, n: usize, k: usize) -> usize {
                if k - used > n - i {
                    return 0;
                }
                if i == n {
                    return 1;
                }
                (0..(used + 1).min(k))
                    .map(|l| walk(i + 1, used.max(l + 1), n, k))
                    .sum()
            }
            walk(0, 0, n, k)
        }
        assert_eq!(
            (1..=6).map(|k| count(6, k)).collect::<Vec<_>>(),
            vec![1, 31, 90, 65, 15, 1]
        );
    }
}
