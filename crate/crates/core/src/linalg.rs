//! Covariance and the cyclic Jacobi eigensolver for symmetric matrices.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

const SYMMETRY_TOLERANCE: f64 = 1e-10;
const RELATIVE_OFF_DIAGONAL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {gap}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },
    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),
    #[error("Jacobi iteration did not converge in {MAX_SWEEPS} sweeps (off-diagonal norm {0})")]
    NoConvergence(f64),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
}

/// A square matrix checked to be symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(Array2<f64>);

impl SymmetricMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self, LinalgError> {
        let (r, c) = m.dim();
        if r != c {
            return Err(LinalgError::NotSquare(r, c));
        }
        let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        for i in 0..r {
            for j in (i + 1)..r {
                let gap = (m[[i, j]] - m[[j, i]]).abs();
                if gap > SYMMETRY_TOLERANCE * scale {
                    return Err(LinalgError::NotSymmetric { i, j, gap });
                }
            }
        }
        Ok(Self(m))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.0.diag().sum()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Population covariance (n divisor) of the columns of `data`.
pub fn covariance(data: ArrayView2<'_, f64>) -> Result<SymmetricMatrix, LinalgError> {
    let n = data.nrows();
    if n < 2 {
        return Err(LinalgError::TooFewRows(n));
    }
    let means = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = &data - &means;
    let mut cov = centered.t().dot(&centered) / n as f64;
    // Mirror the upper triangle so the result is exactly symmetric.
    let d = cov.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            cov[[j, i]] = cov[[i, j]];
        }
    }
    Ok(SymmetricMatrix(cov))
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    /// Descending.
    pub values: Array1<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`; its largest
    /// magnitude entry is positive.
    pub vectors: Array2<f64>,
    pub sweeps: usize,
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j]] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotations, sweeping pairs (p, q) with p < q in row order.
///
/// Stops once the off-diagonal Frobenius norm falls below 1e-12 times the
/// Frobenius norm of the input.
pub fn eigen_symmetric(m: &SymmetricMatrix) -> Result<Eigen, LinalgError> {
    let n = m.dim();
    let mut a = m.0.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = RELATIVE_OFF_DIAGONAL * scale;

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a);
        if off == 0.0 || off < target {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(LinalgError::NoConvergence(off));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                let (app, aqq) = (a[[p, p]], a[[q, q]]);
                a[[p, p]] = app - t * apq;
                a[[q, q]] = aqq + t * apq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let (arp, arq) = (a[[r, p]], a[[r, q]]);
                        let new_rp = arp - s * (arq + tau * arp);
                        let new_rq = arq + s * (arp - tau * arq);
                        a[[r, p]] = new_rp;
                        a[[p, r]] = new_rp;
                        a[[r, q]] = new_rq;
                        a[[q, r]] = new_rq;
                    }
                }
                for r in 0..n {
                    let (vrp, vrq) = (v[[r, p]], v[[r, q]]);
                    v[[r, p]] = vrp - s * (vrq + tau * vrp);
                    v[[r, q]] = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable: equal eigenvalues keep their diagonal order.
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&k| a[[k, k]]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).to_owned();
        let norm = col.dot(&col).sqrt();
        col /= norm;
        let lead = col
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > col[best].abs() { i } else { best });
        if col[lead] < 0.0 {
            col.mapv_inplace(|x| -x);
        }
        vectors.column_mut(dst).assign(&col);
    }
    Ok(Eigen {
        values,
        vectors,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use proptest::prelude::*;

    use super::*;

    fn sym(m: Array2<f64>) -> SymmetricMatrix {
        SymmetricMatrix::new(m).unwrap()
    }

    #[test]
    fn identity() {
        let e = eigen_symmetric(&sym(Array2::eye(3))).unwrap();
        assert_eq!(e.values.to_vec(), vec![1.0, 1.0, 1.0]);
        assert_eq!(e.sweeps, 0);
    }

    #[test]
    fn diagonal() {
        let e = eigen_symmetric(&sym(array![[1.0, 0.0], [0.0, 2.0]])).unwrap();
        assert_eq!(e.values.to_vec(), vec![2.0, 1.0]);
        assert_eq!(e.vectors.column(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(e.vectors.column(1).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn swap_matrix() {
        // det([[-l, 1], [1, -l]]) = l^2 - 1, so l = +1 with (1,1)/sqrt2 and
        // l = -1 with (1,-1)/sqrt2 once the sign rule picks the first entry.
        let e = eigen_symmetric(&sym(array![[0.0, 1.0], [1.0, 0.0]])).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] + 1.0).abs() < 1e-14);
        for (got, want) in e.vectors.column(0).iter().zip([h, h]) {
            assert!((got - want).abs() < 1e-14);
        }
        for (got, want) in e.vectors.column(1).iter().zip([h, -h]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_asymmetric() {
        assert!(matches!(
            SymmetricMatrix::new(array![[1.0, 2.0], [2.1, 1.0]]),
            Err(LinalgError::NotSymmetric { i: 0, j: 1, .. })
        ));
    }

    #[test]
    fn covariance_of_identical_columns() {
        let c = covariance(array![[1.0, 1.0], [4.0, 4.0], [2.0, 2.0]].view()).unwrap();
        let first = c.view()[[0, 0]];
        assert!(c.view().iter().all(|v| (v - first).abs() < 1e-15));
    }

    #[test]
    fn covariance_by_hand() {
        // x = y = [-1, 0, 1]: sum of squares 2, n = 3.
        let c = covariance(array![[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0]].view()).unwrap();
        for v in c.view().iter() {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    fn arb_symmetric() -> impl Strategy<Value = Array2<f64>> {
        (1usize..9).prop_flat_map(|n| {
            prop::collection::vec(-10.0f64..10.0, n * n).prop_map(move |v| {
                let m = Array2::from_shape_vec((n, n), v).unwrap();
                (&m + &m.t()) / 2.0
            })
        })
    }

    proptest! {
        #[test]
        fn spectral_reconstruction(m in arb_symmetric()) {
            let s = sym(m.clone());
            let e = eigen_symmetric(&s).unwrap();
            let rebuilt = e.vectors.dot(&Array2::from_diag(&e.values)).dot(&e.vectors.t());
            let err = (&rebuilt - &m).iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(err < 1e-8, "reconstruction error {err}");
            let gram = e.vectors.t().dot(&e.vectors);
            let ortho = (&gram - &Array2::<f64>::eye(m.nrows())).iter().fold(0.0f64, |a, x| a.max(x.abs()));
            prop_assert!(ortho < 1e-8);
            let trace = s.trace();
            prop_assert!((e.values.sum() - trace).abs() <= 1e-9 * trace.abs().max(1.0));
            for w in e.values.as_slice().unwrap().windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn deterministic(m in arb_symmetric()) {
            let s = sym(m);
            prop_assert_eq!(eigen_symmetric(&s).unwrap(), eigen_symmetric(&s).unwrap());
        }
    }
}
