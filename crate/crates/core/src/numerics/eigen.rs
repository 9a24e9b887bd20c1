//! Symmetric eigendecomposition by cyclic Jacobi rotations, and the sample
//! covariance spectrum built on it.

use super::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Descending.
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Matrix,
}

/// Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::NotSquare {
            op: "symmetric_eigen",
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let scale = a.max_abs().max(1.0);
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric {
            op: "symmetric_eigen",
            asymmetry: asym,
        });
    }

    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let total = a.frobenius();

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[(i, j)] * m[(i, j)];
                }
            }
        }
        if off.sqrt() <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&k| m[(k, k)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok(SymmetricEigen { values, vectors })
}

/// `m <- J^T m J`, `v <- v J` for the (p, q) plane rotation.
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows();
    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Principal axes of a data matrix (rows are observations).
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Covariance eigenvalues, descending, clamped at zero.
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// Mean-centred sample covariance with divisor `rows - 1`.
pub fn covariance(data: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = data.rows();
    if n < 2 {
        return Err(Error::TooFewRows {
            op: "covariance",
            needed: 2,
            got: n,
        });
    }
    let mean = data.column_means();
    let mut centred = data.clone();
    for i in 0..n {
        for (x, m) in centred.row_mut(i).iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    let mut cov = centred.t_matmul(&centred)?.scale(1.0 / (n - 1) as f64);
    // exact symmetry; the product is symmetric only up to summation order
    let d = cov.rows();
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = avg;
            cov[(j, i)] = avg;
        }
    }
    Ok((mean, cov))
}

pub fn pca(data: &Matrix) -> Result<Pca> {
    let (mean, cov) = covariance(data)?;
    let eig = symmetric_eigen(&cov)?;
    let values = eig.values.into_iter().map(|v| v.max(0.0)).collect();
    Ok(Pca {
        mean,
        values,
        vectors: eig.vectors,
    })
}

/// Eigenvalues of the sample covariance of `data`, descending, negatives from
/// roundoff clamped to zero.
pub fn pca_spectrum(data: &Matrix) -> Result<Vec<f64>> {
    if data.rows() < 2 {
        return Err(Error::TooFewRows {
            op: "pca_spectrum",
            needed: 2,
            got: data.rows(),
        });
    }
    Ok(pca(data)?.values)
}
