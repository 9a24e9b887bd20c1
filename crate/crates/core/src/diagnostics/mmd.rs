use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdResult {
    /// Unbiased squared-MMD estimate; can be slightly negative.
    pub mmd_sq: f64,
    pub bandwidth: f64,
    pub sample_sizes: (usize, usize),
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled rows of `x` and `y`.
pub fn median_heuristic(x: &Matrix, y: &Matrix) -> f64 {
    let pooled: Vec<&[f64]> = x.row_iter().chain(y.row_iter()).collect();
    let n = pooled.len();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, &mut upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if d.len() % 2 == 1 {
        upper
    } else {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Unbiased U-statistic estimate of squared MMD with the Gaussian kernel
/// `exp(-|a - b|^2 / (2 sigma^2))`. Without an explicit bandwidth the median
/// heuristic is used, falling back to 1 when the median distance is zero.
pub fn mmd_rbf(x: &Matrix, y: &Matrix, bandwidth: Option<f64>) -> Result<MmdResult> {
    if x.cols() != y.cols() {
        return Err(Error::DimMismatch {
            op: "mmd_rbf",
            left: x.shape(),
            right: y.shape(),
        });
    }
    for m in [x, y] {
        if m.rows() < 2 {
            return Err(Error::TooFewRows {
                op: "mmd_rbf",
                needed: 2,
                got: m.rows(),
            });
        }
    }
    let sigma = match bandwidth {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::Config(format!("bandwidth must be positive, got {s}"))),
        None => {
            let med = median_heuristic(x, y);
            if med > 0.0 {
                med
            } else {
                1.0
            }
        }
    };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let k = |a: &[f64], b: &[f64]| (-gamma * sq_dist(a, b)).exp();

    let within = |m: &Matrix| {
        let n = m.rows();
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += k(m.row(i), m.row(j));
            }
        }
        2.0 * s / (n * (n - 1)) as f64
    };
    let kxx = within(x);
    let kyy = within(y);
    let mut kxy = 0.0;
    for a in x.row_iter() {
        for b in y.row_iter() {
            kxy += k(a, b);
        }
    }
    kxy /= (x.rows() * y.rows()) as f64;

    Ok(MmdResult {
        mmd_sq: kxx + kyy - 2.0 * kxy,
        bandwidth: sigma,
        sample_sizes: (x.rows(), y.rows()),
    })
}
