use crate::error::{Error, Result};
use crate::numerics::{pca, Matrix};

/// Exponential of the Shannon entropy of the normalised spectrum.
///
/// Ranges over `[1, len]`; larger values mean slower eigenvalue decay.
pub fn effective_rank(eigenvalues: &[f64]) -> Result<f64> {
    if let Some(&bad) = eigenvalues.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Config(format!(
            "effective_rank needs a non-negative spectrum, found {bad}"
        )));
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroSpectrum);
    }
    let entropy: f64 = eigenvalues
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

/// Centred projection onto the top two principal axes.
pub fn project_2d(data: &Matrix) -> Result<Matrix> {
    if data.rows() < 3 {
        return Err(Error::TooFewRows {
            op: "project_2d",
            needed: 3,
            got: data.rows(),
        });
    }
    if data.cols() < 2 {
        return Err(Error::DimMismatch {
            op: "project_2d",
            left: data.shape(),
            right: (data.rows(), 2),
        });
    }
    let p = pca(data)?;
    let axes = p.vectors.columns(0, 2);
    let mut centred = data.clone();
    for i in 0..centred.rows() {
        for (x, m) in centred.row_mut(i).iter_mut().zip(&p.mean) {
            *x -= m;
        }
    }
    centred.matmul(&axes)
}
