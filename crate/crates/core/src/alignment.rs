//! Alignment objectives over per-task latents.
//!
//! All latent matrices share a shape; row `b` of every matrix belongs to the
//! same sample. Losses are summed over tasks (or task pairs) per sample and
//! averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignVariant {
    /// Sum over all task pairs of `||z_i - z_j||`.
    Pairwise,
    /// Sum over tasks of `||z_i - mean_j z_j||`.
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignNorm {
    L2,
    SquaredL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub variant: AlignVariant,
    pub norm: AlignNorm,
    pub lambda: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            variant: AlignVariant::Center,
            norm: AlignNorm::L2,
            lambda: 1.0,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AlignOutput {
    pub loss: f64,
    /// d loss / d z_i, one per input latent.
    pub grads: Vec<Matrix>,
    /// Distance terms evaluated per sample: n(n-1)/2 pairwise, n centre-based.
    pub terms_per_sample: usize,
}

fn check_latents(latents: &[Matrix]) -> Result<()> {
    if latents.len() < 2 {
        return Err(Error::TooFewTasks(latents.len()));
    }
    let shape = latents[0].shape();
    for z in &latents[1..] {
        if z.shape() != shape {
            return Err(Error::DimMismatch {
                op: "alignment",
                left: shape,
                right: z.shape(),
            });
        }
    }
    Ok(())
}

/// Value of the distance term for a difference vector, and its gradient
/// scale: the gradient with respect to the difference is `scale * diff`.
#[inline]
fn term(diff_sq: f64, norm: AlignNorm) -> (f64, f64) {
    match norm {
        AlignNorm::SquaredL2 => (diff_sq, 2.0),
        AlignNorm::L2 => {
            let d = diff_sq.sqrt();
            // subgradient 0 at coincidence
            if d > 0.0 {
                (d, 1.0 / d)
            } else {
                (0.0, 0.0)
            }
        }
    }
}

pub fn align_pairwise(latents: &[Matrix], norm: AlignNorm) -> Result<AlignOutput> {
    check_latents(latents)?;
    let n = latents.len();
    let (rows, cols) = latents[0].shape();
    let mut grads = vec![Matrix::zeros(rows, cols); n];
    let inv_b = if rows > 0 { 1.0 / rows as f64 } else { 0.0 };
    let mut loss = 0.0;
    let mut diff = vec![0.0; cols];
    for b in 0..rows {
        for i in 0..n {
            for j in i + 1..n {
                let zi = latents[i].row(b);
                let zj = latents[j].row(b);
                let mut sq = 0.0;
                for ((d, a), c) in diff.iter_mut().zip(zi).zip(zj) {
                    *d = a - c;
                    sq += *d * *d;
                }
                let (value, scale) = term(sq, norm);
                loss += value;
                let s = scale * inv_b;
                if s != 0.0 {
                    for (g, d) in grads[i].row_mut(b).iter_mut().zip(&diff) {
                        *g += s * d;
                    }
                    for (g, d) in grads[j].row_mut(b).iter_mut().zip(&diff) {
                        *g -= s * d;
                    }
                }
            }
        }
    }
    Ok(AlignOutput {
        loss: loss * inv_b,
        grads,
        terms_per_sample: n * (n - 1) / 2,
    })
}

pub fn align_center(latents: &[Matrix], norm: AlignNorm) -> Result<AlignOutput> {
    check_latents(latents)?;
    let n = latents.len();
    let (rows, cols) = latents[0].shape();
    let mut grads = vec![Matrix::zeros(rows, cols); n];
    let inv_b = if rows > 0 { 1.0 / rows as f64 } else { 0.0 };
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut center = vec![0.0; cols];
    let mut diffs = vec![vec![0.0; cols]; n];
    let mut scales = vec![0.0; n];
    let mut mean_u = vec![0.0; cols];
    for b in 0..rows {
        center.fill(0.0);
        for z in latents {
            for (c, v) in center.iter_mut().zip(z.row(b)) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c *= inv_n);

        mean_u.fill(0.0);
        for (i, z) in latents.iter().enumerate() {
            let mut sq = 0.0;
            for ((d, v), c) in diffs[i].iter_mut().zip(z.row(b)).zip(&center) {
                *d = v - c;
                sq += *d * *d;
            }
            let (value, scale) = term(sq, norm);
            loss += value;
            scales[i] = scale;
            for (m, d) in mean_u.iter_mut().zip(&diffs[i]) {
                *m += scale * d;
            }
        }
        mean_u.iter_mut().for_each(|m| *m *= inv_n);

        // d/dz_k sum_i f(z_i - zbar) = u_k - mean_i u_i
        for k in 0..n {
            for ((g, d), m) in grads[k].row_mut(b).iter_mut().zip(&diffs[k]).zip(&mean_u) {
                *g = (scales[k] * d - m) * inv_b;
            }
        }
    }
    Ok(AlignOutput {
        loss: loss * inv_b,
        grads,
        terms_per_sample: n,
    })
}

/// Dispatches on `cfg.variant`. Lambda is not applied here.
pub fn align(latents: &[Matrix], cfg: &AlignmentConfig) -> Result<AlignOutput> {
    match cfg.variant {
        AlignVariant::Pairwise => align_pairwise(latents, cfg.norm),
        AlignVariant::Center => align_center(latents, cfg.norm),
    }
}

/// `sum(task_losses) + lambda * align_loss`.
pub fn total_loss(task_losses: &[f64], align_loss: f64, lambda: f64) -> f64 {
    task_losses.iter().sum::<f64>() + lambda * align_loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(rows: &[&[f64]]) -> Vec<Matrix> {
        rows.iter().map(|r| Matrix::from_rows(&[r.to_vec()])).collect()
    }

    #[test]
    fn coincident_latents_cost_nothing() {
        let z = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]);
        for f in [align_pairwise, align_center] {
            for norm in [AlignNorm::L2, AlignNorm::SquaredL2] {
                let out = f(&[z.clone(), z.clone(), z.clone()], norm).unwrap();
                assert_eq!(out.loss, 0.0);
                assert!(out.grads.iter().all(|g| g.max_abs() == 0.0));
            }
        }
    }

    #[test]
    fn three_four_five() {
        let z = single(&[&[0.0, 0.0], &[3.0, 4.0]]);
        assert_eq!(align_pairwise(&z, AlignNorm::L2).unwrap().loss, 5.0);
        assert_eq!(align_center(&z, AlignNorm::L2).unwrap().loss, 5.0);
    }

    #[test]
    fn hand_sums_in_one_dimension() {
        let z = single(&[&[0.0], &[1.0], &[2.0]]);
        let p = align_pairwise(&z, AlignNorm::L2).unwrap();
        assert_eq!(p.loss, 4.0);
        assert_eq!(p.terms_per_sample, 3);
        let c = align_center(&z, AlignNorm::L2).unwrap();
        assert_eq!(c.loss, 2.0);
        assert_eq!(c.terms_per_sample, 3);
    }

    #[test]
    fn squared_norm_values() {
        let z = single(&[&[0.0, 0.0], &[3.0, 4.0]]);
        assert_eq!(align_pairwise(&z, AlignNorm::SquaredL2).unwrap().loss, 25.0);
        // 2 * 2.5^2
        assert_eq!(align_center(&z, AlignNorm::SquaredL2).unwrap().loss, 12.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let z = Matrix::zeros(2, 3);
        assert_eq!(
            align_center(&[z.clone()], AlignNorm::L2).unwrap_err(),
            Error::TooFewTasks(1)
        );
        assert!(matches!(
            align_pairwise(&[z, Matrix::zeros(2, 4)], AlignNorm::L2),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(&[1.0, 2.0], 3.0, 0.5), 4.5);
        assert_eq!(total_loss(&[1.0, 2.0], 123.0, 0.0), 3.0);
        assert!(total_loss(&[1.0], 2.0, 0.3) <= total_loss(&[1.0], 2.5, 0.3));
    }

    #[test]
    fn lambda_validation() {
        let mut cfg = AlignmentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.lambda = -0.1;
        assert!(cfg.validate().is_err());
        cfg.lambda = f64::NAN;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn l2_gradient_at_coincident_pair_is_zero() {
        let z = single(&[&[1.0, 1.0], &[1.0, 1.0], &[4.0, 5.0]]);
        let out = align_pairwise(&z, AlignNorm::L2).unwrap();
        // the (0,1) pair contributes nothing; (0,2) and (1,2) act equally
        assert_eq!(out.grads[0], out.grads[1]);
        assert!(out.grads[0].is_finite());
    }
}
