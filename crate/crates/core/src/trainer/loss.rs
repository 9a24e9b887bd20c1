//! Per-task losses averaged over supervised samples only.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::synthbench::TaskKind;

use super::batch::Target;

/// Returns `(loss, d loss / d predictions)`. Rows with `mask[b] == false`
/// contribute nothing; with no supervised row the loss and gradient are 0.
///
/// Regression: squared error averaged over the output width. Classification:
/// softmax cross-entropy. Direction: `1 - cos(pred, target)`.
pub fn masked_task_loss(
    pred: &Matrix,
    target: &Target,
    mask: &[bool],
    kind: TaskKind,
) -> Result<(f64, Matrix)> {
    let (rows, cols) = pred.shape();
    if mask.len() != rows {
        return Err(Error::DimMismatch {
            op: "masked_task_loss",
            left: pred.shape(),
            right: (mask.len(), cols),
        });
    }
    let mut grad = Matrix::zeros(rows, cols);
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Ok((0.0, grad));
    }
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    match (kind, target) {
        (TaskKind::Regression, Target::Dense(y)) => {
            check_dense(pred, y)?;
            let inv_d = 1.0 / cols as f64;
            for b in (0..rows).filter(|&b| mask[b]) {
                for ((g, p), t) in grad.row_mut(b).iter_mut().zip(pred.row(b)).zip(y.row(b)) {
                    let e = p - t;
                    loss += e * e * inv_d;
                    *g = 2.0 * e * inv_d * inv_m;
                }
            }
        }
        (TaskKind::Classification, Target::Class(y)) => {
            if y.len() != rows || y.iter().any(|&c| c >= cols) {
                return Err(Error::Config(format!(
                    "class targets must be {rows} ids below {cols}"
                )));
            }
            for b in (0..rows).filter(|&b| mask[b]) {
                let logits = pred.row(b);
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                let log_z = max + sum.ln();
                loss += log_z - logits[y[b]];
                for (k, g) in grad.row_mut(b).iter_mut().enumerate() {
                    let p = (logits[k] - log_z).exp();
                    *g = (p - (k == y[b]) as u8 as f64) * inv_m;
                }
            }
        }
        (TaskKind::Direction, Target::Dense(y)) => {
            check_dense(pred, y)?;
            for b in (0..rows).filter(|&b| mask[b]) {
                let p = pred.row(b);
                let t = y.row(b);
                let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
                if pn == 0.0 || tn == 0.0 {
                    loss += 1.0;
                    continue;
                }
                let dot: f64 = p.iter().zip(t).map(|(a, c)| a * c).sum();
                let cos = dot / (pn * tn);
                loss += 1.0 - cos;
                for ((g, pv), tv) in grad.row_mut(b).iter_mut().zip(p).zip(t) {
                    *g = -(tv / (pn * tn) - cos * pv / (pn * pn)) * inv_m;
                }
            }
        }
        _ => {
            return Err(Error::Config(format!(
                "target representation does not match task kind {kind:?}"
            )))
        }
    }
    Ok((loss * inv_m, grad))
}

fn check_dense(pred: &Matrix, y: &Matrix) -> Result<()> {
    if pred.shape() != y.shape() {
        return Err(Error::DimMismatch {
            op: "masked_task_loss",
            left: pred.shape(),
            right: y.shape(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_is_free() {
        let p = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        for (kind, t) in [
            (TaskKind::Regression, Target::Dense(Matrix::zeros(2, 2))),
            (TaskKind::Classification, Target::Class(vec![0, 1])),
            (TaskKind::Direction, Target::Dense(Matrix::filled(2, 2, 1.0))),
        ] {
            let (l, g) = masked_task_loss(&p, &t, &[false, false], kind).unwrap();
            assert_eq!(l, 0.0);
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn perfect_predictions() {
        let y = Matrix::from_rows(&[[0.6, 0.8, 0.0], [0.0, 0.0, 1.0]]);
        let all = [true, true];
        let (l, _) = masked_task_loss(&y, &Target::Dense(y.clone()), &all, TaskKind::Regression).unwrap();
        assert_eq!(l, 0.0);
        let (l, _) = masked_task_loss(&y, &Target::Dense(y.clone()), &all, TaskKind::Direction).unwrap();
        assert!(l.abs() < 1e-15);
        let logits = Matrix::from_rows(&[[20.0, 0.0, 0.0], [0.0, 0.0, 20.0]]);
        let (l, _) = masked_task_loss(&logits, &Target::Class(vec![0, 2]), &all, TaskKind::Classification).unwrap();
        assert!(l < 1e-3, "{l}");
    }

    #[test]
    fn masked_row_is_ignored() {
        let p = Matrix::from_rows(&[[1.0, -2.0, 0.5], [9.0, 9.0, 9.0]]);
        let y = Matrix::from_rows(&[[0.0, 1.0, 1.0], [-5.0, 3.0, 2.0]]);
        let single_p = Matrix::from_rows(&[p.row(0).to_vec()]);
        let single_y = Matrix::from_rows(&[y.row(0).to_vec()]);
        for kind in [TaskKind::Regression, TaskKind::Direction] {
            let (two, g2) = masked_task_loss(&p, &Target::Dense(y.clone()), &[true, false], kind).unwrap();
            let (one, g1) = masked_task_loss(&single_p, &Target::Dense(single_y.clone()), &[true], kind).unwrap();
            assert_eq!(two, one);
            assert_eq!(g2.row(0), g1.row(0));
            assert!(g2.row(1).iter().all(|&v| v == 0.0));
        }
        let (two, _) = masked_task_loss(&p, &Target::Class(vec![2, 0]), &[true, false], TaskKind::Classification).unwrap();
        let (one, _) = masked_task_loss(&single_p, &Target::Class(vec![2]), &[true], TaskKind::Classification).unwrap();
        assert_eq!(two, one);
    }

    #[test]
    fn hand_values() {
        // MSE: ((1-0)^2 + (2-0)^2) / 2 = 2.5
        let p = Matrix::from_rows(&[[1.0, 2.0]]);
        let (l, g) = masked_task_loss(&p, &Target::Dense(Matrix::zeros(1, 2)), &[true], TaskKind::Regression).unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g.row(0), &[1.0, 2.0]);
        // CE with equal logits over 4 classes: ln 4
        let (l, _) = masked_task_loss(&Matrix::zeros(1, 4), &Target::Class(vec![3]), &[true], TaskKind::Classification).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        // orthogonal direction: 1 - 0
        let (l, _) = masked_task_loss(
            &Matrix::from_rows(&[[0.0, 2.0, 0.0]]),
            &Target::Dense(Matrix::from_rows(&[[1.0, 0.0, 0.0]])),
            &[true],
            TaskKind::Direction,
        )
        .unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn mismatched_targets() {
        let p = Matrix::zeros(2, 3);
        assert!(masked_task_loss(&p, &Target::Class(vec![0, 1]), &[true], TaskKind::Classification).is_err());
        assert!(masked_task_loss(&p, &Target::Class(vec![0, 3]), &[true, true], TaskKind::Classification).is_err());
        assert!(masked_task_loss(&p, &Target::Class(vec![0, 1]), &[true, true], TaskKind::Regression).is_err());
    }
}
