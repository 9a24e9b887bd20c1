//! Central finite differences for checking analytic gradients.

use serde::{Deserialize, Serialize};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-8;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub len: usize,
    pub max_abs_err: f64,
    /// Largest `|a - n| / max(|a|, |n|)` among entries above the floor.
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub passed: bool,
}

/// Entry `i` passes when `|a - n| <= max(rel_tol * max(|a|, |n|), abs_floor)`.
pub fn compare(analytic: &[f64], numeric: &[f64], rel_tol: f64, abs_floor: f64) -> GradCheck {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let mut max_abs_err = 0.0_f64;
    let mut max_rel_err = 0.0_f64;
    let mut worst_index = None;
    let mut worst_excess = 0.0_f64;
    let mut passed = true;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let err = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let allowed = (rel_tol * scale).max(abs_floor);
        max_abs_err = max_abs_err.max(err);
        if err > abs_floor && scale > 0.0 {
            max_rel_err = max_rel_err.max(err / scale);
        }
        if !(err <= allowed) {
            passed = false;
        }
        let excess = err / allowed;
        if !(excess <= worst_excess) {
            worst_excess = excess;
            worst_index = Some(i);
        }
    }
    GradCheck {
        len: analytic.len(),
        max_abs_err,
        max_rel_err,
        worst_index,
        passed,
    }
}

/// Finite-difference check with the default step and tolerances.
pub fn check(analytic: &[f64], x: &[f64], f: impl FnMut(&[f64]) -> f64) -> GradCheck {
    let numeric = fd_gradient(x, FD_STEP, f);
    compare(analytic, &numeric, REL_TOL, ABS_FLOOR)
}
