//! Empirical check of the feature-discrepancy bound
//!
//! ```text
//! |h'_1 - h'_2| <= L * |z_1 - z_2| + delta
//! ```
//!
//! where `h'_k = c_k^{-1}(z_k)`, `L` is a Lipschitz constant of the inverse
//! couplings and `delta` the largest gap between the two inverses evaluated
//! at the same latent. Both constants are estimated by sampling inside a ball
//! around the origin, so `L` here is a lower bound on the true constant over
//! that ball and the check applies a safety factor to it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::CouplingStack;
use crate::numerics::{dist2, Matrix, Prng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lipschitz_hat: f64,
    pub delta_hat: f64,
    /// Held-out pairs where the bound failed.
    pub violations: usize,
    /// Pairs where the two-term triangle decomposition failed (should be 0
    /// up to rounding).
    pub triangle_violations: usize,
    pub pairs_checked: usize,
    pub safety_factor: f64,
    /// max over pairs of lhs / bound.
    pub max_bound_ratio: f64,
}

/// `n` points drawn uniformly from the `dim`-ball of radius `radius`.
pub fn sample_ball(prng: &mut Prng, n: usize, dim: usize, radius: f64) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| prng.in_ball(dim, radius)).collect();
    Matrix::from_rows(&rows)
}

fn check_sampling(count: usize, radius: f64) -> Result<()> {
    if count == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Config(format!("radius must be positive, got {radius}")));
    }
    Ok(())
}

/// Largest secant ratio of `stack^{-1}` over pairs given row-wise.
pub fn lipschitz_from_pairs(stack: &CouplingStack, z: &Matrix, z_prime: &Matrix) -> Result<f64> {
    let h = stack.inverse(z)?;
    let h_prime = stack.inverse(z_prime)?;
    let mut best: Option<f64> = None;
    for i in 0..z.rows() {
        let dz = dist2(z.row(i), z_prime.row(i));
        if dz == 0.0 {
            continue;
        }
        let ratio = dist2(h.row(i), h_prime.row(i)) / dz;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or(Error::DegenerateSample)
}

/// `L^ = max |c^{-1}(z) - c^{-1}(z')| / |z - z'|` over `n_pairs` independent
/// pairs drawn uniformly from the ball of radius `radius`.
pub fn estimate_lipschitz(
    stack: &CouplingStack,
    prng: &mut Prng,
    n_pairs: usize,
    radius: f64,
) -> Result<f64> {
    check_sampling(n_pairs, radius)?;
    let z = sample_ball(prng, n_pairs, stack.dim(), radius);
    let z_prime = sample_ball(prng, n_pairs, stack.dim(), radius);
    lipschitz_from_pairs(stack, &z, &z_prime)
}

/// Largest `|a^{-1}(z) - b^{-1}(z)|` over the rows of `z`.
pub fn delta_from_points(a: &CouplingStack, b: &CouplingStack, z: &Matrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            op: "estimate_delta",
            left: (a.depth(), a.dim()),
            right: (b.depth(), b.dim()),
        });
    }
    let ha = a.inverse(z)?;
    let hb = b.inverse(z)?;
    Ok((0..z.rows())
        .map(|i| dist2(ha.row(i), hb.row(i)))
        .fold(0.0, f64::max))
}

pub fn estimate_delta(
    a: &CouplingStack,
    b: &CouplingStack,
    prng: &mut Prng,
    n_samples: usize,
    radius: f64,
) -> Result<f64> {
    check_sampling(n_samples, radius)?;
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            op: "estimate_delta",
            left: (a.depth(), a.dim()),
            right: (b.depth(), b.dim()),
        });
    }
    let z = sample_ball(prng, n_samples, a.dim(), radius);
    delta_from_points(a, b, &z)
}

/// Checks the bound on held-out latent pairs `(z1[i], z2[i])`, with
/// `h'_1 = a^{-1}(z1)` and `h'_2 = b^{-1}(z2)`.
pub fn lemma_bound_check(
    a: &CouplingStack,
    b: &CouplingStack,
    z1: &Matrix,
    z2: &Matrix,
    lipschitz_hat: f64,
    delta_hat: f64,
    safety: f64,
) -> Result<LemmaReport> {
    if z1.shape() != z2.shape() {
        return Err(Error::DimMismatch {
            op: "lemma_bound_check",
            left: z1.shape(),
            right: z2.shape(),
        });
    }
    let h1 = a.inverse(z1)?;
    let h2 = b.inverse(z2)?;
    let a_of_z2 = a.inverse(z2)?;

    let mut violations = 0;
    let mut triangle_violations = 0;
    let mut max_ratio = 0.0_f64;
    for i in 0..z1.rows() {
        let lhs = dist2(h1.row(i), h2.row(i));
        let dz = dist2(z1.row(i), z2.row(i));
        let bound = safety * lipschitz_hat * dz + delta_hat;
        if lhs > bound {
            violations += 1;
        }
        if bound > 0.0 {
            max_ratio = max_ratio.max(lhs / bound);
        } else if lhs > 0.0 {
            max_ratio = f64::INFINITY;
        }
        // |a^-1(z1) - b^-1(z2)| <= |a^-1(z1) - a^-1(z2)| + |a^-1(z2) - b^-1(z2)|
        let first = dist2(h1.row(i), a_of_z2.row(i));
        let second = dist2(a_of_z2.row(i), h2.row(i));
        if lhs > (first + second) * (1.0 + 4.0 * f64::EPSILON) {
            triangle_violations += 1;
        }
    }
    Ok(LemmaReport {
        lipschitz_hat,
        delta_hat,
        violations,
        triangle_violations,
        pairs_checked: z1.rows(),
        safety_factor: safety,
        max_bound_ratio: max_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaProtocol {
    pub estimation_samples: usize,
    pub held_out_pairs: usize,
    pub radius: f64,
    pub safety: f64,
}

impl Default for LemmaProtocol {
    fn default() -> Self {
        Self {
            estimation_samples: 10_000,
            held_out_pairs: 1_000,
            radius: 3.0,
            safety: 1.5,
        }
    }
}

/// Full protocol: estimate `L^` (the larger of the two inverses' estimates)
/// and `delta^` on one sample, then check the bound on independent held-out
/// pairs.
pub fn run_lemma_protocol(
    a: &CouplingStack,
    b: &CouplingStack,
    prng: &mut Prng,
    proto: &LemmaProtocol,
) -> Result<LemmaReport> {
    let l_a = estimate_lipschitz(a, prng, proto.estimation_samples, proto.radius)?;
    let l_b = estimate_lipschitz(b, prng, proto.estimation_samples, proto.radius)?;
    let delta = estimate_delta(a, b, prng, proto.estimation_samples, proto.radius)?;
    let z1 = sample_ball(prng, proto.held_out_pairs, a.dim(), proto.radius);
    let z2 = sample_ball(prng, proto.held_out_pairs, a.dim(), proto.radius);
    lemma_bound_check(a, b, &z1, &z2, l_a.max(l_b), delta, proto.safety)
}
