//! Self-contained property suite: coupling round trips, finite-difference
//! gradient checks, alignment-loss identities and the sampled
//! feature-discrepancy bound.

use serde::{Deserialize, Serialize};

use crate::alignment::{align_center, align_pairwise, AlignNorm, AlignVariant, AlignmentConfig};
use crate::diagnostics::{run_lemma_protocol, LemmaProtocol, LemmaReport};
use crate::error::Result;
use crate::layers::{Activation, CouplingLayer, CouplingStack, Mlp, ParamSet};
use crate::numerics::gradcheck::{self, GradCheck};
use crate::numerics::{Matrix, Prng};
use crate::surrogate::SurrogateModule;
use crate::synthbench::TaskKind;
use crate::trainer::{masked_task_loss, ModelConfig, MtlModel, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub const ROUND_TRIP_DEPTHS: [usize; 5] = [1, 2, 4, 6, 8];
pub const ROUND_TRIP_TOL: f64 = 1e-8;

/// Largest `|c^{-1}(c(h)) - h|_inf` over `n` random `dim`-wide inputs, for a
/// random stack of each depth. With `fault` the clamp is removed and the
/// scale networks' output weights multiplied by 200.
pub fn round_trip_errors(seed: u64, depths: &[usize], n: usize, dim: usize, fault: bool) -> Result<Vec<(usize, f64)>> {
    let mut prng = Prng::stream(seed, 20);
    depths
        .iter()
        .map(|&depth| {
            let clamp = if fault { None } else { Some(crate::layers::DEFAULT_CLAMP) };
            let mut stack = CouplingStack::random(dim, depth, 2 * dim, clamp, &mut prng)?;
            if fault {
                for layer in &mut stack.layers {
                    if let Some(last) = layer.s_net.layers.last_mut() {
                        last.weight.as_mut_slice().iter_mut().for_each(|w| *w *= 200.0);
                    }
                }
            }
            let h = prng.gaussian(n, dim);
            let back = stack.inverse(&stack.apply(&h)?)?;
            let err = h
                .as_slice()
                .iter()
                .zip(back.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, |m: f64, e| if e.is_nan() || m.is_nan() { f64::NAN } else { m.max(e) });
            Ok((depth, err))
        })
        .collect()
}

pub fn check_round_trips(seed: u64, fault: bool) -> Result<PropertyResult> {
    let errs = round_trip_errors(seed, &ROUND_TRIP_DEPTHS, 100, 16, fault)?;
    let passed = errs.iter().all(|&(_, e)| e < ROUND_TRIP_TOL);
    let detail = errs
        .iter()
        .map(|(d, e)| format!("depth {d}: {e:.3e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(PropertyResult::new("round_trip", passed, detail))
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn weighted_sum(out: &Matrix, w: &Matrix) -> f64 {
    out.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

/// Checks d/d(x, params) of `sum(w * forward(x))` for any module with a
/// forward/backward pair.
fn check_module<M: ParamSet + Clone>(
    module: &M,
    x: &Matrix,
    w: &Matrix,
    forward: impl Fn(&M, &Matrix) -> Matrix,
    backward: impl Fn(&M, &Matrix, &Matrix) -> (Matrix, Vec<f64>),
) -> GradCheck {
    let (gx, gp) = backward(module, x, w);
    let analytic = concat(&[gx.as_slice(), &gp]);
    let nx = x.as_slice().len();
    let point = concat(&[x.as_slice(), &module.to_flat()]);
    let mut probe = module.clone();
    gradcheck::check(&analytic, &point, |v| {
        let xm = Matrix::from_vec(x.rows(), x.cols(), v[..nx].to_vec()).expect("shape");
        probe.assign_flat(&v[nx..]);
        weighted_sum(&forward(&probe, &xm), w)
    })
}

fn pick_activation(prng: &mut Prng) -> Activation {
    match prng.below(3) {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        _ => Activation::Identity,
    }
}

/// One random instance of every differentiable block.
pub fn gradient_checks_for(seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut p = Prng::stream(seed, 21);
    let mut out = Vec::new();
    let rows = 2 + p.below(4);

    // dense network
    let dims = [2 + p.below(4), 2 + p.below(5), 1 + p.below(4)];
    let (h_act, o_act) = (pick_activation(&mut p), pick_activation(&mut p));
    let mut mlp = Mlp::new(&dims, h_act, o_act, &mut p);
    // zero biases can put a relu exactly on its kink
    for layer in &mut mlp.layers {
        layer.bias = p.normal_vec(layer.bias.len());
    }
    let x = p.gaussian(rows, dims[0]);
    let w = p.gaussian(rows, dims[2]);
    out.push((
        "mlp",
        check_module(
            &mlp,
            &x,
            &w,
            |m, x| m.apply(x).expect("forward"),
            |m, x, w| {
                let (_, c) = m.forward(x).expect("forward");
                let (gx, g) = m.backward(&c, w).expect("backward");
                (gx, g.to_flat())
            },
        ),
    ));

    // coupling layer and stack, clamp on or off
    let dim = 2 * (1 + p.below(3));
    let clamp = if p.below(2) == 0 { Some(2.0) } else { None };
    let layer = CouplingLayer::random(dim, p.below(2) == 1, 3 + p.below(4), clamp, &mut p)?;
    let x = p.gaussian(rows, dim);
    let w = p.gaussian(rows, dim);
    out.push((
        "coupling_layer",
        check_module(
            &layer,
            &x,
            &w,
            |m, x| m.forward(x).expect("forward").0,
            |m, x, w| {
                let (_, c) = m.forward(x).expect("forward");
                let (gx, g) = m.backward(&c, w).expect("backward");
                (gx, g.to_flat())
            },
        ),
    ));
    let stack = CouplingStack::random(dim, 1 + p.below(4), 4, Some(2.0), &mut p)?;
    out.push((
        "coupling_stack",
        check_module(
            &stack,
            &x,
            &w,
            |m, x| m.apply(x).expect("forward"),
            |m, x, w| {
                let (_, c) = m.forward(x).expect("forward");
                let (gx, g) = m.backward(&c, w).expect("backward");
                (gx, g.to_flat())
            },
        ),
    ));

    // surrogate: aggregator into coupling stack
    let feat = 3 + p.below(4);
    let agg = Mlp::new(&[feat, 6, dim], Activation::Tanh, Activation::Tanh, &mut p);
    let sur = SurrogateModule::new(0, agg, CouplingStack::random(dim, 2, 5, Some(2.0), &mut p)?)?;
    let x = p.gaussian(rows, feat);
    let w = p.gaussian(rows, dim);
    out.push((
        "surrogate",
        check_module(
            &sur,
            &x,
            &w,
            |m, x| m.forward(x).expect("forward").1,
            |m, x, w| {
                let (_, _, c) = m.forward(x).expect("forward");
                let (gx, g) = m.backward(&c, w).expect("backward");
                (gx, g.to_flat())
            },
        ),
    ));

    // alignment objectives with respect to every latent
    let n_tasks = 2 + p.below(2);
    let latents: Vec<Matrix> = (0..n_tasks).map(|_| p.gaussian(rows, dim)).collect();
    for (name, variant, norm) in [
        ("align_pairwise_l2", AlignVariant::Pairwise, AlignNorm::L2),
        ("align_pairwise_sq", AlignVariant::Pairwise, AlignNorm::SquaredL2),
        ("align_center_l2", AlignVariant::Center, AlignNorm::L2),
        ("align_center_sq", AlignVariant::Center, AlignNorm::SquaredL2),
    ] {
        let cfg = AlignmentConfig {
            variant,
            norm,
            lambda: 1.0,
        };
        let out_a = crate::alignment::align(&latents, &cfg)?;
        let analytic: Vec<f64> = out_a.grads.iter().flat_map(|g| g.as_slice().to_vec()).collect();
        let point: Vec<f64> = latents.iter().flat_map(|z| z.as_slice().to_vec()).collect();
        let chunk = rows * dim;
        let r = gradcheck::check(&analytic, &point, |v| {
            let zs: Vec<Matrix> = v
                .chunks(chunk)
                .map(|c| Matrix::from_vec(rows, dim, c.to_vec()).expect("shape"))
                .collect();
            crate::alignment::align(&zs, &cfg).expect("align").loss
        });
        out.push((name, r));
    }

    // masked task losses with respect to predictions
    let mut mask: Vec<bool> = (0..rows).map(|_| p.below(3) > 0).collect();
    mask[0] = true;
    let width = 3;
    let pred = p.gaussian(rows, width);
    for (name, kind, target) in [
        ("loss_regression", TaskKind::Regression, Target::Dense(p.gaussian(rows, width))),
        (
            "loss_classification",
            TaskKind::Classification,
            Target::Class((0..rows).map(|_| p.below(width)).collect()),
        ),
        ("loss_direction", TaskKind::Direction, Target::Dense(p.gaussian(rows, width))),
    ] {
        let (_, g) = masked_task_loss(&pred, &target, &mask, kind)?;
        let r = gradcheck::check(g.as_slice(), pred.as_slice(), |v| {
            let pm = Matrix::from_vec(rows, width, v.to_vec()).expect("shape");
            masked_task_loss(&pm, &target, &mask, kind).expect("loss").0
        });
        out.push((name, r));
    }

    out.push(("model_objective", model_objective_check(&mut p)?));
    Ok(out)
}

/// End-to-end: task losses plus weighted alignment, through every parameter.
fn model_objective_check(p: &mut Prng) -> Result<GradCheck> {
    let kinds = [TaskKind::Regression, TaskKind::Classification];
    let cfg = ModelConfig {
        encoder_hidden: vec![5],
        shared_dim: 4,
        head_hidden: 4,
        activation: Activation::Tanh,
    };
    let sc = crate::surrogate::SurrogateConfig {
        embed_dim: 4,
        depth: 2,
        coupling_hidden: Some(4),
        ..Default::default()
    };
    let mut model = MtlModel::new(3, &kinds, &[2, 3], &cfg, Some(&sc), &mut Prng::new(p.next_u64()), &mut Prng::new(p.next_u64()))?;
    // leave the identity initialisation so the coupling parameters matter
    for s in &mut model.surrogates {
        s.coupling = CouplingStack::random(4, 2, 4, Some(2.0), p)?;
    }
    let rows = 4;
    let x = p.gaussian(rows, 3);
    let y1 = Target::Dense(p.gaussian(rows, 2));
    let y2 = Target::Class((0..rows).map(|_| p.below(3)).collect());
    let m1 = vec![true, true, false, false];
    let m2 = vec![false, false, true, true];
    let lambda = 0.7;
    let align_cfg = AlignmentConfig::default();
    let objective = |m: &MtlModel| -> Result<(f64, Vec<f64>)> {
        let f = m.forward(&x)?;
        let (l1, g1) = masked_task_loss(&f.predictions[0], &y1, &m1, kinds[0])?;
        let (l2, g2) = masked_task_loss(&f.predictions[1], &y2, &m2, kinds[1])?;
        let a = crate::alignment::align(&f.z, &align_cfg)?;
        let gz: Vec<Matrix> = a.grads.iter().map(|g| g.scale(lambda)).collect();
        let grads = m.backward(&f.cache, &[g1, g2], Some(&gz), false)?;
        Ok((l1 + l2 + lambda * a.loss, grads.to_flat()))
    };
    let (_, analytic) = objective(&model)?;
    let mut probe = model.clone();
    Ok(gradcheck::check(&analytic, &model.to_flat(), |v| {
        probe.assign_flat(v);
        objective(&probe).expect("objective").0
    }))
}

pub fn check_gradients(seed: u64, configs: usize) -> Result<Vec<PropertyResult>> {
    let mut by_name: Vec<(&'static str, usize, usize, f64)> = Vec::new();
    for k in 0..configs {
        for (name, r) in gradient_checks_for(seed.wrapping_mul(1000).wrapping_add(k as u64))? {
            match by_name.iter_mut().find(|e| e.0 == name) {
                Some(e) => {
                    e.1 += 1;
                    e.2 += r.passed as usize;
                    e.3 = e.3.max(r.max_rel_err);
                }
                None => by_name.push((name, 1, r.passed as usize, r.max_rel_err)),
            }
        }
    }
    Ok(by_name
        .into_iter()
        .map(|(name, total, ok, rel)| {
            PropertyResult::new(
                format!("gradient/{name}"),
                ok == total,
                format!("{ok}/{total} configurations, max rel err above floor {rel:.2e}"),
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub pairwise_vs_center: f64,
    pub translation: f64,
    pub permutation: f64,
}

/// Worst deviations over `trials` random instances: two-task pairwise vs
/// centre (l2), and translation / task-permutation invariance of both losses
/// under both norms.
pub fn loss_identity_report(seed: u64, trials: usize) -> Result<IdentityReport> {
    let mut p = Prng::stream(seed, 22);
    let mut rep = IdentityReport {
        pairwise_vs_center: 0.0,
        translation: 0.0,
        permutation: 0.0,
    };
    for _ in 0..trials {
        let dim = 1 + p.below(16);
        let pair = [p.gaussian(1, dim), p.gaussian(1, dim)];
        let a = align_pairwise(&pair, AlignNorm::L2)?.loss;
        let b = align_center(&pair, AlignNorm::L2)?.loss;
        rep.pairwise_vs_center = rep.pairwise_vs_center.max((a - b).abs());

        let n = 2 + p.below(3);
        let rows = 1 + p.below(4);
        let zs: Vec<Matrix> = (0..n).map(|_| p.gaussian(rows, dim)).collect();
        let shift = p.normal_vec(dim);
        let moved: Vec<Matrix> = zs
            .iter()
            .map(|z| {
                let mut m = z.clone();
                m.add_row_vector(&shift).expect("width");
                m
            })
            .collect();
        let mut perm = zs.clone();
        p.shuffle(&mut perm);
        for f in [align_pairwise, align_center] {
            for norm in [AlignNorm::L2, AlignNorm::SquaredL2] {
                let base = f(&zs, norm)?.loss;
                rep.translation = rep.translation.max((f(&moved, norm)?.loss - base).abs());
                rep.permutation = rep.permutation.max((f(&perm, norm)?.loss - base).abs());
            }
        }
    }
    Ok(rep)
}

pub fn check_loss_identities(seed: u64) -> Result<Vec<PropertyResult>> {
    let r = loss_identity_report(seed, 1000)?;
    Ok(vec![
        PropertyResult::new(
            "loss/pairwise_equals_center_n2",
            r.pairwise_vs_center <= 1e-12,
            format!("max diff {:.2e}", r.pairwise_vs_center),
        ),
        PropertyResult::new(
            "loss/translation_invariance",
            r.translation <= 1e-10,
            format!("max diff {:.2e}", r.translation),
        ),
        PropertyResult::new(
            "loss/permutation_invariance",
            r.permutation <= 1e-10,
            format!("max diff {:.2e}", r.permutation),
        ),
    ])
}

/// The sampled bound on `pairs` random depth-6 stack pairs.
pub fn lemma_reports(seed: u64, pairs: usize, proto: &LemmaProtocol) -> Result<Vec<LemmaReport>> {
    (0..pairs)
        .map(|k| {
            let mut p = Prng::stream(seed.wrapping_mul(31).wrapping_add(k as u64), 23);
            let a = CouplingStack::random(16, 6, 32, Some(2.0), &mut p)?;
            let b = CouplingStack::random(16, 6, 32, Some(2.0), &mut p)?;
            run_lemma_protocol(&a, &b, &mut p, proto)
        })
        .collect()
}

pub fn check_lemma(seed: u64) -> Result<PropertyResult> {
    let reps = lemma_reports(seed, 5, &LemmaProtocol::default())?;
    let violations: usize = reps.iter().map(|r| r.violations).sum();
    let triangle: usize = reps.iter().map(|r| r.triangle_violations).sum();
    let worst = reps.iter().map(|r| r.max_bound_ratio).fold(0.0, f64::max);
    Ok(PropertyResult::new(
        "lemma_bound",
        violations == 0 && triangle == 0,
        format!(
            "{} stack pairs, {violations} bound violations, {triangle} triangle violations, max lhs/bound {worst:.3}",
            reps.len()
        ),
    ))
}

/// Full suite. `fault` sabotages the round-trip property only.
pub fn run_suite(seed: u64, fault: bool) -> Result<Vec<PropertyResult>> {
    let mut out = vec![check_round_trips(seed, fault)?];
    out.extend(check_gradients(seed, 20)?);
    out.extend(check_loss_identities(seed)?);
    out.push(check_lemma(seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_hold_and_fault_breaks_them() {
        assert!(check_round_trips(0, false).unwrap().passed);
        let bad = check_round_trips(0, true).unwrap();
        assert!(!bad.passed, "{}", bad.detail);
    }

    #[test]
    fn one_gradient_configuration() {
        for (name, r) in gradient_checks_for(7).unwrap() {
            assert!(r.passed, "{name}: {r:?}");
        }
    }

    #[test]
    fn identities_hold() {
        let r = loss_identity_report(1, 50).unwrap();
        assert!(r.pairwise_vs_center <= 1e-12);
        assert!(r.translation <= 1e-10 && r.permutation <= 1e-10);
    }
}
