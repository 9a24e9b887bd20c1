//! Per-task surrogate branch: an aggregator MLP compresses the task feature
//! `h_i` into a shared-width embedding `h'_i`, and a coupling stack maps that
//! bijectively to the latent `z_i` used for alignment.
//!
//! Surrogates only read task features; the task heads never see their output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    Activation, CouplingStack, Mlp, MlpCache, MlpGrads, ParamSet, StackCache, StackGrads,
    DEFAULT_CLAMP,
};
use crate::numerics::{Matrix, Prng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Shared embedding / latent width N. Must be even.
    pub embed_dim: usize,
    /// Number of coupling layers; 0 leaves only the aggregator.
    pub depth: usize,
    /// Hidden width of the s/t conditioner nets; `None` means 2N.
    pub coupling_hidden: Option<usize>,
    /// Scale-exponent clamp; `None` disables clamping.
    pub clamp: Option<f64>,
    /// Hidden widths of the aggregator; empty gives a single dense layer.
    pub aggregator_hidden: Vec<usize>,
    pub aggregator_activation: Activation,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            depth: 6,
            coupling_hidden: None,
            clamp: Some(DEFAULT_CLAMP),
            aggregator_hidden: Vec::new(),
            aggregator_activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModule {
    pub task_id: usize,
    pub aggregator: Mlp,
    pub coupling: CouplingStack,
}

#[derive(Debug, Clone)]
pub struct SurrogateCache {
    agg: MlpCache,
    stack: StackCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGrads {
    pub aggregator: MlpGrads,
    pub coupling: StackGrads,
}

impl SurrogateModule {
    pub fn new(task_id: usize, aggregator: Mlp, coupling: CouplingStack) -> Result<Self> {
        if aggregator.output_dim() != coupling.dim() {
            return Err(Error::Task {
                task: task_id,
                detail: format!(
                    "aggregator emits {} dims but coupling expects {}",
                    aggregator.output_dim(),
                    coupling.dim()
                ),
            });
        }
        Ok(Self {
            task_id,
            aggregator,
            coupling,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.aggregator.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.coupling.dim()
    }

    /// Returns `(h_embed, z, cache)`.
    pub fn forward(&self, h: &Matrix) -> Result<(Matrix, Matrix, SurrogateCache)> {
        if h.cols() != self.feature_dim() {
            return Err(Error::Task {
                task: self.task_id,
                detail: format!(
                    "surrogate expects feature width {}, got {:?}",
                    self.feature_dim(),
                    h.shape()
                ),
            });
        }
        let (h_embed, agg) = self.aggregator.forward(h)?;
        let (z, stack) = self.coupling.forward(&h_embed)?;
        Ok((h_embed, z, SurrogateCache { agg, stack }))
    }

    /// Chains the coupling backward into the aggregator backward; the returned
    /// matrix is the gradient reaching the task feature `h_i`.
    pub fn backward(
        &self,
        cache: &SurrogateCache,
        grad_z: &Matrix,
    ) -> Result<(Matrix, SurrogateGrads)> {
        let tag = |e: Error| match e {
            Error::CacheMismatch { op, detail } => Error::CacheMismatch {
                op,
                detail: format!("task {}: {detail}", self.task_id),
            },
            other => other,
        };
        let (g_embed, coupling) = self.coupling.backward(&cache.stack, grad_z).map_err(tag)?;
        let (g_h, aggregator) = self.aggregator.backward(&cache.agg, &g_embed).map_err(tag)?;
        Ok((
            g_h,
            SurrogateGrads {
                aggregator,
                coupling,
            },
        ))
    }
}

impl SurrogateGrads {
    pub fn zeros_like(m: &SurrogateModule) -> Self {
        Self {
            aggregator: MlpGrads::zeros_like(&m.aggregator),
            coupling: StackGrads::zeros_like(&m.coupling),
        }
    }
}

/// One independently initialised surrogate per task, all emitting
/// `cfg.embed_dim`-wide latents. Coupling stacks start as the identity.
pub fn build_surrogates(
    task_dims: &[usize],
    cfg: &SurrogateConfig,
    prng: &mut Prng,
) -> Result<Vec<SurrogateModule>> {
    let n = cfg.embed_dim;
    if n % 2 != 0 {
        return Err(Error::OddWidth(n));
    }
    let hidden = cfg.coupling_hidden.unwrap_or(2 * n);
    task_dims
        .iter()
        .enumerate()
        .map(|(task, &d)| {
            let mut dims = vec![d];
            dims.extend_from_slice(&cfg.aggregator_hidden);
            dims.push(n);
            let aggregator = Mlp::new(
                &dims,
                Activation::Tanh,
                cfg.aggregator_activation,
                prng,
            );
            let coupling = CouplingStack::new(n, cfg.depth, hidden, cfg.clamp, prng)?;
            SurrogateModule::new(task, aggregator, coupling)
        })
        .collect()
}

impl ParamSet for SurrogateModule {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        self.aggregator.visit(f);
        self.coupling.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        self.aggregator.visit_mut(f);
        self.coupling.visit_mut(f);
    }
}

impl ParamSet for SurrogateGrads {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        self.aggregator.visit(f);
        self.coupling.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        self.aggregator.visit_mut(f);
        self.coupling.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::DenseLayer;

    #[test]
    fn shape_contract() {
        let cfg = SurrogateConfig {
            embed_dim: 16,
            ..Default::default()
        };
        let mods = build_surrogates(&[32, 48], &cfg, &mut Prng::new(1)).unwrap();
        assert_eq!(mods.len(), 2);
        let mut p = Prng::new(2);
        for (m, d) in mods.iter().zip([32, 48]) {
            let (e, z, _) = m.forward(&p.gaussian(3, d)).unwrap();
            assert_eq!(e.shape(), (3, 16));
            assert_eq!(z.shape(), (3, 16));
        }
    }

    #[test]
    fn neutral_coupling_passes_embedding() {
        let mods = build_surrogates(&[10], &SurrogateConfig::default(), &mut Prng::new(3)).unwrap();
        let (e, z, _) = mods[0].forward(&Prng::new(4).gaussian(5, 10)).unwrap();
        assert_eq!(e, z);
    }

    #[test]
    fn depth_zero_is_aggregator_only() {
        let cfg = SurrogateConfig {
            depth: 0,
            ..Default::default()
        };
        let mods = build_surrogates(&[8, 8], &cfg, &mut Prng::new(5)).unwrap();
        assert_eq!(mods[0].coupling.depth(), 0);
        let h = Prng::new(6).gaussian(4, 8);
        let (e, z, _) = mods[1].forward(&h).unwrap();
        assert_eq!(e, z);
        assert_eq!(z, mods[1].aggregator.apply(&h).unwrap());
    }

    #[test]
    fn zero_aggregator_broadcasts_bias() {
        let agg = Mlp {
            layers: vec![DenseLayer {
                weight: Matrix::zeros(4, 3),
                bias: vec![0.5, -1.0, 2.0, 0.0],
                activation: Activation::Identity,
            }],
        };
        let mut p = Prng::new(7);
        let stack = CouplingStack::random(4, 2, 8, Some(2.0), &mut p).unwrap();
        let m = SurrogateModule::new(0, agg, stack).unwrap();
        let (e, z, _) = m.forward(&p.gaussian(3, 3)).unwrap();
        for i in 0..3 {
            assert_eq!(e.row(i), &[0.5, -1.0, 2.0, 0.0]);
        }
        assert!(z.is_finite());
    }

    #[test]
    fn identity_surrogate_backward() {
        let agg = Mlp {
            layers: vec![DenseLayer {
                weight: Matrix::identity(4),
                bias: vec![0.0; 4],
                activation: Activation::Identity,
            }],
        };
        let mut p = Prng::new(8);
        let stack = CouplingStack::new(4, 3, 8, Some(2.0), &mut p).unwrap();
        let m = SurrogateModule::new(0, agg, stack).unwrap();
        let (_, _, cache) = m.forward(&p.gaussian(2, 4)).unwrap();
        let gz = p.gaussian(2, 4);
        assert_eq!(m.backward(&cache, &gz).unwrap().0, gz);
        let (gh, grads) = m.backward(&cache, &Matrix::zeros(2, 4)).unwrap();
        assert_eq!(gh.max_abs(), 0.0);
        assert!(grads.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn modules_are_independent() {
        let mut mods =
            build_surrogates(&[6, 6, 6], &SurrogateConfig::default(), &mut Prng::new(9)).unwrap();
        let h = Prng::new(10).gaussian(3, 6);
        let before: Vec<Matrix> = mods.iter().map(|m| m.forward(&h).unwrap().1).collect();
        mods[1].scale_all(1.7);
        let after: Vec<Matrix> = mods.iter().map(|m| m.forward(&h).unwrap().1).collect();
        assert_eq!(before[0], after[0]);
        assert_eq!(before[2], after[2]);
        assert_ne!(before[1], after[1]);
        assert_ne!(mods[0].to_flat(), mods[2].to_flat());
    }

    #[test]
    fn errors_name_the_task() {
        let mods = build_surrogates(&[6, 7], &SurrogateConfig::default(), &mut Prng::new(11)).unwrap();
        let err = mods[1].forward(&Matrix::zeros(1, 6)).unwrap_err();
        assert!(matches!(err, Error::Task { task: 1, .. }));
        let odd = SurrogateConfig {
            embed_dim: 5,
            ..Default::default()
        };
        assert_eq!(
            build_surrogates(&[6], &odd, &mut Prng::new(12)).unwrap_err(),
            Error::OddWidth(5)
        );
    }
}
