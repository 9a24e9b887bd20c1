use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Activation, Mlp, MlpCache, MlpGrads, ParamSet};
use crate::numerics::{Matrix, Prng};
use crate::surrogate::{
    build_surrogates, SurrogateCache, SurrogateConfig, SurrogateGrads, SurrogateModule,
};
use crate::synthbench::TaskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_hidden: Vec<usize>,
    pub shared_dim: usize,
    /// Width of each head's last hidden layer, the feature `h_i`.
    pub head_hidden: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![64],
            shared_dim: 32,
            head_hidden: 32,
            activation: Activation::Tanh,
        }
    }
}

/// Head split at its last hidden activation: `h_i = trunk(shared)`,
/// `prediction = out(h_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub trunk: Mlp,
    pub out: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtlModel {
    pub encoder: Mlp,
    pub heads: Vec<TaskHead>,
    pub kinds: Vec<TaskKind>,
    /// Empty when no surrogate branch is attached.
    pub surrogates: Vec<SurrogateModule>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    encoder: MlpCache,
    trunks: Vec<MlpCache>,
    outs: Vec<MlpCache>,
    surrogates: Vec<SurrogateCache>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub shared: Matrix,
    pub predictions: Vec<Matrix>,
    pub h: Vec<Matrix>,
    /// Aggregator outputs `h'_i`; empty without surrogates.
    pub h_embed: Vec<Matrix>,
    /// Latents `z_i`; empty without surrogates.
    pub z: Vec<Matrix>,
    pub cache: ForwardCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub trunk: MlpGrads,
    pub out: MlpGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: MlpGrads,
    pub heads: Vec<HeadGrads>,
    pub surrogates: Vec<SurrogateGrads>,
}

impl MtlModel {
    /// Backbone weights come from `model_rng`, surrogate weights from
    /// `surrogate_rng`, so attaching surrogates never changes the backbone.
    pub fn new(
        d_in: usize,
        kinds: &[TaskKind],
        out_dims: &[usize],
        cfg: &ModelConfig,
        surrogate: Option<&SurrogateConfig>,
        model_rng: &mut Prng,
        surrogate_rng: &mut Prng,
    ) -> Result<Self> {
        if kinds.len() != out_dims.len() || kinds.is_empty() {
            return Err(Error::Config(format!(
                "{} task kinds for {} output widths",
                kinds.len(),
                out_dims.len()
            )));
        }
        let mut dims = vec![d_in];
        dims.extend_from_slice(&cfg.encoder_hidden);
        dims.push(cfg.shared_dim);
        let encoder = Mlp::new(&dims, cfg.activation, cfg.activation, model_rng);
        let heads = out_dims
            .iter()
            .map(|&o| TaskHead {
                trunk: Mlp::new(&[cfg.shared_dim, cfg.head_hidden], cfg.activation, cfg.activation, model_rng),
                out: Mlp::new(&[cfg.head_hidden, o], Activation::Identity, Activation::Identity, model_rng),
            })
            .collect();
        let surrogates = match surrogate {
            Some(sc) => build_surrogates(&vec![cfg.head_hidden; kinds.len()], sc, surrogate_rng)?,
            None => Vec::new(),
        };
        Ok(Self {
            encoder,
            heads,
            kinds: kinds.to_vec(),
            surrogates,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn has_surrogates(&self) -> bool {
        !self.surrogates.is_empty()
    }

    /// Parameters before the surrogate block in `ParamSet` order.
    pub fn backbone_param_count(&self) -> usize {
        self.encoder.param_count()
            + self
                .heads
                .iter()
                .map(|h| h.trunk.param_count() + h.out.param_count())
                .sum::<usize>()
    }

    /// Runs every head on every sample, and every surrogate on its head's
    /// feature.
    pub fn forward(&self, x: &Matrix) -> Result<Forward> {
        let (shared, enc_cache) = self.encoder.forward(x)?;
        let n = self.n_tasks();
        let mut predictions = Vec::with_capacity(n);
        let mut hs = Vec::with_capacity(n);
        let mut trunks = Vec::with_capacity(n);
        let mut outs = Vec::with_capacity(n);
        for (t, head) in self.heads.iter().enumerate() {
            let tag = |e: Error| Error::Task {
                task: t,
                detail: e.to_string(),
            };
            let (h, tc) = head.trunk.forward(&shared).map_err(tag)?;
            let (p, oc) = head.out.forward(&h).map_err(tag)?;
            predictions.push(p);
            hs.push(h);
            trunks.push(tc);
            outs.push(oc);
        }
        let mut h_embed = Vec::with_capacity(self.surrogates.len());
        let mut z = Vec::with_capacity(self.surrogates.len());
        let mut surrogates = Vec::with_capacity(self.surrogates.len());
        for (s, h) in self.surrogates.iter().zip(&hs) {
            let (e, zz, c) = s.forward(h)?;
            h_embed.push(e);
            z.push(zz);
            surrogates.push(c);
        }
        Ok(Forward {
            shared,
            predictions,
            h: hs,
            h_embed,
            z,
            cache: ForwardCache {
                encoder: enc_cache,
                trunks,
                outs,
                surrogates,
            },
        })
    }

    /// Task-head predictions only.
    pub fn predict(&self, x: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        let shared = self.encoder.apply(x)?;
        let preds = self
            .heads
            .iter()
            .map(|h| h.out.apply(&h.trunk.apply(&shared)?))
            .collect::<Result<Vec<_>>>()?;
        Ok((shared, preds))
    }

    /// Backpropagates prediction gradients and, when given, latent gradients.
    /// With `stop_at_h` the latent gradients train the surrogates only.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_predictions: &[Matrix],
        grad_z: Option<&[Matrix]>,
        stop_at_h: bool,
    ) -> Result<ModelGrads> {
        if grad_predictions.len() != self.n_tasks() {
            return Err(Error::CacheMismatch {
                op: "model_backward",
                detail: format!(
                    "{} prediction gradients for {} tasks",
                    grad_predictions.len(),
                    self.n_tasks()
                ),
            });
        }
        let mut surrogate_grads: Vec<SurrogateGrads> =
            self.surrogates.iter().map(SurrogateGrads::zeros_like).collect();
        let mut grad_h_align: Vec<Option<Matrix>> = vec![None; self.n_tasks()];
        if let Some(gz) = grad_z {
            if gz.len() != self.surrogates.len() {
                return Err(Error::CacheMismatch {
                    op: "model_backward",
                    detail: format!(
                        "{} latent gradients for {} surrogates",
                        gz.len(),
                        self.surrogates.len()
                    ),
                });
            }
            for (t, (s, g)) in self.surrogates.iter().zip(gz).enumerate() {
                let (gh, sg) = s.backward(&cache.surrogates[t], g)?;
                surrogate_grads[t] = sg;
                if !stop_at_h {
                    grad_h_align[t] = Some(gh);
                }
            }
        }

        let mut grad_shared: Option<Matrix> = None;
        let mut heads = Vec::with_capacity(self.n_tasks());
        for (t, head) in self.heads.iter().enumerate() {
            let (mut gh, out) = head.out.backward(&cache.outs[t], &grad_predictions[t])?;
            if let Some(extra) = &grad_h_align[t] {
                gh.add_assign(extra)?;
            }
            let (gs, trunk) = head.trunk.backward(&cache.trunks[t], &gh)?;
            match grad_shared.as_mut() {
                Some(acc) => acc.add_assign(&gs)?,
                None => grad_shared = Some(gs),
            }
            heads.push(HeadGrads { trunk, out });
        }
        let grad_shared = grad_shared.expect("at least one task");
        let (_, encoder) = self.encoder.backward(&cache.encoder, &grad_shared)?;
        Ok(ModelGrads {
            encoder,
            heads,
            surrogates: surrogate_grads,
        })
    }
}

impl ParamSet for TaskHead {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        self.trunk.visit(f);
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        self.trunk.visit_mut(f);
        self.out.visit_mut(f);
    }
}

impl ParamSet for HeadGrads {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        self.trunk.visit(f);
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        self.trunk.visit_mut(f);
        self.out.visit_mut(f);
    }
}

impl ParamSet for MtlModel {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        self.encoder.visit(f);
        self.heads.visit(f);
        self.surrogates.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        self.encoder.visit_mut(f);
        self.heads.visit_mut(f);
        self.surrogates.visit_mut(f);
    }
}

impl ParamSet for ModelGrads {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        self.encoder.visit(f);
        self.heads.visit(f);
        self.surrogates.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        self.encoder.visit_mut(f);
        self.heads.visit_mut(f);
        self.surrogates.visit_mut(f);
    }
}
