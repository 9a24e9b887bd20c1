use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{align, AlignmentConfig};
use crate::diagnostics::{effective_rank, mmd_rbf};
use crate::error::{Error, Result};
use crate::layers::{checkpoint, ParamSet};
use crate::numerics::{pca_spectrum, Matrix, Prng};
use crate::surrogate::SurrogateConfig;
use crate::synthbench::{inputs, Sample, TaskKind};

use super::batch::Batch;
use super::eval::{evaluate, EvalReport};
use super::loss::masked_task_loss;
use super::model::{ModelConfig, MtlModel};
use super::optim::{Adam, AdamConfig};

const MODEL_STREAM: u32 = 10;
const SURROGATE_STREAM: u32 = 11;
const SHUFFLE_STREAM: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    OnePhase,
    /// Alignment off for the first `phase1_epochs` (default: half the epochs).
    TwoPhase { phase1_epochs: Option<usize> },
}

/// Which surrogate output the latent diagnostics read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSpace {
    /// Coupling outputs `z_i`.
    Latent,
    /// Aggregator outputs `h'_i`.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub align: AlignmentConfig,
    pub schedule: Schedule,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub surrogate: SurrogateConfig,
    pub attach_surrogates: bool,
    /// Alignment gradients train the surrogates only.
    pub stop_gradient_at_h: bool,
    /// In the second phase of a two-phase schedule, update surrogates only.
    pub freeze_backbone: bool,
    pub diagnostics_space: LatentSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            align: AlignmentConfig::default(),
            schedule: Schedule::OnePhase,
            optimizer: AdamConfig::default(),
            epochs: 30,
            batch_size: 32,
            seed: 0,
            model: ModelConfig::default(),
            surrogate: SurrogateConfig::default(),
            attach_surrogates: true,
            stop_gradient_at_h: false,
            freeze_backbone: false,
            diagnostics_space: LatentSpace::Latent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.align.validate()?;
        self.optimizer.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.surrogate.embed_dim % 2 != 0 {
            return Err(Error::OddWidth(self.surrogate.embed_dim));
        }
        if let Schedule::TwoPhase {
            phase1_epochs: Some(p),
        } = self.schedule
        {
            if p > self.epochs {
                return Err(Error::Config(format!(
                    "phase1_epochs {p} exceeds epochs {}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }

    /// First epoch with alignment enabled.
    pub fn align_start(&self) -> usize {
        match self.schedule {
            Schedule::OnePhase => 0,
            Schedule::TwoPhase { phase1_epochs } => phase1_epochs.unwrap_or(self.epochs / 2),
        }
    }

    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if epoch < self.align_start() {
            0.0
        } else {
            self.align.lambda
        }
    }
}

/// Builds the model for `cfg` with backbone and surrogate weights drawn from
/// separate streams of `cfg.seed`.
pub fn build_model(d_in: usize, kinds: &[TaskKind], out_dims: &[usize], cfg: &TrainConfig) -> Result<MtlModel> {
    MtlModel::new(
        d_in,
        kinds,
        out_dims,
        &cfg.model,
        cfg.attach_surrogates.then_some(&cfg.surrogate),
        &mut Prng::stream(cfg.seed, MODEL_STREAM),
        &mut Prng::stream(cfg.seed, SURROGATE_STREAM),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    /// Mean training loss per task over supervised samples.
    pub task_loss: Vec<f64>,
    /// Mean alignment loss over all training samples; `None` without
    /// surrogates.
    pub align_loss: Option<f64>,
    pub total_loss: f64,
    pub val: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMmd {
    pub task_a: usize,
    pub task_b: usize,
    pub mmd_sq: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDiagnostics {
    pub space: LatentSpace,
    /// MMD between latents of samples annotated for task a (read through
    /// surrogate a) and samples annotated for task b (through surrogate b).
    pub mmd: Vec<PairMmd>,
    pub mmd_mean: f64,
    /// PCA spectrum of the pooled task-conditioned latents.
    pub spectrum: Vec<f64>,
    pub effective_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub metric_names: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub final_eval: EvalReport,
    pub latent: Option<LatentDiagnostics>,
    pub shared_spectrum: Vec<f64>,
    pub shared_effective_rank: f64,
}

/// For each task `t`, the latents of the samples whose domain supervises `t`
/// in training, read through surrogate `t`.
pub fn task_conditioned_latents(model: &MtlModel, samples: &[Sample], space: LatentSpace) -> Result<Vec<Matrix>> {
    if !model.has_surrogates() {
        return Err(Error::Config("model has no surrogate branch".into()));
    }
    (0..model.n_tasks())
        .map(|t| {
            let subset: Vec<Sample> = samples.iter().filter(|s| s.domain == t).cloned().collect();
            if subset.is_empty() {
                return Err(Error::Task {
                    task: t,
                    detail: "no samples from the task's domain".into(),
                });
            }
            let f = model.forward(&inputs(&subset))?;
            Ok(match space {
                LatentSpace::Latent => f.z[t].clone(),
                LatentSpace::Embedding => f.h_embed[t].clone(),
            })
        })
        .collect()
}

pub fn latent_diagnostics(model: &MtlModel, samples: &[Sample], space: LatentSpace) -> Result<LatentDiagnostics> {
    let sets = task_conditioned_latents(model, samples, space)?;
    let mut mmd = Vec::new();
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            let r = mmd_rbf(&sets[a], &sets[b], None)?;
            mmd.push(PairMmd {
                task_a: a,
                task_b: b,
                mmd_sq: r.mmd_sq,
                bandwidth: r.bandwidth,
            });
        }
    }
    let mmd_mean = mmd.iter().map(|p| p.mmd_sq).sum::<f64>() / mmd.len() as f64;
    let pooled = Matrix::vstack(&sets.iter().collect::<Vec<_>>())?;
    let spectrum = pca_spectrum(&pooled)?;
    let effective_rank = effective_rank(&spectrum)?;
    Ok(LatentDiagnostics {
        space,
        mmd,
        mmd_mean,
        spectrum,
        effective_rank,
    })
}

/// Trains `model` in place on `train`, evaluating on `val` after each epoch.
pub fn train(model: &mut MtlModel, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let out_dims: Vec<usize> = model.heads.iter().map(|h| h.out.output_dim()).collect();
    let kinds = model.kinds.clone();
    let n_tasks = kinds.len();
    let total_params = model.param_count();
    let backbone = model.backbone_param_count();
    let mut opt = Adam::new(cfg.optimizer, total_params);
    let mut shuffle = Prng::stream(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lambda = cfg.lambda_at(epoch);
        let active = if cfg.freeze_backbone && epoch >= cfg.align_start() && cfg.align_start() > 0 {
            backbone..total_params
        } else {
            0..total_params
        };
        shuffle.shuffle(&mut order);
        let mut loss_sum = vec![0.0; n_tasks];
        let mut loss_count = vec![0usize; n_tasks];
        let mut align_sum = 0.0;

        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(&samples, &kinds, &out_dims, true);
            let fwd = model.forward(&batch.x)?;
            let mut grad_preds = Vec::with_capacity(n_tasks);
            for t in 0..n_tasks {
                let (l, g) = masked_task_loss(&fwd.predictions[t], &batch.targets[t], &batch.masks[t], kinds[t])?;
                let m = batch.masks[t].iter().filter(|&&b| b).count();
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                loss_sum[t] += l * m as f64;
                loss_count[t] += m;
                grad_preds.push(g);
            }
            let mut grad_z = None;
            if model.has_surrogates() {
                let out = align(&fwd.z, &cfg.align)?;
                if !out.loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                align_sum += out.loss * batch.len() as f64;
                if lambda > 0.0 {
                    grad_z = Some(out.grads.into_iter().map(|g| g.scale(lambda)).collect::<Vec<_>>());
                }
            }
            let grads = model.backward(&fwd.cache, &grad_preds, grad_z.as_deref(), cfg.stop_gradient_at_h)?;
            opt.step_range(model, &grads, active.clone());
        }

        let task_loss: Vec<f64> = loss_sum
            .iter()
            .zip(&loss_count)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let align_loss = model.has_surrogates().then(|| align_sum / train.len() as f64);
        let total_loss = task_loss.iter().sum::<f64>() + lambda * align_loss.unwrap_or(0.0);
        if !total_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        epochs.push(EpochRecord {
            epoch,
            lambda,
            task_loss,
            align_loss,
            total_loss,
            val: evaluate(model, val)?,
        });
    }

    let final_eval = epochs.last().expect("epochs >= 1").val.clone();
    let latent = if model.has_surrogates() {
        Some(latent_diagnostics(model, val, cfg.diagnostics_space)?)
    } else {
        None
    };
    let (shared, _) = model.predict(&inputs(val))?;
    let shared_spectrum = pca_spectrum(&shared)?;
    let shared_effective_rank = effective_rank(&shared_spectrum)?;
    Ok(RunRecord {
        metric_names: final_eval.metric_names.clone(),
        epochs,
        final_eval,
        latent,
        shared_spectrum,
        shared_effective_rank,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunRecord {
    pub fn csv_header(&self) -> Vec<String> {
        let n = self.metric_names.len();
        let mut h = vec!["epoch".to_string(), "lambda".to_string()];
        h.extend((0..n).map(|t| format!("train_loss_t{t}")));
        h.push("align_loss".into());
        h.push("total_loss".into());
        h.extend(self.metric_names.iter().enumerate().map(|(t, m)| format!("val_t{t}_{m}")));
        if let Some(first) = self.epochs.first() {
            for d in &first.val.per_domain {
                h.extend(
                    self.metric_names
                        .iter()
                        .enumerate()
                        .map(|(t, m)| format!("val_t{t}_{m}_d{}", d.domain)),
                );
            }
        }
        h
    }

    /// One row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header().join(",");
        out.push('\n');
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string(), e.lambda.to_string()];
            row.extend(e.task_loss.iter().map(f64::to_string));
            row.push(fmt_opt(e.align_loss));
            row.push(e.total_loss.to_string());
            row.extend(e.val.pooled.iter().map(f64::to_string));
            for d in &e.val.per_domain {
                row.extend(d.metrics.iter().map(f64::to_string));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Everything except the per-epoch stream.
    pub fn summary_json(&self) -> serde_json::Value {
        let last = self.epochs.last();
        serde_json::json!({
            "metric_names": self.metric_names,
            "epochs": self.epochs.len(),
            "final_task_loss": last.map(|e| e.task_loss.clone()),
            "final_align_loss": last.and_then(|e| e.align_loss),
            "final_eval": self.final_eval,
            "latent": self.latent,
            "shared_spectrum": self.shared_spectrum,
            "shared_effective_rank": self.shared_effective_rank,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::io::write_atomic(&dir.join("record.csv"), self.to_csv().as_bytes())?;
        crate::io::write_json(&dir.join("summary.json"), &self.summary_json())
    }
}

pub fn save_model(path: &Path, model: &MtlModel, meta: serde_json::Value) -> Result<()> {
    checkpoint::save(path, model, meta)
}

pub fn load_model(path: &Path, model: &mut MtlModel) -> Result<serde_json::Value> {
    checkpoint::load(path, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthbench::{generate, BenchConfig, Dataset};

    fn tiny_bench() -> BenchConfig {
        BenchConfig {
            n_train: 60,
            n_val: 40,
            ..Default::default()
        }
    }

    fn tiny_cfg() -> TrainConfig {
        let mut cfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            seed: 3,
            ..Default::default()
        };
        cfg.model.encoder_hidden = vec![16];
        cfg.model.shared_dim = 12;
        cfg.model.head_hidden = 10;
        cfg.surrogate.embed_dim = 8;
        cfg.surrogate.depth = 2;
        cfg
    }

    fn fit(ds: &Dataset, cfg: &TrainConfig) -> (MtlModel, RunRecord) {
        let b = &ds.config;
        let mut m = build_model(b.d_in, &b.task_kinds(), &b.task_output_dims(), cfg).unwrap();
        let rec = train(&mut m, &ds.train, &ds.val, cfg).unwrap();
        (m, rec)
    }

    #[test]
    fn zero_lambda_matches_detached_baseline() {
        let ds = generate(&tiny_bench()).unwrap();
        let mut with = tiny_cfg();
        with.align.lambda = 0.0;
        let without = TrainConfig {
            attach_surrogates: false,
            ..with.clone()
        };
        let (a, ra) = fit(&ds, &with);
        let (b, rb) = fit(&ds, &without);
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.heads, b.heads);
        assert_eq!(ra.final_eval, rb.final_eval);
        assert!(ra.epochs.iter().all(|e| e.align_loss.is_some()));
        assert!(rb.epochs.iter().all(|e| e.align_loss.is_none()));
        // surrogate weights never move without alignment gradients
        let fresh = build_model(20, &[TaskKind::Regression, TaskKind::Classification], &[8, 5], &with).unwrap();
        assert_eq!(a.surrogates, fresh.surrogates);
    }

    #[test]
    fn full_warmup_two_phase_equals_zero_lambda() {
        let ds = generate(&tiny_bench()).unwrap();
        let cfg = tiny_cfg();
        let two = TrainConfig {
            schedule: Schedule::TwoPhase {
                phase1_epochs: Some(cfg.epochs),
            },
            ..cfg.clone()
        };
        let mut zero = cfg.clone();
        zero.align.lambda = 0.0;
        assert_eq!(fit(&ds, &two).1, fit(&ds, &zero).1);
    }

    #[test]
    fn schedule_lambdas() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 10;
        cfg.align.lambda = 0.5;
        cfg.schedule = Schedule::TwoPhase { phase1_epochs: None };
        assert_eq!(cfg.align_start(), 5);
        assert_eq!(cfg.lambda_at(4), 0.0);
        assert_eq!(cfg.lambda_at(5), 0.5);
        cfg.schedule = Schedule::OnePhase;
        assert_eq!(cfg.lambda_at(0), 0.5);
        cfg.schedule = Schedule::TwoPhase { phase1_epochs: Some(11) };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn reruns_are_bit_identical() {
        let ds = generate(&tiny_bench()).unwrap();
        let cfg = tiny_cfg();
        let (ma, ra) = fit(&ds, &cfg);
        let (mb, rb) = fit(&ds, &cfg);
        assert_eq!(ma, mb);
        assert_eq!(ra.to_csv(), rb.to_csv());
        assert_eq!(ra.summary_json(), rb.summary_json());
        let (_, rc) = fit(&ds, &TrainConfig { seed: 4, ..cfg });
        assert_ne!(ra.to_csv(), rc.to_csv());
    }

    #[test]
    fn record_has_one_row_per_epoch() {
        let ds = generate(&tiny_bench()).unwrap();
        let (_, rec) = fit(&ds, &tiny_cfg());
        assert_eq!(rec.epochs.len(), 4);
        let csv = rec.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("epoch,lambda,train_loss_t0,train_loss_t1,align_loss,total_loss,val_t0_mse,val_t1_acc"));
        let width = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == width));
        let lat = rec.latent.unwrap();
        assert_eq!(lat.mmd.len(), 1);
        assert!(lat.effective_rank >= 1.0 && lat.effective_rank <= 8.0);
    }

    #[test]
    fn divergence_names_the_epoch() {
        let ds = generate(&tiny_bench()).unwrap();
        let mut cfg = tiny_cfg();
        cfg.optimizer.lr = 1e200;
        let b = &ds.config;
        let mut m = build_model(b.d_in, &b.task_kinds(), &b.task_output_dims(), &cfg).unwrap();
        match train(&mut m, &ds.train, &ds.val, &cfg) {
            Err(Error::Diverged { epoch }) => assert!(epoch < cfg.epochs),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn frozen_backbone_in_second_phase() {
        let ds = generate(&tiny_bench()).unwrap();
        let base = TrainConfig {
            schedule: Schedule::TwoPhase { phase1_epochs: Some(2) },
            ..tiny_cfg()
        };
        let frozen = TrainConfig {
            freeze_backbone: true,
            ..base.clone()
        };
        let warm = TrainConfig {
            epochs: 2,
            ..base.clone()
        };
        let (mw, _) = fit(&ds, &warm);
        let (mf, _) = fit(&ds, &frozen);
        let (mb, _) = fit(&ds, &base);
        assert_eq!(mw.encoder, mf.encoder);
        assert_eq!(mw.heads, mf.heads);
        assert_ne!(mf.surrogates, mw.surrogates);
        assert_ne!(mb.encoder, mw.encoder);
    }

    #[test]
    fn stop_gradient_keeps_backbone_on_baseline_path() {
        let ds = generate(&tiny_bench()).unwrap();
        let stopped = TrainConfig {
            stop_gradient_at_h: true,
            ..tiny_cfg()
        };
        let mut zero = tiny_cfg();
        zero.align.lambda = 0.0;
        let (a, _) = fit(&ds, &stopped);
        let (b, _) = fit(&ds, &zero);
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.heads, b.heads);
        assert_ne!(a.surrogates, b.surrogates);
    }

    #[test]
    fn embedding_space_diagnostics() {
        let ds = generate(&tiny_bench()).unwrap();
        let (m, _) = fit(&ds, &tiny_cfg());
        let z = latent_diagnostics(&m, &ds.val, LatentSpace::Latent).unwrap();
        let e = latent_diagnostics(&m, &ds.val, LatentSpace::Embedding).unwrap();
        assert_eq!(e.space, LatentSpace::Embedding);
        assert_ne!(z.mmd_mean, e.mmd_mean);
    }
}
