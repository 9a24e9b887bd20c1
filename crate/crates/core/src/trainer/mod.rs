//! Shared-encoder multi-task training with masked losses, surrogate latents
//! and the alignment objective.

pub mod batch;
pub mod eval;
pub mod loss;
pub mod model;
pub mod optim;
pub mod run;
pub mod sweep;

pub use batch::{Batch, Target};
pub use eval::{evaluate, metric_name, score_predictions, DomainMetrics, EvalReport};
pub use loss::masked_task_loss;
pub use model::{Forward, HeadGrads, ModelConfig, ModelGrads, MtlModel, TaskHead};
pub use optim::{Adam, AdamConfig};
pub use run::{
    build_model, latent_diagnostics, load_model, save_model, task_conditioned_latents, train,
    EpochRecord, LatentDiagnostics, LatentSpace, PairMmd, RunRecord, Schedule, TrainConfig,
};
pub use sweep::{ablation_sweep, Cell, SweepResult, SweepRow, SweepRun};
