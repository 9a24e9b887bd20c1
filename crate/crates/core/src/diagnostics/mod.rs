//! Distribution and spectrum diagnostics for learned latents, plus the
//! sampled Lipschitz / structural-discrepancy estimates behind the
//! feature-discrepancy bound.

pub mod lemma;
pub mod mmd;
pub mod spectrum;

pub use lemma::{
    delta_from_points, estimate_delta, estimate_lipschitz, lemma_bound_check,
    lipschitz_from_pairs, run_lemma_protocol, sample_ball, LemmaProtocol, LemmaReport,
};
pub use mmd::{median_heuristic, mmd_rbf, MmdResult};
pub use spectrum::{effective_rank, project_2d};
