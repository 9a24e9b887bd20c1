//! Coupling-depth and alignment-variant ablations over shared seeds.

use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignVariant;
use crate::error::{Error, Result};
use crate::synthbench::{generate, BenchConfig};

use super::run::{build_model, train, TrainConfig};

pub const ALLOWED_DEPTHS: [usize; 6] = [0, 1, 2, 4, 6, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub depth: usize,
    pub variant: AlignVariant,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub cell: Cell,
    /// Pooled validation metric per task after the last epoch.
    pub metrics: Vec<f64>,
    pub mmd: f64,
    pub latent_effective_rank: f64,
    pub shared_effective_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub depth: usize,
    pub variant: AlignVariant,
    pub n_seeds: usize,
    /// `(mean, std)` per task metric.
    pub metrics: Vec<(f64, f64)>,
    pub mmd: (f64, f64),
    pub latent_effective_rank: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub metric_names: Vec<String>,
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SweepRow>,
}

pub fn depth_label(depth: usize) -> String {
    match depth {
        0 => "w/o inv".to_string(),
        1 => "1 layer".to_string(),
        d => format!("{d} layers"),
    }
}

fn variant_name(v: AlignVariant) -> &'static str {
    match v {
        AlignVariant::Pairwise => "pairwise",
        AlignVariant::Center => "center",
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn table_columns(metric_names: &[String]) -> Vec<String> {
    let mut c: Vec<String> = ["label", "depth", "variant", "n_seeds"].iter().map(|s| s.to_string()).collect();
    for (t, m) in metric_names.iter().enumerate() {
        c.push(format!("val_t{t}_{m}_mean"));
        c.push(format!("val_t{t}_{m}_std"));
    }
    for k in ["mmd", "latent_eff_rank"] {
        c.push(format!("{k}_mean"));
        c.push(format!("{k}_std"));
    }
    c
}

pub fn run_columns(metric_names: &[String]) -> Vec<String> {
    let mut c: Vec<String> = ["depth", "variant", "seed"].iter().map(|s| s.to_string()).collect();
    c.extend(metric_names.iter().enumerate().map(|(t, m)| format!("val_t{t}_{m}")));
    c.extend(["mmd", "latent_eff_rank", "shared_eff_rank"].iter().map(|s| s.to_string()));
    c
}

pub fn runs_csv(metric_names: &[String], runs: &[SweepRun]) -> String {
    let mut out = run_columns(metric_names).join(",");
    out.push('\n');
    for r in runs {
        let mut row = vec![
            r.cell.depth.to_string(),
            variant_name(r.cell.variant).to_string(),
            r.cell.seed.to_string(),
        ];
        row.extend(r.metrics.iter().map(f64::to_string));
        row.push(r.mmd.to_string());
        row.push(r.latent_effective_rank.to_string());
        row.push(r.shared_effective_rank.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn table_csv(metric_names: &[String], rows: &[SweepRow]) -> String {
    let mut out = table_columns(metric_names).join(",");
    out.push('\n');
    for r in rows {
        let mut row = vec![
            r.label.clone(),
            r.depth.to_string(),
            variant_name(r.variant).to_string(),
            r.n_seeds.to_string(),
        ];
        for (m, s) in r.metrics.iter().chain([&r.mmd, &r.latent_effective_rank]) {
            row.push(m.to_string());
            row.push(s.to_string());
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Trains one model per `(depth, variant, seed)`. The seed drives both the
/// benchmark draw and training. Cells run in parallel; `on_progress`
/// receives the completed runs in canonical cell order after each
/// completion.
pub fn ablation_sweep<F>(
    bench: &BenchConfig,
    base: &TrainConfig,
    depths: &[usize],
    variants: &[AlignVariant],
    seeds: &[u64],
    on_progress: F,
) -> Result<SweepResult>
where
    F: Fn(&[SweepRun]) -> Result<()> + Sync,
{
    if let Some(d) = depths.iter().find(|d| !ALLOWED_DEPTHS.contains(d)) {
        return Err(Error::Config(format!("depth {d} not in {ALLOWED_DEPTHS:?}")));
    }
    if depths.is_empty() || variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one depth, variant and seed".into()));
    }
    bench.validate()?;
    base.validate()?;
    if !base.attach_surrogates {
        return Err(Error::Config("ablation needs surrogates attached".into()));
    }

    let datasets = seeds
        .iter()
        .map(|&seed| generate(&BenchConfig { seed, ..bench.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for &depth in depths {
        for &variant in variants {
            for (k, &seed) in seeds.iter().enumerate() {
                cells.push((k, Cell { depth, variant, seed }));
            }
        }
    }
    let done: Mutex<Vec<Option<SweepRun>>> = Mutex::new(vec![None; cells.len()]);
    let kinds = bench.task_kinds();
    let out_dims = bench.task_output_dims();

    let results: Vec<Result<()>> = cells
        .par_iter()
        .enumerate()
        .map(|(idx, &(k, cell))| {
            let mut cfg = base.clone();
            cfg.seed = cell.seed;
            cfg.surrogate.depth = cell.depth;
            cfg.align.variant = cell.variant;
            let ds = &datasets[k];
            let mut model = build_model(bench.d_in, &kinds, &out_dims, &cfg)?;
            let rec = train(&mut model, &ds.train, &ds.val, &cfg)?;
            let latent = rec.latent.as_ref().expect("surrogates attached");
            let run = SweepRun {
                cell,
                metrics: rec.final_eval.pooled.clone(),
                mmd: latent.mmd_mean,
                latent_effective_rank: latent.effective_rank,
                shared_effective_rank: rec.shared_effective_rank,
            };
            let mut guard = done.lock().expect("progress lock");
            guard[idx] = Some(run);
            let completed: Vec<SweepRun> = guard.iter().flatten().cloned().collect();
            on_progress(&completed)
        })
        .collect();
    for r in results {
        r?;
    }

    let runs: Vec<SweepRun> = done.into_inner().expect("progress lock").into_iter().flatten().collect();
    let mut rows = Vec::new();
    for &depth in depths {
        for &variant in variants {
            let group: Vec<&SweepRun> = runs
                .iter()
                .filter(|r| r.cell.depth == depth && r.cell.variant == variant)
                .collect();
            let col = |f: &dyn Fn(&SweepRun) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            rows.push(SweepRow {
                label: depth_label(depth),
                depth,
                variant,
                n_seeds: group.len(),
                metrics: (0..kinds.len()).map(|t| col(&|r| r.metrics[t])).collect(),
                mmd: col(&|r| r.mmd),
                latent_effective_rank: col(&|r| r.latent_effective_rank),
            });
        }
    }
    Ok(SweepResult {
        metric_names: kinds.iter().map(|&k| super::eval::metric_name(k).to_string()).collect(),
        runs,
        rows,
    })
}
