use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::Matrix;
use crate::synthbench::{inputs, Sample, TaskKind};

use super::model::MtlModel;

pub fn metric_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Regression => "mse",
        TaskKind::Classification => "acc",
        TaskKind::Direction => "ang_err_deg",
    }
}

/// True when larger values of the metric are better.
pub fn higher_is_better(kind: TaskKind) -> bool {
    kind == TaskKind::Classification
}

/// Per-sample contribution to a task metric, or `None` if the label is absent.
pub fn sample_metric(kind: TaskKind, pred: &[f64], sample: &Sample) -> Option<f64> {
    match kind {
        TaskKind::Regression => sample.labels.y1.as_ref().map(|y| {
            pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
        }),
        TaskKind::Classification => sample.labels.y2.map(|y| {
            let best = pred
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            (best == y) as u8 as f64
        }),
        TaskKind::Direction => sample.labels.y3.as_ref().map(|y| {
            let pn = pred.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if pn == 0.0 || yn == 0.0 {
                return 90.0;
            }
            let cos = pred.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / (pn * yn);
            cos.clamp(-1.0, 1.0).acos().to_degrees()
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub domain: usize,
    /// Labelled samples per task.
    pub counts: Vec<usize>,
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric_names: Vec<String>,
    pub pooled: Vec<f64>,
    pub per_domain: Vec<DomainMetrics>,
}

/// Scores predictions against the labels carried by `samples`; every metric
/// is a sample mean, so per-domain values weighted by count give the pooled
/// value.
pub fn score_predictions(kinds: &[TaskKind], preds: &[Matrix], samples: &[Sample]) -> EvalReport {
    let n_domains = samples.iter().map(|s| s.domain + 1).max().unwrap_or(0);
    let n_tasks = kinds.len();
    let mut sums = vec![vec![0.0; n_tasks]; n_domains];
    let mut counts = vec![vec![0usize; n_tasks]; n_domains];
    for (b, s) in samples.iter().enumerate() {
        for (t, &kind) in kinds.iter().enumerate() {
            if let Some(v) = sample_metric(kind, preds[t].row(b), s) {
                sums[s.domain][t] += v;
                counts[s.domain][t] += 1;
            }
        }
    }
    let mean = |s: f64, c: usize| if c > 0 { s / c as f64 } else { f64::NAN };
    let pooled = (0..n_tasks)
        .map(|t| {
            let s: f64 = sums.iter().map(|d| d[t]).sum();
            let c: usize = counts.iter().map(|d| d[t]).sum();
            mean(s, c)
        })
        .collect();
    let per_domain = (0..n_domains)
        .filter(|&d| counts[d].iter().any(|&c| c > 0))
        .map(|d| DomainMetrics {
            domain: d,
            counts: counts[d].clone(),
            metrics: (0..n_tasks).map(|t| mean(sums[d][t], counts[d][t])).collect(),
        })
        .collect();
    EvalReport {
        metric_names: kinds.iter().map(|&k| metric_name(k).to_string()).collect(),
        pooled,
        per_domain,
    }
}

/// Task metrics on every domain of `val`, per domain and pooled.
pub fn evaluate(model: &MtlModel, val: &[Sample]) -> Result<EvalReport> {
    let x = inputs(val);
    let (_, preds) = model.predict(&x)?;
    Ok(score_predictions(&model.kinds, &preds, val))
}
