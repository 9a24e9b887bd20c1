use crate::numerics::Matrix;
use crate::synthbench::{Sample, TaskKind};

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Regression or direction targets, one row per sample; zero rows where
    /// the label is missing.
    Dense(Matrix),
    Class(Vec<usize>),
}

/// Samples stacked for one forward pass. `masks[t][b]` is true when sample
/// `b` carries a usable label for task `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub domains: Vec<usize>,
    pub targets: Vec<Target>,
    pub masks: Vec<Vec<bool>>,
}

impl Batch {
    /// `supervised_only` restricts masks to the sample's supervision flags
    /// (training); otherwise every present label counts (evaluation).
    pub fn new(samples: &[&Sample], kinds: &[TaskKind], out_dims: &[usize], supervised_only: bool) -> Self {
        let n = samples.len();
        let d_in = samples.first().map_or(0, |s| s.x.len());
        let mut x = Matrix::zeros(n, d_in);
        for (b, s) in samples.iter().enumerate() {
            x.row_mut(b).copy_from_slice(&s.x);
        }
        let mut targets = Vec::with_capacity(kinds.len());
        let mut masks = Vec::with_capacity(kinds.len());
        for (t, (&kind, &dim)) in kinds.iter().zip(out_dims).enumerate() {
            let mask: Vec<bool> = samples
                .iter()
                .map(|s| s.labels.has(t) && (!supervised_only || s.mask.get(t).copied().unwrap_or(false)))
                .collect();
            let target = match kind {
                TaskKind::Classification => {
                    Target::Class(samples.iter().map(|s| s.labels.y2.unwrap_or(0)).collect())
                }
                TaskKind::Regression | TaskKind::Direction => {
                    let mut m = Matrix::zeros(n, dim);
                    for (b, s) in samples.iter().enumerate() {
                        let y = if kind == TaskKind::Regression {
                            &s.labels.y1
                        } else {
                            &s.labels.y3
                        };
                        if let Some(y) = y {
                            m.row_mut(b).copy_from_slice(y);
                        }
                    }
                    Target::Dense(m)
                }
            };
            targets.push(target);
            masks.push(mask);
        }
        Self {
            x,
            domains: samples.iter().map(|s| s.domain).collect(),
            targets,
            masks,
        }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
