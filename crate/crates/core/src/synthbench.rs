//! Seeded synthetic benchmark with domain-partitioned supervision.
//!
//! A latent factor `u ~ N(0, I)` drives every label. Inputs are
//! `R_d A (u + mu_d) + noise`: a per-domain offset in factor space, a fixed
//! lift `A` to input width, and a per-domain rotation. Domain
//! `d` only carries labels for task `d` in the training split.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Prng};

/// Noise standard deviation on inputs (variance 0.01).
pub const INPUT_NOISE_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Dense real vector, scored by MSE.
    Regression,
    /// Class id, scored by accuracy.
    Classification,
    /// Unit-norm 3-vector, scored by mean angular error in degrees.
    Direction,
}

impl TaskKind {
    pub fn for_task(task: usize) -> TaskKind {
        match task {
            0 => TaskKind::Regression,
            1 => TaskKind::Classification,
            _ => TaskKind::Direction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_tasks: usize,
    pub d_in: usize,
    pub d_factor: usize,
    pub d_reg: usize,
    pub n_classes: usize,
    /// Norm of the per-domain input offset.
    pub shift: f64,
    /// Rotation angle (radians) applied per domain index.
    pub rotation: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_tasks: 2,
            d_in: 20,
            d_factor: 10,
            d_reg: 8,
            n_classes: 5,
            shift: 1.0,
            rotation: 0.5,
            n_train: 500,
            n_val: 500,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(2..=3).contains(&self.n_tasks) {
            return bad("n_tasks must be 2 or 3");
        }
        if self.d_in < 2 || self.d_factor == 0 || self.d_reg == 0 {
            return bad("d_in must be >= 2 and d_factor, d_reg >= 1");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be >= 2");
        }
        if self.n_train == 0 || self.n_val == 0 {
            return bad("n_train and n_val must be positive");
        }
        if !self.shift.is_finite() || !self.rotation.is_finite() {
            return bad("shift and rotation must be finite");
        }
        Ok(())
    }

    pub fn task_kinds(&self) -> Vec<TaskKind> {
        (0..self.n_tasks).map(TaskKind::for_task).collect()
    }

    /// Width of each task's prediction vector.
    pub fn task_output_dims(&self) -> Vec<usize> {
        self.task_kinds()
            .into_iter()
            .map(|k| match k {
                TaskKind::Regression => self.d_reg,
                TaskKind::Classification => self.n_classes,
                TaskKind::Direction => 3,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Labels {
    pub y1: Option<Vec<f64>>,
    pub y2: Option<usize>,
    pub y3: Option<Vec<f64>>,
}

impl Labels {
    pub fn has(&self, task: usize) -> bool {
        match task {
            0 => self.y1.is_some(),
            1 => self.y2.is_some(),
            _ => self.y3.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub domain: usize,
    pub labels: Labels,
    pub mask: Vec<bool>,
    /// Generating factor `u`; empty for samples read back from CSV.
    pub factor: Vec<f64>,
}

/// Fixed maps drawn from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// d_in x d_factor
    pub lift: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub w3: Option<Matrix>,
    /// per-domain offset in factor space
    pub offsets: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn labels_for(&self, u: &[f64]) -> Labels {
        let y1 = matvec(&self.w1, u);
        let scores = matvec(&self.w2, u);
        let y2 = scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &s)| if s > best.1 { (i, s) } else { best })
            .0;
        let y3 = self.w3.as_ref().map(|w| {
            let v = matvec(w, u);
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter().map(|a| a / n).collect()
            } else {
                vec![1.0, 0.0, 0.0]
            }
        });
        Labels {
            y1: Some(y1),
            y2: Some(y2),
            y3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: BenchConfig,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub truth: GroundTruth,
}

fn matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Rotates consecutive coordinate pairs (0,1), (2,3), ... by `angle`.
fn rotate_pairs(x: &mut [f64], angle: f64) {
    if angle == 0.0 {
        return;
    }
    let (s, c) = angle.sin_cos();
    for pair in x.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
}

fn scaled_gaussian(prng: &mut Prng, rows: usize, cols: usize) -> Matrix {
    let scale = 1.0 / (cols as f64).sqrt();
    prng.gaussian(rows, cols).map(|v| v * scale)
}

fn draw_truth(cfg: &BenchConfig, prng: &mut Prng) -> GroundTruth {
    let lift = scaled_gaussian(prng, cfg.d_in, cfg.d_factor);
    let w1 = scaled_gaussian(prng, cfg.d_reg, cfg.d_factor);
    let w2 = scaled_gaussian(prng, cfg.n_classes, cfg.d_factor);
    let w3 = (cfg.n_tasks == 3).then(|| scaled_gaussian(prng, 3, cfg.d_factor));
    let offsets = (0..cfg.n_tasks)
        .map(|d| {
            let dir = prng.normal_vec(cfg.d_factor);
            if d == 0 {
                return vec![0.0; cfg.d_factor];
            }
            let n = dir.iter().map(|a| a * a).sum::<f64>().sqrt();
            dir.iter().map(|a| cfg.shift * a / n).collect()
        })
        .collect();
    GroundTruth {
        lift,
        w1,
        w2,
        w3,
        offsets,
    }
}

fn draw_sample(
    cfg: &BenchConfig,
    truth: &GroundTruth,
    domain: usize,
    train: bool,
    prng: &mut Prng,
) -> Sample {
    let u = prng.normal_vec(cfg.d_factor);
    let shifted: Vec<f64> = u.iter().zip(&truth.offsets[domain]).map(|(a, o)| a + o).collect();
    let mut x = matvec(&truth.lift, &shifted);
    rotate_pairs(&mut x, cfg.rotation * domain as f64);
    for a in x.iter_mut() {
        *a += INPUT_NOISE_STD * prng.normal();
    }
    let mut labels = truth.labels_for(&u);
    let mask: Vec<bool> = (0..cfg.n_tasks).map(|t| t == domain).collect();
    if train {
        if domain != 0 {
            labels.y1 = None;
        }
        if domain != 1 {
            labels.y2 = None;
        }
        if domain != 2 {
            labels.y3 = None;
        }
    }
    Sample {
        x,
        domain,
        labels,
        mask,
        factor: u,
    }
}

/// Draws the benchmark. Domain 0 is unshifted; domain `d`'s factor is offset
/// by a seeded direction of norm `shift` and its input rotated by
/// `d * rotation`.
pub fn generate(cfg: &BenchConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut truth_rng = Prng::stream(cfg.seed, 0);
    let truth = draw_truth(cfg, &mut truth_rng);
    let mut train_rng = Prng::stream(cfg.seed, 1);
    let mut val_rng = Prng::stream(cfg.seed, 2);
    let mut train = Vec::with_capacity(cfg.n_tasks * cfg.n_train);
    let mut val = Vec::with_capacity(cfg.n_tasks * cfg.n_val);
    for d in 0..cfg.n_tasks {
        for _ in 0..cfg.n_train {
            train.push(draw_sample(cfg, &truth, d, true, &mut train_rng));
        }
        for _ in 0..cfg.n_val {
            val.push(draw_sample(cfg, &truth, d, false, &mut val_rng));
        }
    }
    Ok(Dataset {
        config: cfg.clone(),
        train,
        val,
        truth,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub total: usize,
    pub per_domain: BTreeMap<usize, usize>,
    /// Number of samples supervised for each task.
    pub mask_histogram: Vec<usize>,
}

pub fn split_stats(samples: &[Sample]) -> SplitStats {
    let n_tasks = samples.iter().map(|s| s.mask.len()).max().unwrap_or(0);
    let mut per_domain = BTreeMap::new();
    let mut mask_histogram = vec![0; n_tasks];
    for s in samples {
        *per_domain.entry(s.domain).or_insert(0) += 1;
        for (h, &m) in mask_histogram.iter_mut().zip(&s.mask) {
            *h += m as usize;
        }
    }
    SplitStats {
        total: samples.len(),
        per_domain,
        mask_histogram,
    }
}

/// Stacks the inputs of `samples` row-wise.
pub fn inputs(samples: &[Sample]) -> Matrix {
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
    if rows.is_empty() {
        return Matrix::zeros(0, 0);
    }
    Matrix::from_rows(&rows)
}

/// Layout of the dataset CSV columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvLayout {
    pub d_in: usize,
    pub n_tasks: usize,
    pub d_reg: usize,
}

impl CsvLayout {
    pub fn of(cfg: &BenchConfig) -> Self {
        Self {
            d_in: cfg.d_in,
            n_tasks: cfg.n_tasks,
            d_reg: cfg.d_reg,
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.d_in).map(|i| format!("x_{i}")).collect();
        h.push("domain".into());
        h.extend((0..self.n_tasks).map(|t| format!("mask_{t}")));
        h.extend((0..self.d_reg).map(|i| format!("y1_{i}")));
        h.push("y2".into());
        if self.n_tasks == 3 {
            h.extend((0..3).map(|i| format!("y3_{i}")));
        }
        h
    }

    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let count = |prefix: &str| header.iter().filter(|c| c.starts_with(prefix)).count();
        let layout = Self {
            d_in: count("x_"),
            n_tasks: count("mask_"),
            d_reg: count("y1_"),
        };
        let expected = layout.header();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Config(format!(
                "unexpected dataset header: {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        Ok(layout)
    }
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

pub fn samples_to_csv(samples: &[Sample], layout: CsvLayout) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(layout.header()).map_err(io)?;
    let opt_vec = |v: &Option<Vec<f64>>, n: usize| -> Vec<String> {
        match v {
            Some(v) => v.iter().map(|a| a.to_string()).collect(),
            None => vec![String::new(); n],
        }
    };
    for s in samples {
        let mut rec: Vec<String> = s.x.iter().map(|a| a.to_string()).collect();
        rec.push(s.domain.to_string());
        rec.extend(s.mask.iter().map(|&m| (m as u8).to_string()));
        rec.extend(opt_vec(&s.labels.y1, layout.d_reg));
        rec.push(s.labels.y2.map(|c| c.to_string()).unwrap_or_default());
        if layout.n_tasks == 3 {
            rec.extend(opt_vec(&s.labels.y3, 3));
        }
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

pub fn write_samples_csv(path: &Path, samples: &[Sample], layout: CsvLayout) -> Result<()> {
    let text = samples_to_csv(samples, layout)?;
    crate::io::write_atomic(path, text.as_bytes())
}

pub fn read_samples_csv(path: &Path) -> Result<(CsvLayout, Vec<Sample>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let layout = CsvLayout::from_header(&header).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| csv_err(path, format!("row {}: bad {what}", line + 1));
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&header[i]));
        let opt_block = |start: usize, n: usize| -> Result<Option<Vec<f64>>> {
            if rec[start].is_empty() {
                return Ok(None);
            }
            (start..start + n)
                .map(|i| rec[i].parse::<f64>().map_err(|_| bad(&header[i])))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        };
        let x = (0..layout.d_in).map(f).collect::<Result<Vec<_>>>()?;
        let mut col = layout.d_in;
        let domain = rec[col].parse::<usize>().map_err(|_| bad("domain"))?;
        col += 1;
        let mask = (col..col + layout.n_tasks)
            .map(|i| match &rec[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad(&header[i])),
            })
            .collect::<Result<Vec<_>>>()?;
        col += layout.n_tasks;
        let y1 = opt_block(col, layout.d_reg)?;
        col += layout.d_reg;
        let y2 = if rec[col].is_empty() {
            None
        } else {
            Some(rec[col].parse::<usize>().map_err(|_| bad("y2"))?)
        };
        col += 1;
        let y3 = if layout.n_tasks == 3 {
            opt_block(col, 3)?
        } else {
            None
        };
        out.push(Sample {
            x,
            domain,
            labels: Labels { y1, y2, y3 },
            mask,
            factor: Vec::new(),
        });
    }
    Ok((layout, out))
}
