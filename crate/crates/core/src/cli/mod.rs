//! `flowalign` command line: gen-data, train, ablate, diagnose, verify.
//!
//! Exit codes: 0 success, 1 usage or I/O, 2 divergence, 3 verification
//! failure.

pub mod spec;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::alignment::AlignVariant;
use crate::diagnostics::{effective_rank, project_2d, run_lemma_protocol, LemmaProtocol};
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};
use crate::numerics::{pca_spectrum, Matrix, Prng};
use crate::synthbench::{generate, inputs, read_samples_csv, split_stats, write_samples_csv, CsvLayout, Sample};
use crate::trainer::sweep::{runs_csv, table_csv};
use crate::trainer::{ablation_sweep, build_model, latent_diagnostics, load_model, metric_name, save_model, train};
use crate::verify::run_suite;

pub use spec::{resolve_output, ExperimentSpec, OUT_ENV, SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

const LEMMA_STREAM: u32 = 30;

#[derive(Debug, Parser)]
#[command(name = "flowalign", version, about = "Multi-task latent alignment experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    /// Experiment spec (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory (relative paths go under $FLOWALIGN_OUT).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides both the benchmark and the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/val CSVs and a manifest.
    GenData(SpecArgs),
    /// Train one model; writes record, summary and checkpoint.
    Train(SpecArgs),
    /// Coupling-depth / variant sweep over seeds.
    Ablate {
        #[command(flatten)]
        common: SpecArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,6,8")]
        depths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "center", value_parser = parse_variant)]
        variants: Vec<AlignVariant>,
    },
    /// Recompute latent diagnostics for a finished run directory.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn parse_variant(s: &str) -> std::result::Result<AlignVariant, String> {
    match s {
        "pairwise" => Ok(AlignVariant::Pairwise),
        "center" => Ok(AlignVariant::Center),
        _ => Err(format!("unknown variant {s:?} (pairwise, center)")),
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => EXIT_DIVERGED,
                _ => EXIT_USAGE,
            }
        }
    }
}

pub fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData(a) => {
            let spec = load_spec(&a)?;
            let dir = resolve_output(a.out.as_deref(), &spec, "data");
            cmd_gen_data(&spec, &dir)?;
            println!("wrote dataset to {}", dir.display());
        }
        Command::Train(a) => {
            let spec = load_spec(&a)?;
            let dir = resolve_output(a.out.as_deref(), &spec, "run");
            cmd_train(&spec, &dir)?;
            println!("wrote run to {}", dir.display());
        }
        Command::Ablate {
            common,
            depths,
            seeds,
            variants,
        } => {
            let spec = load_spec(&common)?;
            let dir = resolve_output(common.out.as_deref(), &spec, "ablation");
            let table = cmd_ablate(&spec, &dir, &depths, &seeds, &variants)?;
            print!("{table}");
        }
        Command::Diagnose { run, out } => {
            let out = out.unwrap_or_else(|| run.clone());
            let report = cmd_diagnose(&run, &out)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("json"));
        }
        Command::Verify { seed, inject_fault } => {
            let results = run_suite(seed, inject_fault)?;
            let mut failed = Vec::new();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                if !r.passed {
                    failed.push(r.name.clone());
                }
            }
            if !failed.is_empty() {
                eprintln!("verification failed: {}", failed.join(", "));
                return Ok(EXIT_VERIFY);
            }
        }
    }
    Ok(EXIT_OK)
}

fn load_spec(a: &SpecArgs) -> Result<ExperimentSpec> {
    let spec = match &a.spec {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    Ok(match a.seed {
        Some(s) => spec.with_seed(s),
        None => spec,
    })
}

/// Train and validation samples: read from `dataset_dir`, else generated.
pub fn load_dataset(spec: &ExperimentSpec) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let Some(dir) = &spec.dataset_dir else {
        let ds = generate(&spec.bench)?;
        return Ok((ds.train, ds.val));
    };
    let expected = CsvLayout::of(&spec.bench);
    let read = |name: &str| -> Result<Vec<Sample>> {
        let path = dir.join(name);
        let (layout, samples) = read_samples_csv(&path)?;
        if layout != expected {
            return Err(Error::Config(format!(
                "{}: layout {layout:?} does not match spec {expected:?}",
                path.display()
            )));
        }
        Ok(samples)
    };
    Ok((read("train.csv")?, read("val.csv")?))
}

fn dataset_manifest(spec: &ExperimentSpec, train: &[Sample], val: &[Sample]) -> serde_json::Value {
    json!({
        "source": spec.dataset_dir.as_ref().map(|d| d.display().to_string()),
        "spec": spec,
        "seed": spec.bench.seed,
        "train": split_stats(train),
        "val": split_stats(val),
    })
}

pub fn cmd_gen_data(spec: &ExperimentSpec, dir: &Path) -> Result<()> {
    spec.validate()?;
    let ds = generate(&spec.bench)?;
    let layout = CsvLayout::of(&spec.bench);
    write_samples_csv(&dir.join("train.csv"), &ds.train, layout)?;
    write_samples_csv(&dir.join("val.csv"), &ds.val, layout)?;
    write_json(&dir.join("manifest.json"), &dataset_manifest(spec, &ds.train, &ds.val))
}

fn write_spec(dir: &Path, spec: &ExperimentSpec) -> Result<()> {
    write_atomic(&dir.join("spec.json"), spec.to_json().as_bytes())
}

pub fn cmd_train(spec: &ExperimentSpec, dir: &Path) -> Result<()> {
    spec.validate()?;
    let (train_set, val_set) = load_dataset(spec)?;
    write_spec(dir, spec)?;
    write_json(&dir.join("dataset.json"), &dataset_manifest(spec, &train_set, &val_set))?;
    let b = &spec.bench;
    let mut model = build_model(b.d_in, &b.task_kinds(), &b.task_output_dims(), &spec.train)?;
    let record = train(&mut model, &train_set, &val_set, &spec.train)?;
    record.write(dir)?;
    save_model(&dir.join("model.ckpt"), &model, json!({ "schema_version": spec.schema_version }))
}

/// Writes `ablation_runs.csv` after every finished cell and `ablation.csv`
/// at the end. Returns the table text.
pub fn cmd_ablate(
    spec: &ExperimentSpec,
    dir: &Path,
    depths: &[usize],
    seeds: &[u64],
    variants: &[AlignVariant],
) -> Result<String> {
    spec.validate()?;
    if spec.dataset_dir.is_some() {
        return Err(Error::Config("ablate draws one benchmark per seed; dataset_dir is not supported".into()));
    }
    write_spec(dir, spec)?;
    let names: Vec<String> = spec.bench.task_kinds().iter().map(|&k| metric_name(k).to_string()).collect();
    let runs_path = dir.join("ablation_runs.csv");
    let result = ablation_sweep(&spec.bench, &spec.train, depths, variants, seeds, |done| {
        write_atomic(&runs_path, runs_csv(&names, done).as_bytes())
    })?;
    let table = table_csv(&result.metric_names, &result.rows);
    write_atomic(&dir.join("ablation.csv"), table.as_bytes())?;
    Ok(table)
}

fn projection_csv(label: &str, labels: &[usize], proj: &Matrix) -> String {
    let mut out = format!("{label},pc1,pc2\n");
    for (i, l) in labels.iter().enumerate() {
        let r = proj.row(i);
        let _ = writeln!(out, "{l},{},{}", r[0], r[1]);
    }
    out
}

/// Reloads the run's model, recomputes validation latents and writes
/// `diagnostics.json`, `latent_projection.csv` and `shared_projection.csv`.
pub fn cmd_diagnose(run: &Path, out: &Path) -> Result<serde_json::Value> {
    let spec = ExperimentSpec::load(&run.join("spec.json"))?;
    let ckpt = run.join("model.ckpt");
    if !ckpt.is_file() {
        return Err(Error::io(&ckpt, "checkpoint not found"));
    }
    let b = &spec.bench;
    let mut model = build_model(b.d_in, &b.task_kinds(), &b.task_output_dims(), &spec.train)?;
    load_model(&ckpt, &mut model)?;
    let (_, val) = load_dataset(&spec)?;

    let (shared, _) = model.predict(&inputs(&val))?;
    let shared_spectrum = pca_spectrum(&shared)?;
    let domains: Vec<usize> = val.iter().map(|s| s.domain).collect();
    write_atomic(
        &out.join("shared_projection.csv"),
        projection_csv("domain", &domains, &project_2d(&shared)?).as_bytes(),
    )?;

    let mut report = json!({
        "shared_spectrum": shared_spectrum,
        "shared_effective_rank": effective_rank(&shared_spectrum)?,
        "latent": null,
        "lemma_report": null,
    });
    if model.has_surrogates() {
        let diag = latent_diagnostics(&model, &val, spec.train.diagnostics_space)?;
        let sets = crate::trainer::task_conditioned_latents(&model, &val, spec.train.diagnostics_space)?;
        let tasks: Vec<usize> = sets.iter().enumerate().flat_map(|(t, m)| vec![t; m.rows()]).collect();
        let pooled = Matrix::vstack(&sets.iter().collect::<Vec<_>>())?;
        write_atomic(
            &out.join("latent_projection.csv"),
            projection_csv("task", &tasks, &project_2d(&pooled)?).as_bytes(),
        )?;
        let mut prng = Prng::stream(spec.train.seed, LEMMA_STREAM);
        let lemma = run_lemma_protocol(
            &model.surrogates[0].coupling,
            &model.surrogates[1].coupling,
            &mut prng,
            &LemmaProtocol::default(),
        )?;
        report["latent"] = serde_json::to_value(&diag).expect("json");
        report["lemma_report"] = serde_json::to_value(&lemma).expect("json");
    }
    write_json(&out.join("diagnostics.json"), &report)?;
    Ok(report)
}
