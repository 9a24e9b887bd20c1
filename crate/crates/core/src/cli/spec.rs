use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthbench::BenchConfig;
use crate::trainer::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const OUT_ENV: &str = "FLOWALIGN_OUT";

/// Serialized experiment: benchmark, training (alignment included) and paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Directory holding `train.csv` / `val.csv` from `gen-data`. Without it
    /// the benchmark is generated in memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_dir: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            bench: BenchConfig::default(),
            train: TrainConfig::default(),
            output_dir: None,
            dataset_dir: None,
        }
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("spec schema: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::io::read_to_string(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "spec schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.bench.validate()?;
        self.train.validate()
    }

    /// Sets both the benchmark and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.bench.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec serialises");
        s.push('\n');
        s
    }
}

/// Output directory: explicit flag, else the spec's `output_dir`, else
/// `default_name`. Relative paths sit under `$FLOWALIGN_OUT` when set.
pub fn resolve_output(flag: Option<&Path>, spec: &ExperimentSpec, default_name: &str) -> PathBuf {
    let chosen = flag
        .map(Path::to_path_buf)
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(default_name));
    match std::env::var_os(OUT_ENV) {
        Some(root) if chosen.is_relative() => PathBuf::from(root).join(chosen),
        _ => chosen,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_json() {
        let spec = ExperimentSpec::default().with_seed(4);
        assert_eq!(ExperimentSpec::parse(&spec.to_json()).unwrap(), spec);
    }

    #[test]
    fn minimal_spec_uses_defaults() {
        let spec = ExperimentSpec::parse(r#"{"schema_version": 1}"#).unwrap();
        assert_eq!(spec, ExperimentSpec::default());
    }

    #[test]
    fn rejects_typos_and_versions() {
        let e = ExperimentSpec::parse(r#"{"schema_version": 1, "trian": {}}"#).unwrap_err();
        assert!(e.to_string().contains("trian"), "{e}");
        let e = ExperimentSpec::parse(r#"{"schema_version": 1, "train": {"epoch": 3}}"#).unwrap_err();
        assert!(e.to_string().contains("epoch"), "{e}");
        assert!(ExperimentSpec::parse(r#"{"schema_version": 2}"#).is_err());
        assert!(ExperimentSpec::parse(r#"{}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut spec = ExperimentSpec::default();
        spec.train.batch_size = 0;
        assert!(ExperimentSpec::parse(&spec.to_json()).is_err());
    }
}
