//! Text checkpoint format.
//!
//! Line 1 is a JSON header: format tag, version, tensor shapes and free-form
//! metadata. Every following line holds one tensor's values, row-major and
//! comma separated, printed with shortest round-trip formatting so a reload is
//! bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "flowalign-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub param_count: usize,
    pub shapes: Vec<(usize, usize)>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode(params: &dyn ParamSet, meta: serde_json::Value) -> String {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        param_count: params.param_count(),
        shapes: params.shapes(),
        meta,
    };
    let mut out = serde_json::to_string(&header).expect("header serialises");
    out.push('\n');
    params.visit(&mut |_, t| {
        let line: Vec<String> = t.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    });
    out
}

/// Parses `text` into `target`, whose architecture must match the header.
/// Returns the header metadata.
pub fn decode(text: &str, target: &mut dyn ParamSet) -> Result<serde_json::Value> {
    let mut lines = text.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
    let header: CheckpointHeader = serde_json::from_str(head)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "format tag {:?}, expected {CHECKPOINT_FORMAT:?}",
            header.format
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {}, expected {CHECKPOINT_VERSION}",
            header.version
        )));
    }
    let expected = target.shapes();
    if header.shapes != expected {
        return Err(Error::Checkpoint(format!(
            "architecture mismatch: checkpoint has {} tensors, model expects {}",
            header.shapes.len(),
            expected.len()
        )));
    }
    let mut flat = Vec::with_capacity(header.param_count);
    for (k, &(r, c)) in header.shapes.iter().enumerate() {
        let line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {k}")))?;
        let before = flat.len();
        if !line.is_empty() {
            for field in line.split(',') {
                let v: f64 = field
                    .parse()
                    .map_err(|e| Error::Checkpoint(format!("tensor {k}: {e}")))?;
                flat.push(v);
            }
        }
        if flat.len() - before != r * c {
            return Err(Error::Checkpoint(format!(
                "tensor {k}: expected {} values, found {}",
                r * c,
                flat.len() - before
            )));
        }
    }
    if flat.len() != header.param_count {
        return Err(Error::Checkpoint("parameter count mismatch".into()));
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Checkpoint("trailing data after last tensor".into()));
    }
    target.assign_flat(&flat);
    Ok(header.meta)
}

pub fn save(path: &Path, params: &dyn ParamSet, meta: serde_json::Value) -> Result<()> {
    crate::io::write_atomic(path, encode(params, meta).as_bytes())
}

pub fn load(path: &Path, target: &mut dyn ParamSet) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&text, target)
}
