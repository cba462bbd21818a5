//! Plain-text policy checkpoints:
//!
//! ```text
//! d 16
//! version 600
//! lr 0.05
//! <one weight per line>
//! ```
//!
//! Weights use Rust's shortest round-trip formatting, so reading a written
//! checkpoint gives back the identical bits.

use std::path::Path;

use augrpo_core::policy::{PolicyParams, FEATURE_DIM};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub lr: f64,
}

pub fn render(params: &PolicyParams, lr: f64) -> String {
    let mut s = format!("d {FEATURE_DIM}\nversion {}\nlr {lr:?}\n", params.version);
    for w in params.w {
        s.push_str(&format!("{w:?}\n"));
    }
    s
}

pub fn parse(text: &str) -> Result<Checkpoint, String> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let mut header = |key: &str| -> Result<String, String> {
        let line = lines.next().ok_or_else(|| format!("missing {key} line"))?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim().to_string()),
            _ => Err(format!("expected `{key} ...`, found {line:?}")),
        }
    };
    let d: usize = header("d")?.parse().map_err(|e| format!("d: {e}"))?;
    if d != FEATURE_DIM {
        return Err(format!("checkpoint has {d} weights, policy uses {FEATURE_DIM}"));
    }
    let version: u64 = header("version")?.parse().map_err(|e| format!("version: {e}"))?;
    let lr: f64 = header("lr")?.parse().map_err(|e| format!("lr: {e}"))?;
    let weights = lines
        .map(|l| l.parse::<f64>().map_err(|e| format!("weight {l:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let w: [f64; FEATURE_DIM] = weights
        .try_into()
        .map_err(|v: Vec<f64>| format!("{} weights listed, header says {d}", v.len()))?;
    Ok(Checkpoint { params: PolicyParams { w, version }, lr })
}

pub fn write(path: &Path, params: &PolicyParams, lr: f64) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, render(params, lr)).map_err(|e| CliError::at(path, e))
}

pub fn read(path: &Path) -> CliResult<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::at(path, e))?;
    parse(&text).map_err(|e| CliError::at(path, e))
}
