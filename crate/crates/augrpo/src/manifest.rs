//! Frame, edit and pair manifests.
//!
//! Relative paths inside a manifest are resolved against the manifest's own
//! directory.

use std::path::{Path, PathBuf};

use augrpo_core::sources::{ImagePair, Origin, PairMeta};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::{jsonl, png};

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn tab_lines(path: &Path) -> CliResult<Vec<(usize, String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::at(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line
            .split_once('\t')
            .ok_or_else(|| CliError::Data(format!("{}:{}: expected two tab-separated fields", path.display(), n + 1)))?;
        out.push((n + 1, a.trim().to_string(), b.trim().to_string()));
    }
    Ok(out)
}

/// `timestamp_ms<TAB>path` lines, sorted by timestamp.
pub fn read_frame_manifest(path: &Path) -> CliResult<Vec<(u64, PathBuf)>> {
    let base = base_dir(path);
    let mut frames = tab_lines(path)?
        .into_iter()
        .map(|(n, t, p)| {
            let ts = t
                .parse::<u64>()
                .map_err(|e| CliError::Data(format!("{}:{n}: timestamp {t:?}: {e}", path.display())))?;
            Ok((ts, resolve(&base, &p)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    frames.sort_by_key(|f| f.0);
    Ok(frames)
}

/// `before_path<TAB>after_path` lines.
pub fn read_edit_manifest(path: &Path) -> CliResult<Vec<(PathBuf, PathBuf)>> {
    let base = base_dir(path);
    Ok(tab_lines(path)?
        .into_iter()
        .map(|(_, a, b)| (resolve(&base, &a), resolve(&base, &b)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub origin: Origin,
    pub path_a: String,
    pub path_b: String,
    pub ssim: f64,
    pub diff_ratio: f64,
    /// Changed-pixel mask of synthetic pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps_ms: Option<(u64, u64)>,
}

/// Loads every pair listed in a pair manifest.
pub fn load_pairs(path: &Path) -> CliResult<Vec<ImagePair>> {
    let base = base_dir(path);
    let records: Vec<PairRecord> = jsonl::read_all(path)?;
    records
        .into_iter()
        .map(|r| {
            let a = png::read_png(&resolve(&base, &r.path_a))?;
            let b = png::read_png(&resolve(&base, &r.path_b))?;
            let mask = match &r.path_mask {
                Some(m) => {
                    let (w, h, mask) = png::read_mask(&resolve(&base, m))?;
                    if (w, h) != (a.width(), a.height()) {
                        return Err(CliError::Data(format!("{}: mask size differs from images", r.pair_id)));
                    }
                    Some(mask)
                }
                None => None,
            };
            let meta = PairMeta { id: r.pair_id.clone(), timestamps_ms: r.timestamps_ms };
            ImagePair::new(a, b, r.origin, meta, mask).map_err(|e| CliError::Data(format!("{}: {e}", r.pair_id)))
        })
        .collect()
}
