//! Candidate similar-but-different image pairs.
//!
//! Three ingestion paths feed the same filters: frames a fixed time apart in
//! a video, before/after edit pairs, and a procedural shape synthesizer that
//! also records which pixels it changed.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::image::{self, Image, DEFAULT_PIXEL_THRESHOLD};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Origin {
    Video,
    Edit,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairMeta {
    pub id: String,
    /// Frame timestamps in milliseconds, for video pairs.
    pub timestamps_ms: Option<(u64, u64)>,
}

/// `(I_a, I_b)`: two same-size images that should look alike but differ.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub a: Image,
    pub b: Image,
    pub origin: Origin,
    pub meta: PairMeta,
    /// Row-major per-pixel mask of perturbed pixels (synthetic pairs only).
    pub known_diff_mask: Option<Vec<bool>>,
}

impl ImagePair {
    pub fn new(
        a: Image,
        b: Image,
        origin: Origin,
        meta: PairMeta,
        known_diff_mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        a.check_dims(&b)?;
        match (&known_diff_mask, origin) {
            (None, Origin::Synthetic) => {
                return Err(Error::InvalidSample("synthetic pair without a diff mask".into()))
            }
            (Some(m), _) if m.len() != a.pixel_count() => {
                return Err(Error::InvalidSample(format!(
                    "mask has {} entries for {} pixels",
                    m.len(),
                    a.pixel_count()
                )))
            }
            _ => {}
        }
        Ok(Self { a, b, origin, meta, known_diff_mask })
    }

    pub fn mask_ratio(&self) -> Option<f64> {
        self.known_diff_mask
            .as_ref()
            .map(|m| m.iter().filter(|&&v| v).count() as f64 / m.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MiningConfig {
    pub gap_seconds: f64,
    /// Pairs with SSIM strictly above this are near-duplicates and dropped.
    pub ssim_max: f64,
    /// Pairs with a diff ratio strictly above this are dropped.
    pub diff_ratio_max: f64,
    pub pixel_threshold: f64,
    /// Frames per second; `None` infers the interval from the timestamps.
    pub frame_rate: Option<f64>,
    /// Apply the diff-ratio ceiling to video pairs as well.
    pub video_diff_filter: bool,
    /// Starting-frame stride for video pairing.
    pub stride: usize,
    pub max_pairs_per_video: Option<usize>,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            gap_seconds: 2.0,
            ssim_max: 0.95,
            diff_ratio_max: 0.8,
            pixel_threshold: DEFAULT_PIXEL_THRESHOLD,
            frame_rate: None,
            video_diff_filter: true,
            stride: 1,
            max_pairs_per_video: None,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("mining: {what}")));
        if !(self.gap_seconds > 0.0 && self.gap_seconds.is_finite()) {
            return bad("gap_seconds must be > 0");
        }
        if !(-1.0..=1.0).contains(&self.ssim_max) {
            return bad("ssim_max outside [-1, 1]");
        }
        if !(0.0..=1.0).contains(&self.diff_ratio_max) {
            return bad("diff_ratio_max outside [0, 1]");
        }
        if !(0.0..=255.0).contains(&self.pixel_threshold) {
            return bad("pixel_threshold outside [0, 255]");
        }
        if let Some(fps) = self.frame_rate {
            if !(fps > 0.0 && fps.is_finite()) {
                return bad("frame_rate must be > 0");
            }
        }
        if self.stride == 0 {
            return bad("stride must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FilterScores {
    pub ssim: f64,
    pub diff_ratio: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    /// SSIM above the ceiling.
    TooSimilar,
    /// Diff ratio above the ceiling.
    TooDifferent,
    /// No pixel exceeds the threshold.
    NoDifference,
}

pub fn score_pair(a: &Image, b: &Image, cfg: &MiningConfig) -> Result<FilterScores> {
    Ok(FilterScores {
        ssim: image::ssim(a, b)?,
        diff_ratio: image::diff_ratio(a, b, cfg.pixel_threshold)?,
        mse: image::mse(a, b)?,
    })
}

pub fn judge_video(scores: &FilterScores, cfg: &MiningConfig) -> Verdict {
    if scores.ssim > cfg.ssim_max {
        Verdict::TooSimilar
    } else if cfg.video_diff_filter && scores.diff_ratio > cfg.diff_ratio_max {
        Verdict::TooDifferent
    } else {
        Verdict::Keep
    }
}

pub fn judge_edit(scores: &FilterScores, cfg: &MiningConfig) -> Verdict {
    if scores.diff_ratio > cfg.diff_ratio_max {
        Verdict::TooDifferent
    } else if scores.diff_ratio == 0.0 {
        Verdict::NoDifference
    } else {
        Verdict::Keep
    }
}

/// Index pairs `(i, j)` with frame `j` nearest to `t_i + gap` and within half a
/// frame interval of it. `timestamps_ms` must be sorted.
pub fn plan_video_pairs(timestamps_ms: &[u64], cfg: &MiningConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    if timestamps_ms.is_empty() {
        return Err(Error::EmptySource);
    }
    if timestamps_ms.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig("frame manifest is not sorted by timestamp".into()));
    }
    let interval_ms = match cfg.frame_rate {
        Some(fps) => 1000.0 / fps,
        None => median_interval(timestamps_ms).unwrap_or(0.0),
    };
    let half = interval_ms / 2.0;
    let gap_ms = cfg.gap_seconds * 1000.0;
    let mut out = Vec::new();
    for i in (0..timestamps_ms.len()).step_by(cfg.stride) {
        let target = timestamps_ms[i] as f64 + gap_ms;
        let k = timestamps_ms.partition_point(|&t| (t as f64) < target);
        let best = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&j| j > i && j < timestamps_ms.len())
            .min_by(|&x, &y| {
                let dx = (timestamps_ms[x] as f64 - target).abs();
                let dy = (timestamps_ms[y] as f64 - target).abs();
                dx.total_cmp(&dy)
            });
        if let Some(j) = best {
            if (timestamps_ms[j] as f64 - target).abs() <= half {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

fn median_interval(ts: &[u64]) -> Option<f64> {
    let mut d: Vec<u64> = ts.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0).collect();
    if d.is_empty() {
        return None;
    }
    d.sort_unstable();
    Some(d[d.len() / 2] as f64)
}

/// One step of a mining pass.
#[derive(Debug, Clone, PartialEq)]
pub enum MiningEvent {
    Accepted { pair: ImagePair, scores: FilterScores },
    Rejected { id: String, verdict: Verdict, scores: FilterScores },
    /// Entry could not be evaluated; mining continues.
    Skipped { id: String, reason: String },
}

/// Mines video pairs from `(timestamp_ms, handle)` frames using `load` to
/// decode each handle. Frames are loaded at most once.
pub fn mine_video_pairs<H, E, L>(
    frames: &[(u64, H)],
    cfg: &MiningConfig,
    mut load: L,
) -> Result<Vec<MiningEvent>>
where
    L: FnMut(&H) -> core::result::Result<Image, E>,
    E: core::fmt::Display,
{
    let ts: Vec<u64> = frames.iter().map(|f| f.0).collect();
    let plan = plan_video_pairs(&ts, cfg)?;
    let mut cache: BTreeMap<usize, core::result::Result<Image, String>> = BTreeMap::new();
    let mut events = Vec::new();
    let mut accepted = 0usize;
    for (i, j) in plan {
        if cfg.max_pairs_per_video.is_some_and(|m| accepted >= m) {
            break;
        }
        // Frames before `i` are never referenced again.
        cache.retain(|&k, _| k >= i);
        for k in [i, j] {
            cache
                .entry(k)
                .or_insert_with(|| load(&frames[k].1).map_err(|e| format!("{e}")));
        }
        let id = format!("video:{i}-{j}");
        let (a, b) = match (&cache[&i], &cache[&j]) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                events.push(MiningEvent::Skipped { id, reason: e.clone() });
                continue;
            }
        };
        let scores = match score_pair(a, b, cfg) {
            Ok(s) => s,
            Err(e) => {
                events.push(MiningEvent::Skipped { id, reason: format!("{e}") });
                continue;
            }
        };
        match judge_video(&scores, cfg) {
            Verdict::Keep => {
                let meta = PairMeta { id, timestamps_ms: Some((ts[i], ts[j])) };
                let pair = ImagePair::new(a.clone(), b.clone(), Origin::Video, meta, None)?;
                accepted += 1;
                events.push(MiningEvent::Accepted { pair, scores });
            }
            verdict => events.push(MiningEvent::Rejected { id, verdict, scores }),
        }
    }
    Ok(events)
}

/// Mines before/after edit pairs. Each entry is independent.
pub fn mine_edit_pairs<H, E, L>(
    entries: &[(H, H)],
    cfg: &MiningConfig,
    mut load: L,
) -> Result<Vec<MiningEvent>>
where
    L: FnMut(&H) -> core::result::Result<Image, E>,
    E: core::fmt::Display,
{
    cfg.validate()?;
    if entries.is_empty() {
        return Err(Error::EmptySource);
    }
    let mut events = Vec::with_capacity(entries.len());
    for (n, (before, after)) in entries.iter().enumerate() {
        let id = format!("edit:{n}");
        let loaded = load(before).and_then(|a| load(after).map(|b| (a, b)));
        let (a, b) = match loaded {
            Ok(ab) => ab,
            Err(e) => {
                events.push(MiningEvent::Skipped { id, reason: format!("{e}") });
                continue;
            }
        };
        let scores = match score_pair(&a, &b, cfg) {
            Ok(s) => s,
            Err(e) => {
                events.push(MiningEvent::Skipped { id, reason: format!("{e}") });
                continue;
            }
        };
        match judge_edit(&scores, cfg) {
            Verdict::Keep => {
                let meta = PairMeta { id, timestamps_ms: None };
                let pair = ImagePair::new(a, b, Origin::Edit, meta, None)?;
                events.push(MiningEvent::Accepted { pair, scores });
            }
            verdict => events.push(MiningEvent::Rejected { id, verdict, scores }),
        }
    }
    Ok(events)
}

/// Shape-level edits the synthesizer may apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EditOps {
    pub recolor: bool,
    pub relocate: bool,
    pub delete: bool,
}

impl EditOps {
    pub const ALL: EditOps = EditOps { recolor: true, relocate: true, delete: true };

    fn choices(&self) -> Vec<EditOp> {
        let mut v = Vec::new();
        if self.recolor {
            v.push(EditOp::Recolor);
        }
        if self.relocate {
            v.push(EditOp::Relocate);
        }
        if self.delete {
            v.push(EditOp::Delete);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EditOp {
    Recolor,
    Relocate,
    Delete,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthParams {
    pub size: usize,
    pub n_shapes: usize,
    pub n_edits: usize,
    /// Minimum channel-averaged colour change of a recolour edit.
    pub edit_magnitude: f64,
    /// Shape extent as a fraction of the image side, `[lo, hi]`.
    pub shape_scale: (f64, f64),
    /// Shape centres are kept inside this centred fraction of the frame.
    pub placement: f64,
    pub ops: EditOps,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            size: 128,
            n_shapes: 6,
            n_edits: 2,
            edit_magnitude: 80.0,
            shape_scale: (0.12, 0.3),
            placement: 0.6,
            ops: EditOps::ALL,
        }
    }
}

/// Attempts before [`synth_pair`] gives up.
pub const SYNTH_ATTEMPTS: usize = 20;
/// Allowed gap between measured diff ratio and the mask-derived ratio.
pub const MASK_SLACK: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    color: [u8; 3],
}

impl Shape {
    fn covers(&self, x: usize, y: usize) -> bool {
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        match self.kind {
            ShapeKind::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            ShapeKind::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }
}

/// Paints layered shapes; returns the colour image and the top-layer index
/// per pixel (`usize::MAX` for background).
fn paint(size: usize, bg: [u8; 3], shapes: &[Option<Shape>]) -> (Vec<u8>, Vec<usize>) {
    let mut data = Vec::with_capacity(size * size * 3);
    let mut top = vec![usize::MAX; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut c = bg;
            for (k, s) in shapes.iter().enumerate() {
                if let Some(s) = s {
                    if s.covers(x, y) {
                        c = s.color;
                        top[y * size + x] = k;
                    }
                }
            }
            data.extend_from_slice(&c);
        }
    }
    (data, top)
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [u8; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

fn shifted_color<R: Rng + ?Sized>(c: [u8; 3], magnitude: f64, rng: &mut R) -> [u8; 3] {
    c.map(|v| {
        let m = (magnitude + rng.gen_range(0.0..40.0)).min(255.0);
        let up = v as f64 + m;
        let down = v as f64 - m;
        let pick = if up <= 255.0 && (down < 0.0 || rng.gen::<bool>()) { up } else { down };
        pick.clamp(0.0, 255.0) as u8
    })
}

/// Renders a random shape scene and a perturbed partner.
///
/// The returned pair satisfies `ssim <= cfg.ssim_max`,
/// `0 < diff_ratio <= cfg.diff_ratio_max`, and agrees with its mask within
/// [`MASK_SLACK`]; scenes are redrawn up to [`SYNTH_ATTEMPTS`] times.
pub fn synth_pair<R: Rng + ?Sized>(
    params: &SynthParams,
    cfg: &MiningConfig,
    rng: &mut R,
) -> Result<ImagePair> {
    if params.n_edits == 0 || params.n_edits > params.n_shapes {
        return Err(Error::InvalidConfig(format!(
            "n_edits must be in 1..={} (got {})",
            params.n_shapes, params.n_edits
        )));
    }
    if params.edit_magnitude <= cfg.pixel_threshold {
        return Err(Error::InvalidConfig(format!(
            "edit magnitude {} must exceed the pixel threshold {}",
            params.edit_magnitude, cfg.pixel_threshold
        )));
    }
    let (slo, shi) = params.shape_scale;
    if !(slo > 0.0 && slo <= shi) || !(params.placement > 0.0 && params.placement <= 1.0) {
        return Err(Error::InvalidConfig("shape scale or placement".into()));
    }
    let ops = params.ops.choices();
    if ops.is_empty() {
        return Err(Error::InvalidConfig("no edit operations enabled".into()));
    }
    let n = params.size;
    let side = n as f64;
    let margin = side * (1.0 - params.placement) / 2.0;

    for _ in 0..SYNTH_ATTEMPTS {
        let bg = random_color(rng);
        let shape = |rng: &mut R| Shape {
            kind: if rng.gen::<bool>() { ShapeKind::Rect } else { ShapeKind::Ellipse },
            cx: rng.gen_range(margin..=side - margin),
            cy: rng.gen_range(margin..=side - margin),
            rx: side * rng.gen_range(slo..=shi) / 2.0,
            ry: side * rng.gen_range(slo..=shi) / 2.0,
            color: random_color(rng),
        };
        let base: Vec<Option<Shape>> = (0..params.n_shapes).map(|_| Some(shape(rng))).collect();
        let mut edited = base.clone();
        let mut recolored = vec![false; params.n_shapes];
        let mut idx: Vec<usize> = (0..params.n_shapes).collect();
        for k in 0..params.n_edits {
            let j = rng.gen_range(k..idx.len());
            idx.swap(k, j);
            let target = idx[k];
            let s = base[target].expect("base shapes are present");
            match ops[rng.gen_range(0..ops.len())] {
                EditOp::Recolor => {
                    edited[target] = Some(Shape { color: shifted_color(s.color, params.edit_magnitude, rng), ..s });
                    recolored[target] = true;
                }
                EditOp::Relocate => {
                    let dx = rng.gen_range(1.0..2.0) * s.rx * if rng.gen() { 1.0 } else { -1.0 };
                    let dy = rng.gen_range(-1.0..1.0) * s.ry;
                    edited[target] = Some(Shape {
                        cx: (s.cx + dx).clamp(margin, side - margin),
                        cy: (s.cy + dy).clamp(margin, side - margin),
                        ..s
                    });
                }
                EditOp::Delete => edited[target] = None,
            }
        }
        let (da, top_a) = paint(n, bg, &base);
        let (db, top_b) = paint(n, bg, &edited);
        let mask: Vec<bool> = top_a
            .iter()
            .zip(&top_b)
            .map(|(&ta, &tb)| ta != tb || (ta != usize::MAX && recolored[ta]))
            .collect();
        let a = Image::new(n, n, da)?;
        let b = Image::new(n, n, db)?;
        let scores = score_pair(&a, &b, cfg)?;
        let mask_ratio = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        let ok = scores.ssim <= cfg.ssim_max
            && scores.diff_ratio > 0.0
            && scores.diff_ratio <= cfg.diff_ratio_max
            && (scores.diff_ratio - mask_ratio).abs() <= MASK_SLACK;
        if ok {
            let meta = PairMeta { id: String::new(), timestamps_ms: None };
            return ImagePair::new(a, b, Origin::Synthetic, meta, Some(mask));
        }
    }
    Err(Error::SynthesisFailure(SYNTH_ATTEMPTS))
}
