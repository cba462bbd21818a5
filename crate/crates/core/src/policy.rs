//! Logistic same/different policy standing in for a vision-language model.
//!
//! Every comparison slot of a prompt gets a feature vector `f` computed from
//! its two images. One shared weight vector `w` scores `z = w . f`, read as
//! the logit of "same". A forward question ("are they the same?") answers T
//! with probability `sigmoid(z)`; a reverse question answers T with
//! probability `sigmoid(-z)`. A response is the independent product of its
//! slot letters, so log-probabilities and their gradients are exact.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::grpo::{self, GroupStats, GrpoConfig, ObjectiveBreakdown, RolloutLogProbs};
use crate::image::{self, Image, CHANNELS};
use crate::math;
use crate::prompt::{validate_order, Direction, PromptInstance};
use crate::triplet::{Answer, Comparison, SampleKind};
use crate::{Error, Result};

pub const FEATURE_DIM: usize = 16;

/// Reasoning text emitted by every rollout.
pub const THINK_STUB: &str = "Comparing the images pair by pair.";

const GRAY_BINS: usize = 16;
const CHANNEL_BINS: usize = 16;
const PALETTE_LEVELS: usize = 8;
const PALETTE_BINS: usize = PALETTE_LEVELS * PALETTE_LEVELS * PALETTE_LEVELS;
/// A palette bin counts as present once it holds this fraction of pixels.
const PALETTE_PRESENCE: f64 = 0.004;

/// Multipliers bringing each raw statistic to roughly unit spread.
const FEATURE_SCALE: [f64; FEATURE_DIM] = [1.0, 5.0, 5.0, 5.0, 5.0, 5.0, 10.0, 1.0, 10.0, 10.0, 10.0, 10.0, 20.0, 20.0, 10.0, 20.0];

/// Pairwise image statistics, each multiplied by a fixed scale. Index 0 is a constant bias of 1.
///
/// | idx | feature |
/// |-----|---------|
/// | 0 | bias |
/// | 1 | mean absolute difference |
/// | 2-5 | per-quadrant mean absolute difference |
/// | 6 | gray histogram L1 |
/// | 7 | SSIM |
/// | 8 | largest colour-layout residual |
/// | 9-11 | R, G, B histogram L1 |
/// | 12, 13 | larger and smaller palette mass absent from the other image |
/// | 14 | palette histogram L1 |
/// | 15 | RMS colour-layout residual |
///
/// The layout residuals fit, per axis, a scale and shift mapping the
/// centroids of colours present in both images from one image onto the
/// other. Two crops of one scene agree up to such a map; a moved shape
/// does not.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn dot(&self, w: &[f64; FEATURE_DIM]) -> f64 {
        self.0.iter().zip(w).map(|(f, w)| f * w).sum()
    }
}

fn hist_l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}

struct Summary {
    luma: Vec<f64>,
    gray: [f64; GRAY_BINS],
    channel: [[f64; CHANNEL_BINS]; CHANNELS],
    palette: [f64; PALETTE_BINS],
    /// Per palette bin centroid, in fractions of the frame.
    centroid: [(f64, f64); PALETTE_BINS],
}

fn summarize(img: &Image) -> Summary {
    let luma = img.luma();
    let n = img.pixel_count() as f64;
    let mut gray = [0.0; GRAY_BINS];
    for &l in &luma {
        gray[((l as usize) * GRAY_BINS / 256).min(GRAY_BINS - 1)] += 1.0 / n;
    }
    let mut channel = [[0.0; CHANNEL_BINS]; CHANNELS];
    let mut palette = [0.0; PALETTE_BINS];
    let mut sums = [(0.0, 0.0, 0usize); PALETTE_BINS];
    let (w, h) = (img.width(), img.height());
    for (i, p) in img.as_raw().chunks_exact(CHANNELS).enumerate() {
        let mut bin = 0;
        for c in 0..CHANNELS {
            channel[c][p[c] as usize * CHANNEL_BINS / 256] += 1.0 / n;
            bin = bin * PALETTE_LEVELS + p[c] as usize * PALETTE_LEVELS / 256;
        }
        palette[bin] += 1.0 / n;
        let s = &mut sums[bin];
        s.0 += (i % w) as f64 + 0.5;
        s.1 += (i / w) as f64 + 0.5;
        s.2 += 1;
    }
    let centroid = sums.map(|(x, y, c)| if c == 0 { (0.0, 0.0) } else { (x / c as f64 / w as f64, y / c as f64 / h as f64) });
    Summary { luma, gray, channel, palette, centroid }
}

/// Mass of `a`'s palette in bins that `b` barely uses.
fn novel_mass(a: &[f64; PALETTE_BINS], b: &[f64; PALETTE_BINS]) -> f64 {
    a.iter().zip(b).filter(|(_, &q)| q < PALETTE_PRESENCE).map(|(p, _)| p).sum()
}

/// Bins counted as layout anchors: present in both images, and not the
/// dominant (background) colour of either.
const ANCHOR_MAX_MASS: f64 = 0.3;

/// Residuals of `to = s * from + t` fitted by least squares.
fn axis_residuals(from: &[f64], to: &[f64]) -> Vec<f64> {
    let n = from.len() as f64;
    let (mf, mt) = (from.iter().sum::<f64>() / n, to.iter().sum::<f64>() / n);
    let var: f64 = from.iter().map(|x| (x - mf) * (x - mf)).sum();
    let cov: f64 = from.iter().zip(to).map(|(x, y)| (x - mf) * (y - mt)).sum();
    let s = if var > 1e-12 { cov / var } else { 1.0 };
    from.iter().zip(to).map(|(x, y)| y - mt - s * (x - mf)).collect()
}

/// (max, rms) residual of mapping `a`'s anchor centroids onto `b`'s.
fn layout_residual(a: &Summary, b: &Summary) -> (f64, f64) {
    let anchors: Vec<usize> = (0..PALETTE_BINS)
        .filter(|&k| {
            let (p, q) = (a.palette[k], b.palette[k]);
            p >= PALETTE_PRESENCE && q >= PALETTE_PRESENCE && p <= ANCHOR_MAX_MASS && q <= ANCHOR_MAX_MASS
        })
        .collect();
    if anchors.len() < 3 {
        return (0.0, 0.0);
    }
    let pick = |s: &Summary, y: bool| -> Vec<f64> {
        anchors.iter().map(|&k| if y { s.centroid[k].1 } else { s.centroid[k].0 }).collect()
    };
    let rx = axis_residuals(&pick(a, false), &pick(b, false));
    let ry = axis_residuals(&pick(a, true), &pick(b, true));
    let d: Vec<f64> = rx.iter().zip(&ry).map(|(x, y)| math::sqrt(x * x + y * y)).collect();
    let max = d.iter().fold(0.0f64, |m, &v| m.max(v));
    let rms = math::sqrt(d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64);
    (max, rms)
}

/// Deterministic, symmetric statistics of an image pair.
pub fn featurize_pair(a: &Image, b: &Image) -> Result<FeatureVector> {
    a.check_dims(b)?;
    let (w, h) = (a.width(), a.height());
    let (sa, sb) = (summarize(a), summarize(b));
    let mut f = [0.0; FEATURE_DIM];
    f[0] = 1.0;

    let diff = image::diff_map(a, b)?;
    let n = diff.len() as f64;
    f[1] = diff.iter().sum::<f64>() / n / 255.0;
    let (hx, hy) = (w / 2, h / 2);
    let mut quad = [(0.0, 0usize); 4];
    for y in 0..h {
        for x in 0..w {
            let q = usize::from(x >= hx) + 2 * usize::from(y >= hy);
            quad[q].0 += diff[y * w + x];
            quad[q].1 += 1;
        }
    }
    for (k, (s, c)) in quad.iter().enumerate() {
        f[2 + k] = s / *c as f64 / 255.0;
    }
    f[6] = hist_l1(&sa.gray, &sb.gray);
    f[7] = image::ssim_luma(&sa.luma, &sb.luma, w, h);
    for c in 0..CHANNELS {
        f[9 + c] = hist_l1(&sa.channel[c], &sb.channel[c]);
    }
    let (na, nb) = (novel_mass(&sa.palette, &sb.palette), novel_mass(&sb.palette, &sa.palette));
    f[12] = na.max(nb);
    f[13] = na.min(nb);
    f[14] = hist_l1(&sa.palette, &sb.palette);
    let (ab, ba) = (layout_residual(&sa, &sb), layout_residual(&sb, &sa));
    f[8] = (ab.0 + ba.0) / 2.0;
    f[15] = (ab.1 + ba.1) / 2.0;
    for (v, k) in f.iter_mut().zip(FEATURE_SCALE) {
        *v *= k;
    }
    Ok(FeatureVector(f))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyParams {
    pub w: [f64; FEATURE_DIM],
    pub version: u64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams { w: [0.0; FEATURE_DIM], version: 0 }
    }
}

impl PolicyParams {
    pub fn new(w: [f64; FEATURE_DIM]) -> Self {
        PolicyParams { w, version: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite())
    }

    /// FNV-1a over the weight bit patterns and the version.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for word in self.w.iter().map(|v| v.to_bits()).chain([self.version]) {
            for b in word.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Probability that the pair behind `f` is "the same".
pub fn slot_prob_t(params: &PolicyParams, f: &FeatureVector) -> f64 {
    math::sigmoid(f.dot(&params.w))
}

/// Features of every comparison of one prompt, in asked order.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptFeatures {
    pub slots: Vec<FeatureVector>,
    pub direction: Direction,
}

impl PromptFeatures {
    pub fn new(slots: Vec<FeatureVector>, direction: Direction) -> Self {
        PromptFeatures { slots, direction }
    }

    /// Featurizes each comparison of `order` over `images` (slot numbers are 1-based).
    pub fn from_images(images: &[Image], order: &[Comparison], direction: Direction) -> Result<Self> {
        let kind = match images.len() {
            3 => SampleKind::Triplet,
            2 => SampleKind::Pair,
            n => return Err(Error::InvalidSample(format!("{n} images"))),
        };
        validate_order(kind, order)?;
        let slots = order
            .iter()
            .map(|c| featurize_pair(&images[c.0 as usize - 1], &images[c.1 as usize - 1]))
            .collect::<Result<_>>()?;
        Ok(PromptFeatures { slots, direction })
    }

    pub fn for_prompt(prompt: &PromptInstance, images: &[Image]) -> Result<Self> {
        Self::from_images(images, &prompt.comparison_order, prompt.direction)
    }

    fn sign(&self) -> f64 {
        match self.direction {
            Direction::Forward => 1.0,
            Direction::Reverse => -1.0,
        }
    }

    /// Logit of answering T in each slot.
    pub fn logits(&self, params: &PolicyParams) -> Vec<f64> {
        let s = self.sign();
        self.slots.iter().map(|f| s * f.dot(&params.w)).collect()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rollout {
    pub letters: Answer,
    pub think_stub: String,
    pub rendered_text: String,
    /// Log-probability under the sampling prompt and parameters.
    pub logp_weak: f64,
    pub per_slot_logits: Vec<f64>,
}

pub fn render_response(letters: &Answer) -> String {
    format!("<think>{THINK_STUB}</think><answer>{letters}</answer>")
}

fn letter_logp(t: bool, logit: f64) -> f64 {
    if t {
        math::log_sigmoid(logit)
    } else {
        math::log_sigmoid(-logit)
    }
}

/// Samples one letter per slot at temperature 1.
pub fn sample_with_features<R: Rng + ?Sized>(params: &PolicyParams, pf: &PromptFeatures, rng: &mut R) -> Rollout {
    let logits = pf.logits(params);
    let mut letters = Vec::with_capacity(logits.len());
    let mut logp = 0.0;
    for &z in &logits {
        let t = rng.gen::<f64>() < math::sigmoid(z);
        logp += letter_logp(t, z);
        letters.push(t);
    }
    let letters = Answer(letters);
    Rollout {
        rendered_text: render_response(&letters),
        letters,
        think_stub: THINK_STUB.into(),
        logp_weak: logp,
        per_slot_logits: logits,
    }
}

pub fn sample_response<R: Rng + ?Sized>(
    params: &PolicyParams,
    prompt: &PromptInstance,
    images: &[Image],
    rng: &mut R,
) -> Result<Rollout> {
    Ok(sample_with_features(params, &PromptFeatures::for_prompt(prompt, images)?, rng))
}

fn check_letters(pf: &PromptFeatures, letters: &Answer) -> Result<()> {
    if letters.len() == pf.len() {
        Ok(())
    } else {
        Err(Error::ContractViolation(format!("{} letters for {} comparisons", letters.len(), pf.len())))
    }
}

/// Log-probability of `letters` under `params` on the prompt behind `pf`.
pub fn logp_letters(params: &PolicyParams, pf: &PromptFeatures, letters: &Answer) -> Result<f64> {
    check_letters(pf, letters)?;
    Ok(pf.logits(params).iter().zip(&letters.0).map(|(&z, &t)| letter_logp(t, z)).sum())
}

pub fn logp_response(params: &PolicyParams, prompt: &PromptInstance, images: &[Image], letters: &Answer) -> Result<f64> {
    logp_letters(params, &PromptFeatures::for_prompt(prompt, images)?, letters)
}

/// `d/dw log p(letters) = sum_slots (1[T] - P(T)) * sign * f`.
pub fn grad_logp(params: &PolicyParams, pf: &PromptFeatures, letters: &Answer) -> Result<[f64; FEATURE_DIM]> {
    check_letters(pf, letters)?;
    let s = pf.sign();
    let mut g = [0.0; FEATURE_DIM];
    for (f, &t) in pf.slots.iter().zip(&letters.0) {
        let z = s * f.dot(&params.w);
        let coef = (f64::from(u8::from(t)) - math::sigmoid(z)) * s;
        for (gk, fk) in g.iter_mut().zip(&f.0) {
            *gk += coef * fk;
        }
    }
    Ok(g)
}

/// Parameter snapshots used by one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Snapshots<'a> {
    pub theta: &'a PolicyParams,
    pub old: &'a PolicyParams,
    pub reference: &'a PolicyParams,
}

/// Log-probabilities of each rollout under the three snapshots, on `strong`.
pub fn group_logprobs(snaps: Snapshots<'_>, strong: &PromptFeatures, letters: &[Answer]) -> Result<Vec<RolloutLogProbs>> {
    letters
        .iter()
        .map(|l| {
            Ok(RolloutLogProbs {
                theta: logp_letters(snaps.theta, strong, l)?,
                old: logp_letters(snaps.old, strong, l)?,
                reference: logp_letters(snaps.reference, strong, l)?,
            })
        })
        .collect()
}

pub fn group_objective(
    snaps: Snapshots<'_>,
    stats: &GroupStats,
    strong: &PromptFeatures,
    letters: &[Answer],
    cfg: &GrpoConfig,
) -> Result<ObjectiveBreakdown> {
    grpo::grpo_objective(stats, &group_logprobs(snaps, strong, letters)?, cfg)
}

/// Gradient of [`group_objective`] with respect to `theta`.
///
/// Per rollout: `A r grad` on the unclipped branch (zero where the clip
/// branch is selected or the ratio was clamped), plus `beta (x - 1) grad`
/// from the KL penalty, averaged over the group.
pub fn grad_objective(
    snaps: Snapshots<'_>,
    stats: &GroupStats,
    strong: &PromptFeatures,
    letters: &[Answer],
    cfg: &GrpoConfig,
) -> Result<[f64; FEATURE_DIM]> {
    let adv = stats
        .advantages
        .as_ref()
        .filter(|_| !stats.skipped())
        .ok_or_else(|| Error::ContractViolation("gradient of a skipped group".into()))?;
    if adv.len() != letters.len() {
        return Err(Error::ContractViolation(format!("{} advantages for {} rollouts", adv.len(), letters.len())));
    }
    let lps = group_logprobs(snaps, strong, letters)?;
    let mut g = [0.0; FEATURE_DIM];
    for ((l, lp), &a) in letters.iter().zip(&lps).zip(adv) {
        let r = grpo::prob_ratio(lp.theta, lp.old)?;
        let surrogate = if r.clamped || grpo::clip_active(r.value, a, cfg.clip_eps) { 0.0 } else { a * r.value };
        let x = math::exp(lp.reference - lp.theta);
        let coef = surrogate + cfg.kl_beta * (x - 1.0);
        if coef != 0.0 {
            let gl = grad_logp(snaps.theta, strong, l)?;
            for (gk, glk) in g.iter_mut().zip(gl) {
                *gk += coef * glk;
            }
        }
    }
    let n = letters.len() as f64;
    for gk in &mut g {
        *gk /= n;
    }
    Ok(g)
}

/// Ascent on the objective: `w + lr * grad`, version incremented.
pub fn sgd_step(params: &PolicyParams, grad: &[f64; FEATURE_DIM], lr: f64) -> Result<PolicyParams> {
    if !lr.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient or learning rate".into()));
    }
    let mut w = params.w;
    for (wk, gk) in w.iter_mut().zip(grad) {
        *wk += lr * gk;
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("update produced non-finite weights".into()));
    }
    Ok(PolicyParams { w, version: params.version + 1 })
}

/// Most likely letter per slot; exact ties go to a fair coin from `rng`.
pub fn greedy_letters<R: Rng + ?Sized>(params: &PolicyParams, pf: &PromptFeatures, rng: &mut R) -> Answer {
    Answer(
        pf.logits(params)
            .into_iter()
            .map(|z| if z == 0.0 { rng.gen::<bool>() } else { z > 0.0 })
            .collect(),
    )
}
