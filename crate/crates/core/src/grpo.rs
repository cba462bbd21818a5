//! Group-relative policy optimisation terms.
//!
//! For a group of `G` rollouts of one prompt with rewards `R_i`:
//!
//! ```text
//! A_i   = (R_i - mean(R)) / std(R)                       population std
//! r_i   = exp(logp_theta(o_i) - logp_old(o_i))
//! x_i   = exp(logp_ref(o_i) - logp_theta(o_i))
//! kl_i  = x_i - ln x_i - 1
//! J     = 1/G * sum_i [ min(r_i A_i, clip(r_i, 1-eps, 1+eps) A_i) - beta kl_i ]
//! ```
//!
//! The loss minimised by training is `-J`. All log-probabilities of one
//! group are evaluated on the same (strong-view) prompt.

use alloc::format;
use alloc::vec::Vec;

use crate::math;
use crate::reward::RewardWeights;
use crate::{Error, Result};

pub const RATIO_MIN: f64 = 1e-8;
pub const RATIO_MAX: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub weights: RewardWeights,
    /// Groups whose reward std falls below this are skipped.
    pub std_floor: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.01,
            weights: RewardWeights::default(),
            std_floor: 1e-8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidConfig(format!("group size {} < 2", self.group_size)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::InvalidConfig(format!("clip eps {} outside (0, 1)", self.clip_eps)));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("kl beta {}", self.kl_beta)));
        }
        if self.std_floor.is_nan() || self.std_floor < 0.0 {
            return Err(Error::InvalidConfig(format!("std floor {}", self.std_floor)));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SkipReason {
    AllCorrect,
    AllWrong,
    ZeroStd,
}

/// Skip groups where every answer is correct or every answer is wrong.
pub fn should_skip(accuracy: &[bool]) -> Option<SkipReason> {
    if accuracy.iter().all(|&a| a) {
        Some(SkipReason::AllCorrect)
    } else if accuracy.iter().all(|&a| !a) {
        Some(SkipReason::AllWrong)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupStats {
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Absent when the group is skipped.
    pub advantages: Option<Vec<f64>>,
    pub skip_reason: Option<SkipReason>,
}

impl GroupStats {
    pub fn skipped(&self) -> bool {
        self.skip_reason.is_some()
    }

    /// Stats for a group skipped before normalisation.
    pub fn skipped_with(rewards: &[f64], reason: SkipReason) -> Self {
        let (mean, std) = mean_std(rewards);
        GroupStats { rewards: rewards.to_vec(), mean, std, advantages: None, skip_reason: Some(reason) }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

/// `A_i = (r_i - mean) / std` with the population std.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<GroupStats> {
    if rewards.len() < 2 {
        return Err(Error::ContractViolation(format!("group of {} rewards", rewards.len())));
    }
    let (mean, std) = mean_std(rewards);
    if std.is_nan() || std < std_floor || std == 0.0 {
        return Ok(GroupStats::skipped_with(rewards, SkipReason::ZeroStd));
    }
    let advantages = rewards.iter().map(|r| (r - mean) / std).collect();
    Ok(GroupStats { rewards: rewards.to_vec(), mean, std, advantages: Some(advantages), skip_reason: None })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    /// The raw ratio fell outside `[RATIO_MIN, RATIO_MAX]`.
    pub clamped: bool,
}

/// `exp(logp_new - logp_old)`, clamped to `[1e-8, 1e8]`.
pub fn prob_ratio(logp_new: f64, logp_old: f64) -> Result<Ratio> {
    if !logp_new.is_finite() || !logp_old.is_finite() {
        return Err(Error::Numeric(format!("log-probs {logp_new}, {logp_old}")));
    }
    let raw = math::exp(logp_new - logp_old);
    let value = raw.clamp(RATIO_MIN, RATIO_MAX);
    Ok(Ratio { value, clamped: value != raw })
}

/// `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    unclipped.min(clipped)
}

/// True when the clipped branch is strictly selected (zero surrogate gradient).
pub fn clip_active(ratio: f64, advantage: f64, eps: f64) -> bool {
    ratio.clamp(1.0 - eps, 1.0 + eps) * advantage < ratio * advantage
}

/// k3 estimator `x - ln x - 1` with `x = exp(logp_ref - logp_theta)`.
pub fn kl_k3(logp_ref: f64, logp_theta: f64) -> Result<f64> {
    if !logp_ref.is_finite() || !logp_theta.is_finite() {
        return Err(Error::Numeric(format!("log-probs {logp_ref}, {logp_theta}")));
    }
    let d = logp_ref - logp_theta;
    // x - 1 - ln x with ln x = d exactly.
    Ok((math::expm1(d) - d).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RolloutLogProbs {
    pub theta: f64,
    pub old: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectiveBreakdown {
    pub objective: f64,
    pub surrogate_mean: f64,
    pub kl_mean: f64,
    pub clipped: usize,
    pub clamped: usize,
}

impl ObjectiveBreakdown {
    pub fn loss(&self) -> f64 {
        -self.objective
    }
}

/// Objective of one non-skipped group. Terms are summed in rollout order.
pub fn grpo_objective(
    stats: &GroupStats,
    logps: &[RolloutLogProbs],
    cfg: &GrpoConfig,
) -> Result<ObjectiveBreakdown> {
    let adv = stats
        .advantages
        .as_ref()
        .filter(|_| !stats.skipped())
        .ok_or_else(|| Error::ContractViolation("objective of a skipped group".into()))?;
    if adv.len() != logps.len() || adv.is_empty() {
        return Err(Error::ContractViolation(format!(
            "{} advantages for {} rollouts",
            adv.len(),
            logps.len()
        )));
    }
    let mut out = ObjectiveBreakdown::default();
    let (mut surrogate, mut kl) = (0.0, 0.0);
    for (lp, &a) in logps.iter().zip(adv) {
        let r = prob_ratio(lp.theta, lp.old)?;
        out.clamped += usize::from(r.clamped);
        out.clipped += usize::from(clip_active(r.value, a, cfg.clip_eps));
        surrogate += clipped_term(r.value, a, cfg.clip_eps);
        kl += kl_k3(lp.reference, lp.theta)?;
    }
    let g = logps.len() as f64;
    out.surrogate_mean = surrogate / g;
    out.kl_mean = kl / g;
    out.objective = out.surrogate_mean - cfg.kl_beta * out.kl_mean;
    if !out.objective.is_finite() {
        return Err(Error::Numeric(format!("non-finite objective {}", out.objective)));
    }
    Ok(out)
}
