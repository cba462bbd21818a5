//! The augmented GRPO loop over the toy policy.
//!
//! Each step, for every sample of the batch: render two augmented views,
//! sample `G` rollouts from the old snapshot on the rollout view, score
//! them, skip groups whose answers are all right or all wrong, and
//! accumulate the objective gradient with every log-probability taken on
//! the optimisation view. The batch gradient is the mean over non-skipped
//! groups; after the update the old snapshot is set to the new parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::dataset::{Dataset, TrainingSample};
use crate::grpo::{self, GrpoConfig, SkipReason};
use crate::math;
use crate::policy::{self, PolicyParams, PromptFeatures, Snapshots, FEATURE_DIM};
use crate::reward;
use crate::rng::{self, Purpose};
use crate::triplet::{render_view, AugPolicy, SampleKind, ViewKind};
use crate::{Error, Result};

/// Which view feeds rollouts and which feeds optimisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugCombo {
    pub rollout: ViewKind,
    pub optimize: ViewKind,
}

impl AugCombo {
    pub const WEAK_STRONG: AugCombo = AugCombo { rollout: ViewKind::Weak, optimize: ViewKind::Strong };
    pub const WEAK_WEAK: AugCombo = AugCombo { rollout: ViewKind::Weak, optimize: ViewKind::Weak };
    pub const STRONG_STRONG: AugCombo = AugCombo { rollout: ViewKind::Strong, optimize: ViewKind::Strong };
    pub const ALL: [AugCombo; 3] = [Self::WEAK_WEAK, Self::WEAK_STRONG, Self::STRONG_STRONG];
}

impl core::fmt::Display for AugCombo {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{},{}", self.rollout.as_str(), self.optimize.as_str())
    }
}

impl core::str::FromStr for AugCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| Error::InvalidConfig(format!("augmentation combo {s:?} is not 'rollout,optimize'")))?;
        Ok(AugCombo { rollout: a.trim().parse()?, optimize: b.trim().parse()? })
    }
}

/// Which sample kinds are trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Formulation {
    Pairs,
    Triplets,
    Both,
}

impl Formulation {
    pub const ALL: [Formulation; 3] = [Formulation::Pairs, Formulation::Triplets, Formulation::Both];

    pub fn admits(self, kind: SampleKind) -> bool {
        match self {
            Formulation::Pairs => kind == SampleKind::Pair,
            Formulation::Triplets => kind == SampleKind::Triplet,
            Formulation::Both => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Formulation::Pairs => "pairs",
            Formulation::Triplets => "triplets",
            Formulation::Both => "both",
        }
    }
}

impl core::str::FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairs" => Ok(Formulation::Pairs),
            "triplets" => Ok(Formulation::Triplets),
            "both" => Ok(Formulation::Both),
            _ => Err(Error::InvalidConfig(format!("unknown formulation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub grpo: GrpoConfig,
    pub aug: AugPolicy,
    pub combo: AugCombo,
    pub formulation: Formulation,
    /// Ascent step size. Large-model runs use values near 1e-6 with an
    /// adaptive optimiser; the toy's plain ascent needs a much larger one.
    pub lr: f64,
    pub batch_size: usize,
    /// Rescale the batch gradient to at most this L2 norm before the update.
    pub max_grad_norm: Option<f64>,
    /// Evaluate every this many steps; 0 evaluates only at start and end.
    pub eval_every: usize,
    pub eval_view: ViewKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 600,
            grpo: GrpoConfig::default(),
            aug: AugPolicy::default(),
            combo: AugCombo::WEAK_STRONG,
            formulation: Formulation::Both,
            lr: 0.05,
            batch_size: 16,
            max_grad_norm: Some(1.0),
            eval_every: 0,
            eval_view: ViewKind::Strong,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.grpo.validate()?;
        self.aug.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size 0".into()));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidConfig(format!("max grad norm {c}")));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub accuracy_rate: f64,
    pub format_rate: f64,
    pub skip_rate: f64,
    pub skipped_all_correct: usize,
    pub skipped_all_wrong: usize,
    pub skipped_zero_std: usize,
    pub groups: usize,
    pub mean_kl: f64,
    pub surrogate: f64,
    /// Norm of the batch gradient before any rescaling.
    pub grad_norm: f64,
    pub grad_rescaled: bool,
    pub clip_fraction: f64,
    pub clamped: usize,
    pub updated: bool,
    pub params_version: u64,
    pub params_hash: u64,
}

/// One scored rollout, as logged for offline re-scoring.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RolloutRecord {
    pub step: usize,
    pub sample_id: String,
    pub expected: crate::triplet::Answer,
    pub text: String,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalResult {
    pub view: Option<ViewKind>,
    pub n: usize,
    pub exact_match: f64,
    pub triplet_exact: Option<f64>,
    pub pair_exact: Option<f64>,
    /// `(correct, total)` keyed by expected answer.
    pub per_class: BTreeMap<String, (usize, usize)>,
}

struct EvalItem {
    kind: SampleKind,
    features: PromptFeatures,
    expected: crate::triplet::Answer,
}

/// Held-out prompts with their views rendered and featurized once.
pub struct EvalSet {
    view: ViewKind,
    seed: u64,
    items: Vec<EvalItem>,
}

impl EvalSet {
    pub fn prepare(data: &Dataset, aug: &AugPolicy, view: ViewKind, seed: u64) -> Result<EvalSet> {
        if data.is_empty() {
            return Err(Error::EmptySource);
        }
        let items = data
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut r = rng::stream(seed, Purpose::Eval, &[i as u64, view as u64]);
                let v = render_view(&s.sample, aug.spec(view), &mut r);
                let features = PromptFeatures::from_images(&v.images, &s.assignment.comparison_order, s.assignment.direction)?;
                Ok(EvalItem { kind: s.kind(), features, expected: s.expected_answer()? })
            })
            .collect::<Result<_>>()?;
        Ok(EvalSet { view, seed, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Greedy exact-match accuracy; exact ties break on a per-item seeded coin.
pub fn evaluate(params: &PolicyParams, set: &EvalSet) -> EvalResult {
    let mut per_class: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut by_kind = [(0usize, 0usize); 2];
    for (i, item) in set.items.iter().enumerate() {
        let mut coin = rng::stream(set.seed, Purpose::Eval, &[i as u64, set.view as u64, u64::MAX]);
        let hit = policy::greedy_letters(params, &item.features, &mut coin) == item.expected;
        let e = per_class.entry(item.expected.to_string()).or_default();
        e.0 += usize::from(hit);
        e.1 += 1;
        let k = &mut by_kind[usize::from(item.kind == SampleKind::Pair)];
        k.0 += usize::from(hit);
        k.1 += 1;
    }
    let rate = |(c, t): (usize, usize)| (t > 0).then(|| c as f64 / t as f64);
    let n = set.items.len();
    EvalResult {
        view: Some(set.view),
        n,
        exact_match: (by_kind[0].0 + by_kind[1].0) as f64 / n.max(1) as f64,
        triplet_exact: rate(by_kind[0]),
        pair_exact: rate(by_kind[1]),
        per_class,
    }
}

/// Training state: current, old and reference parameters plus the epoch
/// schedule.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    active: Vec<usize>,
    theta: PolicyParams,
    old: PolicyParams,
    reference: PolicyParams,
    step: usize,
    keep_rollouts: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub metrics: StepMetrics,
    pub rollouts: Vec<RolloutRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a Dataset, init: PolicyParams) -> Result<Self> {
        cfg.validate()?;
        let active: Vec<usize> = (0..data.len()).filter(|&i| cfg.formulation.admits(data.samples[i].kind())).collect();
        if active.is_empty() {
            return Err(Error::EmptySource);
        }
        Ok(Trainer { cfg, data, active, theta: init, old: init, reference: init, step: 0, keep_rollouts: false })
    }

    /// Keep per-rollout records in [`StepOutcome::rollouts`].
    pub fn keep_rollouts(mut self, keep: bool) -> Self {
        self.keep_rollouts = keep;
        self
    }

    pub fn params(&self) -> &PolicyParams {
        &self.theta
    }

    pub fn old_params(&self) -> &PolicyParams {
        &self.old
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Dataset indices visited by step `step`: consecutive slices of a
    /// per-epoch shuffle of the admitted samples.
    pub fn batch_indices(&self, step: usize) -> Vec<usize> {
        let n = self.active.len();
        let b = self.cfg.batch_size;
        let mut out = Vec::with_capacity(b);
        let mut epoch_cache: Option<(usize, Vec<usize>)> = None;
        for k in 0..b {
            let pos = step * b + k;
            let epoch = pos / n;
            if epoch_cache.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm = self.active.clone();
                perm.shuffle(&mut rng::stream(self.cfg.seed, Purpose::Order, &[epoch as u64]));
                epoch_cache = Some((epoch, perm));
            }
            out.push(epoch_cache.as_ref().expect("filled above").1[pos % n]);
        }
        out
    }

    /// One optimisation step. On error the parameters are left untouched.
    pub fn step(&mut self) -> Result<StepOutcome> {
        debug_assert_eq!(self.theta, self.old);
        let step = self.step;
        let cfg = &self.cfg;
        let g = cfg.grpo.group_size;
        let mut grad = [0.0; FEATURE_DIM];
        let mut m = StepMetrics { step, ..StepMetrics::default() };
        let (mut reward_sum, mut acc_sum, mut fmt_sum, mut n_rollouts) = (0.0, 0usize, 0usize, 0usize);
        let (mut kl_sum, mut sur_sum, mut clipped, mut used) = (0.0, 0.0, 0usize, 0usize);
        let mut rollouts = Vec::new();

        for (slot, idx) in self.batch_indices(step).into_iter().enumerate() {
            let s: &TrainingSample = &self.data.samples[idx];
            let mut aug_rng = rng::stream(cfg.seed, Purpose::Augment, &[step as u64, slot as u64]);
            let rollout_view = render_view(&s.sample, cfg.aug.spec(cfg.combo.rollout), &mut aug_rng);
            let optimize_view = render_view(&s.sample, cfg.aug.spec(cfg.combo.optimize), &mut aug_rng);
            let order = &s.assignment.comparison_order;
            let q_roll = PromptFeatures::from_images(&rollout_view.images, order, s.assignment.direction)?;
            let q_opt = PromptFeatures::from_images(&optimize_view.images, order, s.assignment.direction)?;
            let expected = s.expected_answer()?;

            let mut letters = Vec::with_capacity(g);
            let mut rewards = Vec::with_capacity(g);
            let mut accuracy = Vec::with_capacity(g);
            for i in 0..g {
                let mut r = rng::stream(cfg.seed, Purpose::Rollout, &[step as u64, slot as u64, i as u64]);
                let ro = policy::sample_with_features(&self.old, &q_roll, &mut r);
                let sc = reward::score(&ro.rendered_text, &expected, &cfg.grpo.weights);
                reward_sum += sc.total;
                acc_sum += usize::from(sc.accuracy);
                fmt_sum += usize::from(sc.format);
                n_rollouts += 1;
                if self.keep_rollouts {
                    rollouts.push(RolloutRecord {
                        step,
                        sample_id: s.id.clone(),
                        expected: expected.clone(),
                        text: ro.rendered_text.clone(),
                        reward: sc.total,
                    });
                }
                rewards.push(sc.total);
                accuracy.push(sc.accuracy == 1);
                letters.push(ro.letters);
            }

            m.groups += 1;
            let stats = match grpo::should_skip(&accuracy) {
                Some(reason) => grpo::GroupStats::skipped_with(&rewards, reason),
                None => grpo::group_advantages(&rewards, cfg.grpo.std_floor)?,
            };
            match stats.skip_reason {
                Some(SkipReason::AllCorrect) => m.skipped_all_correct += 1,
                Some(SkipReason::AllWrong) => m.skipped_all_wrong += 1,
                Some(SkipReason::ZeroStd) => m.skipped_zero_std += 1,
                None => {}
            }
            if stats.skipped() {
                continue;
            }
            let snaps = Snapshots { theta: &self.theta, old: &self.old, reference: &self.reference };
            let obj = policy::group_objective(snaps, &stats, &q_opt, &letters, &cfg.grpo)?;
            let gg = policy::grad_objective(snaps, &stats, &q_opt, &letters, &cfg.grpo)?;
            for (a, b) in grad.iter_mut().zip(gg) {
                *a += b;
            }
            kl_sum += obj.kl_mean;
            sur_sum += obj.surrogate_mean;
            clipped += obj.clipped;
            m.clamped += obj.clamped;
            used += 1;
        }

        m.mean_reward = reward_sum / n_rollouts as f64;
        m.accuracy_rate = acc_sum as f64 / n_rollouts as f64;
        m.format_rate = fmt_sum as f64 / n_rollouts as f64;
        m.skip_rate = (m.groups - used) as f64 / m.groups as f64;
        if used > 0 {
            for v in &mut grad {
                *v /= used as f64;
            }
            m.mean_kl = kl_sum / used as f64;
            m.surrogate = sur_sum / used as f64;
            m.clip_fraction = clipped as f64 / (used * g) as f64;
            m.grad_norm = math::sqrt(grad.iter().map(|v| v * v).sum());
            if let Some(c) = cfg.max_grad_norm {
                if m.grad_norm > c {
                    let k = c / m.grad_norm;
                    grad.iter_mut().for_each(|v| *v *= k);
                    m.grad_rescaled = true;
                }
            }
            let next = policy::sgd_step(&self.theta, &grad, cfg.lr)?;
            self.theta = next;
            m.updated = true;
        }
        self.old = self.theta;
        self.step += 1;
        m.params_version = self.theta.version;
        m.params_hash = self.theta.fingerprint();
        Ok(StepOutcome { metrics: m, rollouts })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalPoint {
    pub step: usize,
    pub result: EvalResult,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub config: TrainConfig,
    pub seed: u64,
    pub metrics: Vec<StepMetrics>,
    pub evals: Vec<EvalPoint>,
    pub final_eval: EvalResult,
    pub final_params: PolicyParams,
    /// Filled in by callers that have a clock.
    pub wall_time_s: Option<f64>,
}

/// Events streamed out of [`run_training`] as they happen.
#[derive(Debug, Clone, Copy)]
pub enum Event<'r> {
    Step(&'r StepMetrics, &'r PolicyParams),
    Eval(&'r EvalPoint),
}

/// Trains from `init` for `cfg.steps` steps, evaluating on `eval`.
///
/// `observe` sees every step and evaluation as it happens, so a run that
/// aborts with [`Error::Numeric`] has already reported its last good step.
pub fn run_training(
    cfg: &TrainConfig,
    train: &Dataset,
    eval: &Dataset,
    init: PolicyParams,
    mut observe: impl FnMut(Event<'_>),
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(cfg.clone(), train, init)?;
    let eval_set = EvalSet::prepare(eval, &cfg.aug, cfg.eval_view, cfg.seed)?;
    let mut evals = Vec::new();
    let mut eval_at = |step: usize, params: &PolicyParams, observe: &mut dyn FnMut(Event<'_>)| {
        let p = EvalPoint { step, result: evaluate(params, &eval_set) };
        observe(Event::Eval(&p));
        evals.push(p);
    };
    eval_at(0, trainer.params(), &mut observe);
    let mut metrics = Vec::with_capacity(cfg.steps);
    for s in 1..=cfg.steps {
        let out = trainer.step()?;
        observe(Event::Step(&out.metrics, trainer.params()));
        metrics.push(out.metrics);
        if (cfg.eval_every > 0 && s % cfg.eval_every == 0) || s == cfg.steps {
            eval_at(s, trainer.params(), &mut observe);
        }
    }
    let final_eval = evals.last().expect("initial eval recorded").result.clone();
    Ok(TrainReport {
        config: cfg.clone(),
        seed: cfg.seed,
        metrics,
        evals,
        final_eval,
        final_params: *trainer.params(),
        wall_time_s: None,
    })
}

/// One row of an ablation grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationRow {
    pub combo: AugCombo,
    pub formulation: Formulation,
    pub seed: u64,
    pub eval: EvalResult,
}

/// Runs `run_training` for every (combo, formulation, seed) cell; other
/// settings come from `base`.
pub fn ablation_grid(
    base: &TrainConfig,
    train: &Dataset,
    eval: &Dataset,
    combos: &[AugCombo],
    formulations: &[Formulation],
    seeds: &[u64],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    if combos.is_empty() || formulations.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("empty ablation axis".into()));
    }
    let mut rows = Vec::new();
    for &combo in combos {
        for &formulation in formulations {
            for &seed in seeds {
                let cfg = TrainConfig { combo, formulation, seed, ..base.clone() };
                let report = run_training(&cfg, train, eval, PolicyParams::default(), |_| {})?;
                let row = AblationRow { combo, formulation, seed, eval: report.final_eval };
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Mean eval exact-match per (combo, formulation) cell.
pub fn summarize_ablation(rows: &[AblationRow]) -> BTreeMap<(AugCombo, Formulation), f64> {
    let mut acc: BTreeMap<(AugCombo, Formulation), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.combo, r.formulation)).or_default();
        e.0 += r.eval.triplet_exact.unwrap_or(r.eval.exact_match);
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}
