//! Training and evaluation sets: triplets and two-image samples built from
//! mined or synthetic pairs, each with a fixed prompt assignment.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::prompt::{self, balance_stream, PromptAssignment, PromptInstance, TemplateBank};
use crate::rng::{self, Purpose};
use crate::sources::{synth_pair, ImagePair, MiningConfig, PairMeta, SynthParams};
use crate::triplet::{build_pair_sample, build_triplet, Answer, PairSource, Sample, SampleKind, ViewKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub id: String,
    pub sample: Sample,
    pub assignment: PromptAssignment,
    pub split: Split,
}

impl TrainingSample {
    pub fn kind(&self) -> SampleKind {
        self.sample.kind()
    }

    pub fn prompt(&self, bank: &TemplateBank, view: ViewKind) -> Result<PromptInstance> {
        prompt::render_prompt(bank, &self.id, self.sample.gt(), view, &self.assignment)
    }

    pub fn expected_answer(&self) -> Result<Answer> {
        prompt::expected_answer(self.sample.gt(), &self.assignment.comparison_order, self.assignment.direction)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TrainingSample>,
    pub bank: TemplateBank,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, kind: SampleKind) -> usize {
        self.samples.iter().filter(|s| s.kind() == kind).count()
    }

    pub fn split(&self, split: Split) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
            bank: self.bank.clone(),
        }
    }

    /// Expected-answer histogram per sample kind.
    pub fn class_counts(&self) -> Result<BTreeMap<(SampleKind, String), usize>> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry((s.kind(), s.expected_answer()?.to_string())).or_default() += 1;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BuildConfig {
    pub triplets: usize,
    /// Two-image samples; half same, half different (the odd one goes to "same").
    pub pairs: usize,
    pub templates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Built {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Shuffled list of `n` odd-slot positions with each of 1..=3 used
/// `n / 3` or `n / 3 + 1` times.
pub fn odd_slots<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    let mut v: Vec<u8> = (0..n).map(|i| (i % 3) as u8 + 1).collect();
    v.shuffle(rng);
    v
}

/// Builds triplets and two-image samples from `pairs`, cycling through a
/// shuffled copy of the pool, then balances prompt assignments.
pub fn build_dataset(pairs: &[ImagePair], cfg: &BuildConfig, split: Split) -> Result<Built> {
    if pairs.is_empty() {
        return Err(Error::EmptySource);
    }
    let bank = TemplateBank::with_size(cfg.templates)?;
    let mut rng = rng::stream(cfg.seed, Purpose::Build, &[split as u64]);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut next_pair = || {
        let p = &pairs[order[cursor % order.len()]];
        cursor += 1;
        p
    };
    let tag = match split {
        Split::Train => "",
        Split::Eval => "eval-",
    };

    let mut samples = Vec::with_capacity(cfg.triplets + cfg.pairs);
    for (i, odd) in odd_slots(cfg.triplets, &mut rng).into_iter().enumerate() {
        let t = build_triplet(next_pair(), odd)?;
        samples.push((format!("{tag}t{i:05}"), Sample::Triplet(t)));
    }
    for i in 0..cfg.pairs {
        let p = next_pair();
        let same = i % 2 == 0;
        let src = if same {
            let image = if rng.gen::<bool>() { &p.a } else { &p.b };
            PairSource::Single { image, id: &p.meta.id }
        } else {
            PairSource::Pair(p)
        };
        samples.push((format!("{tag}p{i:05}"), Sample::Pair(build_pair_sample(src, same, &mut rng)?)));
    }
    samples.shuffle(&mut rng);

    let keys: Vec<(SampleKind, Answer)> = samples.iter().map(|(_, s)| (s.kind(), s.gt().clone())).collect();
    let balanced = balance_stream(&keys, &bank, &mut rng)?;
    let samples = samples
        .into_iter()
        .zip(balanced.assignments)
        .map(|((id, sample), assignment)| TrainingSample { id, sample, assignment, split })
        .collect();
    Ok(Built { dataset: Dataset { samples, bank }, warnings: balanced.warnings })
}

/// `n` synthetic pairs with ids `synth:{k}`, each from its own stream.
pub fn synth_pool(params: &SynthParams, cfg: &MiningConfig, n: usize, seed: u64) -> Result<Vec<ImagePair>> {
    (0..n)
        .map(|k| {
            let mut rng = rng::stream(seed, Purpose::Synth, &[k as u64]);
            let mut p = synth_pair(params, cfg, &mut rng)?;
            p.meta = PairMeta { id: format!("synth:{k}"), timestamps_ms: None };
            Ok(p)
        })
        .collect()
}

/// Recipe for a self-contained synthetic train/eval split.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticSpec {
    pub synth: SynthParams,
    pub train_triplets: usize,
    pub train_pairs: usize,
    pub eval_triplets: usize,
    pub eval_pairs: usize,
    pub templates: usize,
}

impl SyntheticSpec {
    /// 512 triplets and 256 two-image samples of 128x128 scenes for
    /// training; 256 triplets and 64 two-image samples held out.
    pub fn standard() -> Self {
        SyntheticSpec {
            synth: SynthParams::default(),
            train_triplets: 512,
            train_pairs: 256,
            eval_triplets: 256,
            eval_pairs: 64,
            templates: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainEval {
    pub train: Dataset,
    pub eval: Dataset,
}

/// Train and eval sets from disjoint synthetic pools (the eval pool uses a
/// different seed stream).
pub fn synthetic_split(spec: &SyntheticSpec, seed: u64) -> Result<TrainEval> {
    let mining = MiningConfig::default();
    let pool_size = |t: usize, p: usize| t.max(p).max(1);
    let train_pool = synth_pool(&spec.synth, &mining, pool_size(spec.train_triplets, spec.train_pairs), rng::mix(&[seed, 0]))?;
    let eval_pool = synth_pool(&spec.synth, &mining, pool_size(spec.eval_triplets, spec.eval_pairs), rng::mix(&[seed, 1]))?;
    let build = |pool: &[ImagePair], triplets, pairs, split| {
        build_dataset(pool, &BuildConfig { triplets, pairs, templates: spec.templates, seed }, split)
    };
    let train = build(&train_pool, spec.train_triplets, spec.train_pairs, Split::Train)?.dataset;
    let eval = build(&eval_pool, spec.eval_triplets, spec.eval_pairs, Split::Eval)?.dataset;
    Ok(TrainEval { train, eval })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            synth: SynthParams { size: 32, ..SynthParams::default() },
            train_triplets: 30,
            train_pairs: 10,
            eval_triplets: 6,
            eval_pairs: 2,
            templates: 20,
        }
    }

    #[test]
    fn odd_slots_are_exact_thirds() {
        let v = odd_slots(600, &mut rng::stream(1, Purpose::Build, &[]));
        for s in 1..=3u8 {
            assert_eq!(v.iter().filter(|&&x| x == s).count(), 200);
        }
    }

    #[test]
    fn build_counts_kinds_and_ids() {
        let te = synthetic_split(&small_spec(), 3).unwrap();
        assert_eq!(te.train.count(SampleKind::Triplet), 30);
        assert_eq!(te.train.count(SampleKind::Pair), 10);
        assert_eq!(te.eval.len(), 8);
        assert!(te.eval.samples.iter().all(|s| s.split == Split::Eval && s.id.starts_with("eval-")));
        let same = te
            .train
            .samples
            .iter()
            .filter(|s| matches!(&s.sample, Sample::Pair(p) if p.same))
            .count();
        assert_eq!(same, 5);
        for s in &te.train.samples {
            let prompt = s.prompt(&te.train.bank, ViewKind::Strong).unwrap();
            assert_eq!(prompt.expected_answer, s.expected_answer().unwrap());
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = synthetic_split(&small_spec(), 7).unwrap();
        let b = synthetic_split(&small_spec(), 7).unwrap();
        assert_eq!(a, b);
        let c = synthetic_split(&small_spec(), 8).unwrap();
        assert_ne!(a.train.samples[0].sample.slots()[0], c.train.samples[0].sample.slots()[0]);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let cfg = BuildConfig { triplets: 1, pairs: 0, templates: 20, seed: 0 };
        assert_eq!(build_dataset(&[], &cfg, Split::Train).unwrap_err(), Error::EmptySource);
    }

    #[test]
    fn small_builds_warn_about_balance() {
        let pool = synth_pool(&small_spec().synth, &MiningConfig::default(), 2, 0).unwrap();
        let cfg = BuildConfig { triplets: 5, pairs: 0, templates: 20, seed: 0 };
        let built = build_dataset(&pool, &cfg, Split::Train).unwrap();
        assert_eq!(built.warnings.len(), 1);
    }
}
