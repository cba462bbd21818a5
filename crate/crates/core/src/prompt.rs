//! Question rendering and answer-type balancing.
//!
//! A prompt asks about an ordered list of slot comparisons, phrased either
//! forward ("are they the same?") or reverse ("are they different?"). The
//! expected answer is the ground truth reordered to the asked order and,
//! for reverse phrasing, complemented letter-wise.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::triplet::{Answer, Comparison, SampleKind, ViewKind, PAIR_CANONICAL, TRIPLET_CANONICAL};
use crate::{Error, Result};

/// Reasoning preamble prepended to every question.
pub const REASONING_PREAMBLE: &str = "First output the thinking process in <think> </think> and give the final answer in <answer> </answer> tags.";

const TRIPLET_INSTRUCTION: &str = "Answer the comparisons in the order asked. Only return T(True) or F(False) in <answer> </answer>, one letter per comparison, in the form <think> </think> <answer>XYZ</answer> where each of X, Y and Z is T or F.";
const PAIR_INSTRUCTION: &str = "Only return T(True) or F(False) in <answer> </answer>, in the form <think> </think> <answer>X</answer> where X is T or F.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Direction {
    /// "Are they the same?"
    Forward,
    /// "Are they different?"
    Reverse,
}

/// One phrasing. `{a}` is the first comparison, `{rest}` the remaining ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub ask_same: String,
    pub ask_different: String,
    pub follow_up: String,
}

const CURATED: [(&str, &str, &str); 20] = [
    ("Regardless of the augmentation, are {a} the same?", "Regardless of the augmentation, are {a} different?", "How about {rest}?"),
    ("Ignoring any cropping or resizing, do {a} show the same image?", "Ignoring any cropping or resizing, do {a} show different images?", "Answer the same question for {rest}."),
    ("Do {a} come from the same original picture?", "Do {a} come from different original pictures?", "Then consider {rest}."),
    ("Look carefully: are {a} identical apart from augmentation?", "Look carefully: do {a} differ in content beyond augmentation?", "Repeat the check for {rest}."),
    ("Setting aside crops and rescaling, is the content of {a} the same?", "Setting aside crops and rescaling, is the content of {a} different?", "Do the same for {rest}."),
    ("Compare {a}: are they the same image?", "Compare {a}: are they different images?", "Next compare {rest}."),
    ("Would you say {a} depict the same scene without any edits?", "Would you say {a} depict scenes that differ by some edit?", "Also judge {rest}."),
    ("Are {a} two views of one and the same image?", "Are {a} views of two different images?", "What about {rest}?"),
    ("Check whether {a} match once the augmentation is undone.", "Check whether {a} differ once the augmentation is undone.", "Check {rest} as well."),
    ("Treating cropping as irrelevant, are {a} the same picture?", "Treating cropping as irrelevant, are {a} different pictures?", "Continue with {rest}."),
    ("Is there no difference in content between {a}?", "Is there any difference in content between {a}?", "Ask the same about {rest}."),
    ("Despite the augmentation, do {a} contain exactly the same objects?", "Despite the augmentation, do {a} contain any object that differs?", "Likewise for {rest}."),
    ("Examine {a}. Are they the same?", "Examine {a}. Are they different?", "Then examine {rest}."),
    ("Are {a} unchanged copies of each other up to cropping and resizing?", "Has anything been changed between {a}, beyond cropping and resizing?", "Answer likewise for {rest}."),
    ("Focusing on fine details, are {a} the same?", "Focusing on fine details, are {a} different?", "Apply the same scrutiny to {rest}."),
    ("Given that the images were augmented, do {a} originate from one image?", "Given that the images were augmented, do {a} originate from distinct images?", "Decide the same for {rest}."),
    ("Tell me whether {a} are the same image.", "Tell me whether {a} are different images.", "Do this for {rest} too."),
    ("Are the contents of {a} consistent with each other?", "Are the contents of {a} inconsistent with each other?", "And what about {rest}?"),
    ("After accounting for augmentation, would {a} be judged identical?", "After accounting for augmentation, would {a} be judged different?", "Judge {rest} in the same way."),
    ("Between {a}, is everything the same?", "Between {a}, is something different?", "And between {rest}?"),
];

const EXTRA_PREFIXES: [&str; 6] = [
    "",
    "Take your time. ",
    "Think step by step. ",
    "Be precise. ",
    "Consider every region of the images. ",
    "Ignore augmentation artifacts. ",
];

const EXTRA_STEMS: [(&str, &str, &str); 5] = [
    ("Are {a} the same image?", "Are {a} different images?", "Also answer for {rest}."),
    ("Do {a} match?", "Do {a} fail to match?", "Then do the same for {rest}."),
    ("Is the pair {a} a same-image pair?", "Is the pair {a} a different-image pair?", "Also classify {rest}."),
    ("Same or not: are {a} the same?", "Different or not: are {a} different?", "Continue for {rest}."),
    ("Do {a} show identical content?", "Do {a} show differing content?", "Repeat for {rest}."),
];

/// Indexed set of phrasings; ids are positions and stable across builds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateBank {
    templates: Vec<Template>,
}

impl TemplateBank {
    /// The 20 curated phrasings.
    pub fn standard() -> Self {
        let templates = CURATED
            .iter()
            .map(|&(s, d, f)| Template { ask_same: s.into(), ask_different: d.into(), follow_up: f.into() })
            .collect();
        TemplateBank { templates }
    }

    /// The curated 20 followed by 30 prefixed variants.
    pub fn extended() -> Self {
        let mut bank = Self::standard();
        for prefix in EXTRA_PREFIXES {
            for (s, d, f) in EXTRA_STEMS {
                bank.templates.push(Template {
                    ask_same: format!("{prefix}{s}"),
                    ask_different: format!("{prefix}{d}"),
                    follow_up: f.into(),
                });
            }
        }
        bank
    }

    /// Bank by size: 20 or 50.
    pub fn with_size(n: usize) -> Result<Self> {
        match n {
            20 => Ok(Self::standard()),
            50 => Ok(Self::extended()),
            _ => Err(Error::InvalidConfig(format!("template bank size {n} (expected 20 or 50)"))),
        }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&Template> {
        self.templates.get(id).ok_or(Error::UnknownTemplate(id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PromptAssignment {
    pub template_id: usize,
    pub direction: Direction,
    pub comparison_order: Vec<Comparison>,
}

/// A rendered question for one view of one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PromptInstance {
    pub sample_id: String,
    pub view: ViewKind,
    pub template_id: usize,
    pub question_text: String,
    pub image_count: u8,
    pub comparison_order: Vec<Comparison>,
    pub direction: Direction,
    pub expected_answer: Answer,
}

fn canonical(kind: SampleKind) -> &'static [Comparison] {
    match kind {
        SampleKind::Triplet => &TRIPLET_CANONICAL,
        SampleKind::Pair => &PAIR_CANONICAL,
    }
}

/// Checks that `order` covers every canonical comparison of `kind` exactly
/// once (either orientation) and returns each entry's canonical index.
pub fn validate_order(kind: SampleKind, order: &[Comparison]) -> Result<Vec<usize>> {
    let canon = canonical(kind);
    if order.len() != canon.len() {
        return Err(Error::InvalidOrder(format!(
            "{} comparisons for a {kind:?} (expected {})",
            order.len(),
            canon.len()
        )));
    }
    let mut seen = [false; 3];
    let mut idx = Vec::with_capacity(order.len());
    for c in order {
        let n = c.normalized();
        let k = canon
            .iter()
            .position(|&x| x == n)
            .ok_or_else(|| Error::InvalidOrder(format!("comparison {c:?} not valid for a {kind:?}")))?;
        if seen[k] {
            return Err(Error::InvalidOrder(format!("comparison {c:?} repeated")));
        }
        seen[k] = true;
        idx.push(k);
    }
    Ok(idx)
}

/// Reorders canonical ground truth to `order`, complementing for reverse
/// phrasing. `gt` must be over the canonical order of its sample kind.
pub fn expected_answer(gt: &Answer, order: &[Comparison], direction: Direction) -> Result<Answer> {
    let kind = match gt.len() {
        3 => SampleKind::Triplet,
        1 => SampleKind::Pair,
        n => return Err(Error::InvalidSample(format!("ground truth of length {n}"))),
    };
    let idx = validate_order(kind, order)?;
    let flip = direction == Direction::Reverse;
    Ok(Answer(idx.into_iter().map(|k| gt.0[k] ^ flip).collect()))
}

fn name(c: Comparison) -> String {
    format!("image{} and image{}", c.0, c.1)
}

pub fn question_text(bank: &TemplateBank, template_id: usize, direction: Direction, order: &[Comparison]) -> Result<String> {
    let t = bank.get(template_id)?;
    let ask = match direction {
        Direction::Forward => &t.ask_same,
        Direction::Reverse => &t.ask_different,
    };
    let (first, rest) = order.split_first().ok_or_else(|| Error::InvalidOrder("empty".into()))?;
    let mut q = String::from(REASONING_PREAMBLE);
    q.push('\n');
    q.push_str(&ask.replace("{a}", &name(*first)));
    if !rest.is_empty() {
        let names: Vec<String> = rest.iter().map(|&c| name(c)).collect();
        q.push(' ');
        q.push_str(&t.follow_up.replace("{rest}", &names.join(", ")));
        q.push(' ');
        q.push_str(TRIPLET_INSTRUCTION);
    } else {
        q.push(' ');
        q.push_str(PAIR_INSTRUCTION);
    }
    Ok(q)
}

pub fn render_prompt(
    bank: &TemplateBank,
    sample_id: &str,
    gt: &Answer,
    view: ViewKind,
    assignment: &PromptAssignment,
) -> Result<PromptInstance> {
    let expected = expected_answer(gt, &assignment.comparison_order, assignment.direction)?;
    let text = question_text(bank, assignment.template_id, assignment.direction, &assignment.comparison_order)?;
    Ok(PromptInstance {
        sample_id: sample_id.into(),
        view,
        template_id: assignment.template_id,
        question_text: text,
        image_count: if gt.len() == 3 { 3 } else { 2 },
        comparison_order: assignment.comparison_order.clone(),
        direction: assignment.direction,
        expected_answer: expected,
    })
}

fn permutations(items: &[Comparison]) -> Vec<Vec<Comparison>> {
    if items.len() <= 1 {
        return alloc::vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Balanced {
    pub assignments: Vec<PromptAssignment>,
    pub warnings: Vec<String>,
}

/// Picks direction, comparison order and template for each sample so that
/// expected-answer classes come out uniform per sample kind.
///
/// Greedy: each sample takes the currently rarest class it can reach, ties
/// and the concrete (direction, order) realising it broken by `rng`.
pub fn balance_stream<R: Rng + ?Sized>(
    samples: &[(SampleKind, Answer)],
    bank: &TemplateBank,
    rng: &mut R,
) -> Result<Balanced> {
    if bank.is_empty() {
        return Err(Error::InvalidConfig("empty template bank".into()));
    }
    let mut counts: BTreeMap<(SampleKind, Answer), usize> = BTreeMap::new();
    let mut per_kind: BTreeMap<SampleKind, usize> = BTreeMap::new();
    let mut assignments = Vec::with_capacity(samples.len());
    for (kind, gt) in samples {
        *per_kind.entry(*kind).or_default() += 1;
        let mut options: Vec<(Direction, Vec<Comparison>, Answer)> = Vec::new();
        for dir in [Direction::Forward, Direction::Reverse] {
            for order in permutations(canonical(*kind)) {
                let e = expected_answer(gt, &order, dir)?;
                options.push((dir, order, e));
            }
        }
        let count = |a: &Answer| counts.get(&(*kind, a.clone())).copied().unwrap_or(0);
        let least = options.iter().map(|o| count(&o.2)).min().unwrap_or(0);
        let best: Vec<&(Direction, Vec<Comparison>, Answer)> =
            options.iter().filter(|o| count(&o.2) == least).collect();
        let (dir, order, e) = (*best.choose(rng).expect("at least one option")).clone();
        *counts.entry((*kind, e)).or_default() += 1;
        assignments.push(PromptAssignment {
            template_id: rng.gen_range(0..bank.len()),
            direction: dir,
            comparison_order: order,
        });
    }
    let mut warnings = Vec::new();
    for (kind, n) in per_kind {
        let classes = counts.keys().filter(|(k, _)| *k == kind).count().max(reachable_classes(kind));
        if n < 8 * classes {
            warnings.push(format!(
                "{n} {kind:?} samples is fewer than 8 per answer class ({classes} classes); balance is best-effort"
            ));
        }
    }
    Ok(Balanced { assignments, warnings })
}

/// Distinct expected answers reachable for a kind: one-hot triplet answers
/// and their complements, or T/F for pairs.
pub fn reachable_classes(kind: SampleKind) -> usize {
    match kind {
        SampleKind::Triplet => 6,
        SampleKind::Pair => 2,
    }
}
