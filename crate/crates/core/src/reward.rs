//! Rule-based response scoring: a binary tag-format reward and a binary
//! all-comparisons-correct accuracy reward.

use alloc::string::String;

use crate::triplet::Answer;
use crate::{Error, Result};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardWeights {
    pub format: f64,
    pub accuracy: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { format: 1.0, accuracy: 1.0 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if self.format >= 0.0 && self.accuracy >= 0.0 && self.format.is_finite() && self.accuracy.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("reward weights {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardBreakdown {
    pub format: u8,
    pub accuracy: u8,
    pub total: f64,
    pub parsed_answer: Option<Answer>,
}

/// 1 iff the trimmed text is exactly one think block, optional whitespace,
/// then exactly one answer block ending the text.
pub fn format_reward(text: &str) -> u8 {
    let t = text.trim();
    for tag in [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE] {
        if t.matches(tag).count() != 1 {
            return 0;
        }
    }
    let Some(after_open) = t.strip_prefix(THINK_OPEN) else {
        return 0;
    };
    let Some(close) = after_open.find(THINK_CLOSE) else {
        return 0;
    };
    let rest = after_open[close + THINK_CLOSE.len()..].trim_start();
    let Some(body) = rest.strip_prefix(ANSWER_OPEN) else {
        return 0;
    };
    match body.find(ANSWER_CLOSE) {
        Some(end) if end + ANSWER_CLOSE.len() == body.len() => 1,
        _ => 0,
    }
}

/// Inner text of the first answer block, whitespace-stripped and uppercased,
/// if it is exactly `expected_len` letters from `{T, F}`.
pub fn parse_answer(text: &str, expected_len: usize) -> Option<Answer> {
    let start = text.find(ANSWER_OPEN)? + ANSWER_OPEN.len();
    let len = text[start..].find(ANSWER_CLOSE)?;
    let inner: String = text[start..start + len].trim().to_uppercase();
    if inner.chars().count() != expected_len {
        return None;
    }
    inner.parse().ok()
}

pub fn accuracy_reward(parsed: Option<&Answer>, expected: &Answer) -> u8 {
    u8::from(parsed == Some(expected))
}

pub fn total_reward(format: u8, accuracy: u8, weights: &RewardWeights) -> f64 {
    weights.format * format as f64 + weights.accuracy * accuracy as f64
}

pub fn score(text: &str, expected: &Answer, weights: &RewardWeights) -> RewardBreakdown {
    let format = format_reward(text);
    let parsed_answer = parse_answer(text, expected.len());
    let accuracy = accuracy_reward(parsed_answer.as_ref(), expected);
    RewardBreakdown { format, accuracy, total: total_reward(format, accuracy, weights), parsed_answer }
}
