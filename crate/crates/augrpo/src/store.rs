//! Dataset directories.
//!
//! ```text
//! DIR/meta.json         templates, seed, augmentation policy
//! DIR/dataset.jsonl     one record per sample
//! DIR/prompts.jsonl     one record per sample and view
//! DIR/images/*.png      raw slot images
//! DIR/views/*.png       one weak and one strong rendering per slot
//! ```
//!
//! Training re-augments from the raw slots every step; the saved views are
//! the fixed renderings used for evaluation.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use augrpo_core::dataset::{Dataset, Split, TrainingSample};
use augrpo_core::prompt::{Direction, PromptAssignment, PromptInstance, TemplateBank};
use augrpo_core::rng::{self, Purpose};
use augrpo_core::triplet::{
    render_view, triplet_gt, Answer, AugPolicy, Comparison, ContrastTriplet, PairSample, Sample, SampleKind, ViewKind,
};
use augrpo_core::Image;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::{jsonl, png};

pub const META_FILE: &str = "meta.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const PROMPTS_FILE: &str = "prompts.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub templates: usize,
    pub seed: u64,
    pub aug_policy: AugPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPaths {
    pub weak: Vec<String>,
    pub strong: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub split: Split,
    pub kind: SampleKind,
    pub slots: Vec<String>,
    pub views: ViewPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub odd_slot: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub same: Option<bool>,
    pub gt_letters: Answer,
    pub source: String,
    pub template_id: usize,
    pub direction: Direction,
    pub comparison_order: Vec<Comparison>,
    pub aug_policy: AugPolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub split: Split,
    #[serde(flatten)]
    pub prompt: PromptInstance,
}

fn view_seed_index(samples: &[TrainingSample], i: usize) -> u64 {
    let split = samples[i].split;
    samples[..i].iter().filter(|s| s.split == split).count() as u64
}

/// Writes `data` (both splits) under `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset, meta: &Meta) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(META_FILE), serde_json::to_string_pretty(meta)?)?;
    let mut records = Vec::with_capacity(data.len());
    let mut prompts = Vec::with_capacity(2 * data.len());
    for (i, s) in data.samples.iter().enumerate() {
        let mut slots: Vec<String> = Vec::new();
        for (k, img) in s.sample.slots().iter().enumerate() {
            // Slots holding the same image share one file.
            let earlier = s.sample.slots()[..k].iter().position(|o| Arc::ptr_eq(o, img));
            let rel = match earlier {
                Some(j) => slots[j].clone(),
                None => {
                    let rel = format!("images/{}_s{}.png", s.id, k + 1);
                    png::write_png(&dir.join(&rel), img)?;
                    rel
                }
            };
            slots.push(rel);
        }
        let idx = view_seed_index(&data.samples, i);
        let mut views = ViewPaths { weak: Vec::new(), strong: Vec::new() };
        for view in [ViewKind::Weak, ViewKind::Strong] {
            let mut r = rng::stream(meta.seed, Purpose::Eval, &[idx, view as u64]);
            let v = render_view(&s.sample, meta.aug_policy.spec(view), &mut r);
            let paths = match view {
                ViewKind::Weak => &mut views.weak,
                ViewKind::Strong => &mut views.strong,
            };
            for (k, img) in v.images.iter().enumerate() {
                let rel = format!("views/{}_{}_s{}.png", s.id, view.as_str(), k + 1);
                png::write_png(&dir.join(&rel), img)?;
                paths.push(rel);
            }
            prompts.push(PromptRecord { split: s.split, prompt: s.prompt(&data.bank, view)? });
        }
        let (odd_slot, same, source) = match &s.sample {
            Sample::Triplet(t) => (Some(t.odd_slot), None, t.source_pair_id.clone()),
            Sample::Pair(p) => (None, Some(p.same), p.source_ids.clone()),
        };
        records.push(SampleRecord {
            sample_id: s.id.clone(),
            split: s.split,
            kind: s.kind(),
            slots,
            views,
            odd_slot,
            same,
            gt_letters: s.sample.gt().clone(),
            source,
            template_id: s.assignment.template_id,
            direction: s.assignment.direction,
            comparison_order: s.assignment.comparison_order.clone(),
            aug_policy: meta.aug_policy,
            seed: meta.seed,
        });
    }
    jsonl::write_all(&dir.join(DATASET_FILE), &records)?;
    jsonl::write_all(&dir.join(PROMPTS_FILE), &prompts)
}

pub fn read_meta(dir: &Path) -> CliResult<Meta> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::at(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::at(&path, e))
}

/// Reads a dataset directory back into memory, re-checking every label.
pub fn load_dataset(dir: &Path) -> CliResult<(Dataset, Meta)> {
    let meta = read_meta(dir)?;
    let bank = TemplateBank::with_size(meta.templates)?;
    let records: Vec<SampleRecord> = jsonl::read_all(&dir.join(DATASET_FILE))?;
    let mut cache: HashMap<String, Arc<Image>> = HashMap::new();
    let mut samples = Vec::with_capacity(records.len());
    for r in records {
        let bad = |what: String| CliError::Data(format!("{}: {what}", r.sample_id));
        let mut slots = Vec::with_capacity(r.slots.len());
        for p in &r.slots {
            let img = match cache.get(p) {
                Some(img) => img.clone(),
                None => {
                    let img = Arc::new(png::read_png(&dir.join(p))?);
                    cache.insert(p.clone(), img.clone());
                    img
                }
            };
            slots.push(img);
        }
        let sample = match (r.kind, r.odd_slot, r.same) {
            (SampleKind::Triplet, Some(odd), None) => {
                let slots: [Arc<Image>; 3] = slots.try_into().map_err(|_| bad("triplet needs 3 slots".into()))?;
                let gt = triplet_gt(odd)?;
                if gt != r.gt_letters {
                    return Err(bad(format!("letters {} disagree with odd slot {odd}", r.gt_letters)));
                }
                Sample::Triplet(ContrastTriplet { slots, odd_slot: odd, source_pair_id: r.source.clone(), gt })
            }
            (SampleKind::Pair, None, Some(same)) => {
                let slots: [Arc<Image>; 2] = slots.try_into().map_err(|_| bad("pair needs 2 slots".into()))?;
                let gt = Answer(vec![same]);
                if gt != r.gt_letters {
                    return Err(bad(format!("letters {} disagree with same={same}", r.gt_letters)));
                }
                Sample::Pair(PairSample { slots, same, source_ids: r.source.clone(), gt })
            }
            _ => return Err(bad("kind does not match odd_slot/same fields".into())),
        };
        let assignment = PromptAssignment {
            template_id: r.template_id,
            direction: r.direction,
            comparison_order: r.comparison_order,
        };
        let s = TrainingSample { id: r.sample_id, sample, assignment, split: r.split };
        s.prompt(&bank, ViewKind::Strong)?;
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(CliError::Data(format!("{}: no samples", dir.display())));
    }
    Ok((Dataset { samples, bank }, meta))
}
