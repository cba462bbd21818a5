//! Training samples built from mined pairs: three-image triplets with one
//! odd image, two-image same/different pairs, and their weak and strong
//! augmented views.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::augment::{apply_augment_traced, AugmentSpec};
use crate::image::{Image, Rect};
use crate::sources::ImagePair;
use crate::{Error, Result};

/// Answer letters, `true` for `T`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Answer(pub Vec<bool>);

impl Answer {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn complement(&self) -> Answer {
        Answer(self.0.iter().map(|b| !b).collect())
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "T" } else { "F" })?;
        }
        Ok(())
    }
}

impl FromStr for Answer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                'T' => Ok(true),
                'F' => Ok(false),
                _ => Err(Error::InvalidSample(alloc::format!("bad answer letter {c:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Answer)
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Answer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Answer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 1-based slot comparison `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Comparison(pub u8, pub u8);

impl Comparison {
    /// Same pair regardless of orientation.
    pub fn normalized(self) -> Comparison {
        if self.0 <= self.1 {
            self
        } else {
            Comparison(self.1, self.0)
        }
    }
}

/// Ground-truth order for triplet letters.
pub const TRIPLET_CANONICAL: [Comparison; 3] = [Comparison(1, 2), Comparison(2, 3), Comparison(1, 3)];
pub const PAIR_CANONICAL: [Comparison; 1] = [Comparison(1, 2)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SampleKind {
    Triplet,
    Pair,
}

/// `{T1(Ia), T2(Ia), T3(Ib)}` before augmentation, with `Ib` at `odd_slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastTriplet {
    pub slots: [Arc<Image>; 3],
    pub odd_slot: u8,
    pub source_pair_id: String,
    pub gt: Answer,
}

/// Letters over [`TRIPLET_CANONICAL`] for a triplet whose odd image sits in `odd_slot`.
pub fn triplet_gt(odd_slot: u8) -> Result<Answer> {
    if !(1..=3).contains(&odd_slot) {
        return Err(Error::InvalidSample(alloc::format!("odd slot {odd_slot}")));
    }
    Ok(Answer(
        TRIPLET_CANONICAL
            .iter()
            .map(|c| c.0 != odd_slot && c.1 != odd_slot)
            .collect(),
    ))
}

pub fn build_triplet(pair: &ImagePair, odd_slot: u8) -> Result<ContrastTriplet> {
    let gt = triplet_gt(odd_slot)?;
    let a = Arc::new(pair.a.clone());
    let b = Arc::new(pair.b.clone());
    let slots = core::array::from_fn(|i| if i + 1 == odd_slot as usize { b.clone() } else { a.clone() });
    Ok(ContrastTriplet { slots, odd_slot, source_pair_id: pair.meta.id.clone(), gt })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub slots: [Arc<Image>; 2],
    pub same: bool,
    pub source_ids: String,
    pub gt: Answer,
}

/// Source for a two-image sample: one image (same) or a mined pair (different).
#[derive(Debug, Clone, Copy)]
pub enum PairSource<'a> {
    Single { image: &'a Image, id: &'a str },
    Pair(&'a ImagePair),
}

/// Different-pairs put `Ib` first or second at random.
pub fn build_pair_sample<R: Rng + ?Sized>(
    source: PairSource<'_>,
    same: bool,
    rng: &mut R,
) -> Result<PairSample> {
    match (source, same) {
        (PairSource::Single { image, id }, true) => {
            let img = Arc::new(image.clone());
            Ok(PairSample {
                slots: [img.clone(), img],
                same,
                source_ids: id.into(),
                gt: Answer(alloc::vec![true]),
            })
        }
        (PairSource::Pair(p), false) => {
            let (a, b) = (Arc::new(p.a.clone()), Arc::new(p.b.clone()));
            let slots = if rng.gen::<bool>() { [b, a] } else { [a, b] };
            Ok(PairSample { slots, same, source_ids: p.meta.id.clone(), gt: Answer(alloc::vec![false]) })
        }
        (PairSource::Single { .. }, false) => {
            Err(Error::InvalidSample("a single image cannot form a different-pair".into()))
        }
        (PairSource::Pair(_), true) => {
            Err(Error::InvalidSample("same-pairs are built from a single source image".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Triplet(ContrastTriplet),
    Pair(PairSample),
}

impl Sample {
    pub fn kind(&self) -> SampleKind {
        match self {
            Sample::Triplet(_) => SampleKind::Triplet,
            Sample::Pair(_) => SampleKind::Pair,
        }
    }

    pub fn slots(&self) -> &[Arc<Image>] {
        match self {
            Sample::Triplet(t) => &t.slots,
            Sample::Pair(p) => &p.slots,
        }
    }

    pub fn gt(&self) -> &Answer {
        match self {
            Sample::Triplet(t) => &t.gt,
            Sample::Pair(p) => &p.gt,
        }
    }

    pub fn canonical_order(&self) -> &'static [Comparison] {
        match self {
            Sample::Triplet(_) => &TRIPLET_CANONICAL,
            Sample::Pair(_) => &PAIR_CANONICAL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ViewKind {
    Weak,
    Strong,
}

impl ViewKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::Weak => "weak",
            ViewKind::Strong => "strong",
        }
    }
}

impl FromStr for ViewKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(ViewKind::Weak),
            "strong" => Ok(ViewKind::Strong),
            _ => Err(Error::InvalidConfig(alloc::format!("unknown view {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugPolicy {
    pub weak: AugmentSpec,
    pub strong: AugmentSpec,
}

impl Default for AugPolicy {
    fn default() -> Self {
        AugPolicy {
            weak: AugmentSpec::crop_resize(0.9, 1.0),
            strong: AugmentSpec::crop_resize(0.5, 0.9),
        }
    }
}

impl AugPolicy {
    pub fn validate(&self) -> Result<()> {
        self.weak.validate()?;
        self.strong.validate()
    }

    pub fn spec(&self, view: ViewKind) -> &AugmentSpec {
        match view {
            ViewKind::Weak => &self.weak,
            ViewKind::Strong => &self.strong,
        }
    }
}

/// Augmented images of every slot, plus crop rectangles where applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub images: Vec<Image>,
    pub crops: Vec<Option<Rect>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Views {
    pub weak: View,
    pub strong: View,
}

/// Applies `spec` to every slot with independent draws.
pub fn render_view<R: Rng + ?Sized>(sample: &Sample, spec: &AugmentSpec, rng: &mut R) -> View {
    let (images, crops) = sample
        .slots()
        .iter()
        .map(|img| apply_augment_traced(img, spec, rng))
        .unzip();
    View { images, crops }
}

/// Weak then strong views; both draw fresh randomness from `rng`.
pub fn render_views<R: Rng + ?Sized>(sample: &Sample, policy: &AugPolicy, rng: &mut R) -> Views {
    let weak = render_view(sample, &policy.weak, rng);
    let strong = render_view(sample, &policy.strong, rng);
    Views { weak, strong }
}
