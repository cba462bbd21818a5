//! Self-supervised contrastive triplets and augmented GRPO, closed by a toy
//! policy with exact log-probabilities.
//!
//! The crate is `no_std` (with `alloc`). Everything here is a pure function of
//! its inputs and an explicit seeded random stream; file formats, PNG codecs
//! and the command line live in the `augrpo` companion crate.
//!
//! Pipeline, bottom-up:
//!
//! * [`image`] / [`augment`]: RGB rasters, SSIM, pixel-difference ratio,
//!   bilinear resize and content-preserving augmentations.
//! * [`sources`]: similar-but-different image pairs from video frames, edit
//!   pairs and a procedural shape synthesizer.
//! * [`triplet`]: `{T1(Ia), T2(Ia), T3(Ib)}` triplets, two-image pairs, and
//!   weak/strong augmented views.
//! * [`prompt`]: question templates, forward/reverse phrasing and answer-type
//!   balancing.
//! * [`reward`]: tag-format and all-pairs accuracy rewards.
//! * [`grpo`]: group advantages, clipped surrogate, k3 KL and the objective.
//! * [`policy`]: logistic same/different policy with closed-form gradients.
//! * [`dataset`] / [`train`]: dataset assembly, the training loop, evaluation
//!   and ablation grids.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod augment;
pub mod dataset;
pub mod error;
pub mod grpo;
pub mod image;
pub mod math;
pub mod policy;
pub mod prompt;
pub mod reward;
pub mod rng;
pub mod sources;
pub mod train;
pub mod triplet;

pub use error::{Error, Result};
pub use image::Image;
