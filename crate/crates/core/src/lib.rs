//! Fairness-aware synthetic tabular data generation.
//!
//! The crate implements a three-stage generation process for tabular data:
//!
//! 1. **Pretrain and diagnose** ([`gan`]): a semi-supervised three-player GAN
//!    (classifier, generator, discriminator) learns the joint of features and
//!    labels from partially labeled data, while the per-epoch log disparity of
//!    monitored sub-groups is recorded ([`representation`]).
//! 2. **Bias transform** ([`mine`]): the generator is fine-tuned with a
//!    mutual-information penalty between the generated record and its
//!    sensitive projection, on mini-batches drawn with disparity-based
//!    sampling probabilities.
//! 3. **Rejection sampling** ([`drs`]): generated samples are filtered with
//!    the frozen stage-1 discriminator to undo the sampling-induced shift.
//!
//! [`eval`] holds the utility, fairness, leakage and distributional metrics
//! and [`pipeline`] wires everything into a config-driven run.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod drs;
pub mod error;
pub mod eval;
pub mod gan;
pub mod mine;
pub mod nn;
pub mod pipeline;
pub mod representation;
pub mod rng;

pub use error::{Error, Result};
