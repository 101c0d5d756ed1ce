//! Disease-coordinate grading of volumetric brain images for multi-class
//! dementia diagnosis.
//!
//! A volume is downscaled, cut into an overlapping grid of patches, and each
//! patch is graded by its own small encoder-decoder network into a
//! two-channel disease-coordinate field. The fields are averaged back into a
//! whole-volume map, aggregated per brain structure, and classified by an
//! MLP. A kernel SVM on structure volumes provides a second opinion, and the
//! two are blended with a calibrated coefficient.

pub mod classifiers;
pub mod dc_space;
pub mod error;
pub mod eval;
pub mod features;
pub mod grader_net;
pub mod patch_grid;
pub mod seed;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
