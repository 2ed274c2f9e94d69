//! Adversarial chest-organ segmentation with unsupervised domain adaptation,
//! plus the geometric cardiothoracic ratio (CTR) estimator built on the
//! predicted lung fields.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is pure
//! computation; file formats, the CLI and image IO live in the `cardioseg`
//! companion crate.
//!
//! Module map:
//!
//! - [`data`]: images, label masks, manifests, splits, resampling.
//! - [`phantom`]: synthetic chest phantoms with analytically known CTR.
//! - [`nn`]: tensors, layers with hand-written backward passes, Adam.
//! - [`model`]: the stride-16 segmentor and the mask discriminator.
//! - [`loss`]: segmentation and adversarial objectives, with gradients.
//! - [`train`]: the alternating adversarial schedule in four modes.
//! - [`ctr`]: contours, convex-hull landmarks, diameters, CTR.
//! - [`metrics`]: CTR error statistics, IoU, cardiomegaly confusion metrics.
//! - [`eval`]: prediction, CTR estimation and metrics in one pass.
#![no_std]

extern crate alloc;

pub mod ctr;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod train;

pub use error::{Error, Result};
