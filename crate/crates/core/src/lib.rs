//! Coarse-to-fine unsupervised domain adaptation for semantic segmentation
//! at desk scale.
//!
//! The crate is organized around the stages of the adaptation pipeline:
//!
//! - [`imgproc`] — Lab color conversion, channel histograms, histogram
//!   matching on the a/b channels, a regularized gamma solve on lightness,
//!   and the composed photometric alignment operator plus color jitter.
//! - [`tensorcore`] — a minimal dense-tensor engine with analytic backward
//!   passes for the handful of kernels the toy segmentation model needs,
//!   and SGD with a polynomial learning-rate schedule.
//! - [`segmodel`] — the toy per-pixel segmentation network (three 3×3 conv
//!   blocks and a 1×1 classifier head) with checkpoint IO.
//! - [`regularizers`] — category centers, the category-oriented triplet
//!   loss, per-category pseudo-label thresholds, and the target-domain
//!   consistency loss.
//! - [`datagen`] — a deterministic synthetic two-domain segmentation
//!   benchmark with controllable photometric and palette shifts, plus
//!   PPM/PGM/manifest file IO.
//! - [`pipeline`] — the coarse-alignment training step, the iterative
//!   self-training steps, evaluation, and the ablation harness.
//!
//! All randomized operations take explicit seeds and are bit-reproducible;
//! with the `parallel` feature enabled the data-parallel inner loops run on
//! rayon, producing byte-identical results at any thread count.

pub mod common;
pub mod datagen;
mod error;
pub mod gradcheck;
pub mod imgproc;
pub mod par;
pub mod pipeline;
pub mod regularizers;
pub mod rng;
pub mod segmodel;
pub mod tensorcore;

pub use error::{Error, Result};
