//! Image-level operators for photometric alignment.
//!
//! The alignment operator treats lightness and color differently: the a/b
//! chroma channels of a source image are remapped with classic histogram
//! matching against a reference image, while the L channel gets a single
//! power-law correction whose exponent is solved so the mean corrected
//! lightness matches the reference mean.

mod align;
mod color;
mod gamma;
mod histogram;
mod jitter;

pub use align::{photometric_align, photometric_align_detailed, AlignReport};
pub use color::{lab_to_rgb, rgb_to_lab, LabImage, RgbImage, AB_MAX, AB_MIN, L_MAX};
pub use gamma::{
    apply_gamma, gamma_objective, solve_gamma, GammaSolution, DEFAULT_BETA, GAMMA_MAX, GAMMA_MIN,
};
pub use histogram::{
    apply_lut, channel_histogram, histogram_match_map, ks_distance, ChannelHistogram, LookupTable,
    NUM_BINS,
};
pub use jitter::{color_jitter, JitterParams};
