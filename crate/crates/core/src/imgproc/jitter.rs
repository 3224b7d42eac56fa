//! Color jitter: the stochastic photometric augmentation.
//!
//! Brightness, contrast and saturation factors are drawn uniformly from
//! [1−r, 1+r] and the hue shift from [−r, +r] degrees, then applied in the
//! fixed order brightness → contrast → saturation → hue. Pixel positions
//! never move, so label maps stay valid.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::color::RgbImage;

/// Half-ranges of the jitter factors plus the draw seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue shift half-range in degrees.
    pub hue_degrees: f64,
    pub seed: u64,
}

impl JitterParams {
    pub fn disabled(seed: u64) -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue_degrees: 0.0,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) {
        assert!(
            self.brightness >= 0.0
                && self.contrast >= 0.0
                && self.saturation >= 0.0
                && self.hue_degrees >= 0.0,
            "jitter half-ranges must be non-negative"
        );
    }
}

impl Default for JitterParams {
    /// Common augmentation practice: 0.2 on brightness/contrast/saturation,
    /// 10 degrees of hue.
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue_degrees: 10.0,
            seed: 0,
        }
    }
}

fn luma(px: &[f64; 3]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Apply seeded color jitter. Deterministic: the four factors are drawn in a
/// fixed order from a ChaCha stream seeded by `params.seed`.
pub fn color_jitter(img: &RgbImage, params: &JitterParams) -> RgbImage {
    params.validate();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let draw = |rng: &mut ChaCha8Rng, r: f64| -> f64 {
        // Draw even when the half-range is zero so toggling one factor does
        // not shift the draws of the others.
        let u: f64 = rng.random();
        1.0 + r * (2.0 * u - 1.0)
    };
    let fb = draw(&mut rng, params.brightness);
    let fc = draw(&mut rng, params.contrast);
    let fs = draw(&mut rng, params.saturation);
    let hue_shift = {
        let u: f64 = rng.random();
        params.hue_degrees * (2.0 * u - 1.0)
    };

    let mut px: Vec<[f64; 3]> = img
        .data
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();

    // Brightness.
    for p in &mut px {
        for c in p.iter_mut() {
            *c = (*c * fb).clamp(0.0, 1.0);
        }
    }
    // Contrast: blend against the mean gray level of the whole image.
    let gray = px.iter().map(luma).sum::<f64>() / px.len() as f64;
    for p in &mut px {
        for c in p.iter_mut() {
            *c = (gray + fc * (*c - gray)).clamp(0.0, 1.0);
        }
    }
    // Saturation: blend against the per-pixel luma.
    for p in &mut px {
        let l = luma(p);
        for c in p.iter_mut() {
            *c = (l + fs * (*c - l)).clamp(0.0, 1.0);
        }
    }
    // Hue rotation in HSV.
    if hue_shift != 0.0 {
        for p in &mut px {
            let mut hsv = rgb_to_hsv(*p);
            hsv[0] += hue_shift;
            let rgb = hsv_to_rgb(hsv);
            *p = [
                rgb[0].clamp(0.0, 1.0),
                rgb[1].clamp(0.0, 1.0),
                rgb[2].clamp(0.0, 1.0),
            ];
        }
    }

    let data = px
        .iter()
        .flat_map(|p| p.iter().map(|&c| (c * 255.0).round() as u8))
        .collect();
    RgbImage {
        width: img.width,
        height: img.height,
        data,
    }
}
