//! Domain rendering: palette colors plus profile-specific photometric shifts.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::common::LabelMap;
use crate::imgproc::{lab_to_rgb, LabImage, RgbImage};
use crate::rng::{stream, stream_rng};

/// Base Lab color and Gaussian spread of one category.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub base_lab: [f64; 3],
    pub spread: f64,
}

/// Photometric profile of one domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainProfile {
    /// Lightness exponent applied after palette sampling; 1.0 is neutral.
    pub gamma_shift: f64,
    /// Additive (a, b) color cast in Lab units.
    pub color_cast: (f64, f64),
    /// Per-channel Gaussian pixel noise in Lab units.
    pub noise_sigma: f64,
    pub palette: Vec<PaletteEntry>,
}

impl DomainProfile {
    pub fn validate(&self) -> crate::Result<()> {
        if !(0.3..=3.0).contains(&self.gamma_shift) {
            return Err(crate::Error::Config(format!(
                "gamma_shift {} outside [0.3, 3]",
                self.gamma_shift
            )));
        }
        if self.noise_sigma < 0.0 || self.palette.iter().any(|p| p.spread < 0.0) {
            return Err(crate::Error::Config("spreads must be non-negative".into()));
        }
        Ok(())
    }

    /// Neutral profile over the default palette.
    pub fn identity(palette: Vec<PaletteEntry>) -> Self {
        Self {
            gamma_shift: 1.0,
            color_cast: (0.0, 0.0),
            noise_sigma: 0.0,
            palette,
        }
    }
}

/// Default five-category palette. Categories 1 and 4 sit close together in
/// Lab with overlapping spreads; they are the deliberately confusable pair.
pub fn default_palette() -> Vec<PaletteEntry> {
    vec![
        PaletteEntry {
            base_lab: [58.0, 0.0, 4.0],
            spread: 5.0,
        },
        PaletteEntry {
            base_lab: [46.0, 40.0, 24.0],
            spread: 6.0,
        },
        PaletteEntry {
            base_lab: [66.0, -36.0, 34.0],
            spread: 6.0,
        },
        PaletteEntry {
            base_lab: [40.0, 14.0, -44.0],
            spread: 6.0,
        },
        PaletteEntry {
            base_lab: [52.0, 33.0, 16.0],
            spread: 6.0,
        },
    ]
}

/// Render a layout under a domain profile.
///
/// Per pixel: palette base + Gaussian spread, then the a/b cast, then the
/// lightness exponent, then pixel noise, then conversion to sRGB.
/// Deterministic per seed.
pub fn render_domain(layout: &LabelMap, profile: &DomainProfile, seed: u64) -> RgbImage {
    let max_label = layout.data.iter().copied().max().unwrap_or(0) as usize;
    assert!(
        max_label < profile.palette.len(),
        "layout category {max_label} outside palette of {}",
        profile.palette.len()
    );
    let mut rng = stream_rng(seed, &[stream::DATAGEN_RENDER]);
    let unit = Normal::new(0.0, 1.0).expect("valid stddev");
    let n = layout.num_pixels();
    let mut l = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for &cat in &layout.data {
        let entry = &profile.palette[cat as usize];
        let mut lv = entry.base_lab[0] + entry.spread * unit.sample(&mut rng);
        let mut av = entry.base_lab[1] + entry.spread * unit.sample(&mut rng);
        let mut bv = entry.base_lab[2] + entry.spread * unit.sample(&mut rng);
        av += profile.color_cast.0;
        bv += profile.color_cast.1;
        lv = 100.0 * (lv / 100.0).clamp(0.0, 1.0).powf(profile.gamma_shift);
        lv += profile.noise_sigma * unit.sample(&mut rng);
        av += profile.noise_sigma * unit.sample(&mut rng);
        bv += profile.noise_sigma * unit.sample(&mut rng);
        l.push(lv);
        a.push(av);
        b.push(bv);
    }
    let lab = LabImage::new(layout.width, layout.height, l, a, b).expect("layout dims");
    lab_to_rgb(&lab)
}
