//! Channel histograms, inverse-CDF histogram matching, and LUT application.

use crate::{Error, Result};

/// Number of histogram bins; also the LUT size.
pub const NUM_BINS: usize = 256;

/// 256-bin histogram of one channel over a linear value range.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelHistogram {
    pub bins: Vec<u64>,
    pub total: u64,
    pub lo: f64,
    pub hi: f64,
}

impl ChannelHistogram {
    /// Bin index for a value; values outside the range clamp to the end bins.
    #[inline]
    pub fn bin_of(&self, v: f64) -> usize {
        bin_index(v, self.lo, self.hi)
    }

    /// Representative (midpoint) value of a bin.
    #[inline]
    pub fn bin_value(&self, bin: usize) -> f64 {
        bin_midpoint(bin, self.lo, self.hi)
    }

    /// Probability mass per bin.
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total as f64;
        self.bins.iter().map(|&c| c as f64 / t).collect()
    }

    /// Cumulative distribution, cdf[i] = P(bin ≤ i).
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let t = self.total as f64;
        self.bins
            .iter()
            .map(|&c| {
                acc += c as f64 / t;
                acc
            })
            .collect()
    }

    /// Mean of the histogram using bin midpoints.
    pub fn mean(&self) -> f64 {
        let t = self.total as f64;
        self.bins
            .iter()
            .enumerate()
            .map(|(i, &c)| self.bin_value(i) * c as f64 / t)
            .sum()
    }
}

#[inline]
fn bin_index(v: f64, lo: f64, hi: f64) -> usize {
    let t = (v - lo) / (hi - lo);
    let i = (NUM_BINS as f64 * t).floor();
    i.clamp(0.0, (NUM_BINS - 1) as f64) as usize
}

#[inline]
fn bin_midpoint(bin: usize, lo: f64, hi: f64) -> f64 {
    lo + (bin as f64 + 0.5) * (hi - lo) / NUM_BINS as f64
}

/// Histogram a channel into 256 uniform bins over `(lo, hi)`.
///
/// Values are clamped into the range before binning. Empty input is an
/// error; a degenerate (single-value) channel is fine.
pub fn channel_histogram(channel: &[f64], range: (f64, f64)) -> Result<ChannelHistogram> {
    let (lo, hi) = range;
    if channel.is_empty() {
        return Err(Error::EmptyInput("channel histogram"));
    }
    if !(hi > lo) {
        return Err(Error::InvalidDimensions(format!(
            "histogram range ({lo}, {hi})"
        )));
    }
    let mut bins = vec![0u64; NUM_BINS];
    for &v in channel {
        bins[bin_index(v, lo, hi)] += 1;
    }
    Ok(ChannelHistogram {
        bins,
        total: channel.len() as u64,
        lo,
        hi,
    })
}

/// Monotone bin-to-bin remapping table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupTable {
    pub map: Vec<u8>,
}

impl LookupTable {
    pub fn identity() -> Self {
        Self {
            map: (0..=255).collect(),
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.map.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Classic inverse-CDF histogram matching.
///
/// For each source bin `i`, picks the smallest reference bin `j` with
/// `cdf_ref(j) >= cdf_src(i)`. The result is monotone non-decreasing.
pub fn histogram_match_map(src: &ChannelHistogram, reference: &ChannelHistogram) -> LookupTable {
    let cdf_src = src.cdf();
    let cdf_ref = reference.cdf();
    let mut map = Vec::with_capacity(NUM_BINS);
    let mut j = 0usize;
    for i in 0..NUM_BINS {
        while j < NUM_BINS - 1 && cdf_ref[j] < cdf_src[i] {
            j += 1;
        }
        map.push(j as u8);
    }
    LookupTable { map }
}

/// Remap a channel through a LUT.
///
/// Each value is binned and looked up; values whose bin is unchanged keep
/// their exact value, values moved to a different bin take the target bin's
/// midpoint. Keeping in-place values exact means matching an image against
/// itself is lossless.
pub fn apply_lut(channel: &[f64], lut: &LookupTable, range: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = range;
    channel
        .iter()
        .map(|&v| {
            let i = bin_index(v, lo, hi);
            let j = lut.map[i] as usize;
            if j == i {
                v.clamp(lo, hi)
            } else {
                bin_midpoint(j, lo, hi)
            }
        })
        .collect()
}

/// Kolmogorov–Smirnov distance between two histogram CDFs.
pub fn ks_distance(a: &ChannelHistogram, b: &ChannelHistogram) -> f64 {
    let ca = a.cdf();
    let cb = b.cdf();
    ca.iter()
        .zip(&cb)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_channels_hit_end_bins() {
        let h = channel_histogram(&[0.0; 10], (0.0, 1.0)).unwrap();
        assert_eq!(h.bins[0], 10);
        let h = channel_histogram(&[1.0; 7], (0.0, 1.0)).unwrap();
        assert_eq!(h.bins[255], 7);
    }

    #[test]
    fn two_value_channel_splits_mass() {
        let mut c = vec![0.0; 8];
        c.extend_from_slice(&[1.0; 8]);
        let h = channel_histogram(&c, (0.0, 1.0)).unwrap();
        let p = h.normalized();
        assert_eq!(p[0], 0.5);
        assert_eq!(p[255], 0.5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_channel_is_an_error() {
        assert!(matches!(
            channel_histogram(&[], (0.0, 1.0)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn eight_bit_levels_map_to_own_bins() {
        for k in 0..=255u32 {
            let v = k as f64 / 255.0;
            assert_eq!(bin_index(v, 0.0, 1.0), k as usize);
        }
    }

    #[test]
    fn midpoints_rebin_to_self() {
        for i in 0..NUM_BINS {
            let v = bin_midpoint(i, -128.0, 127.0);
            assert_eq!(bin_index(v, -128.0, 127.0), i);
        }
    }

    #[test]
    fn matching_identical_histograms_is_identity_on_mass() {
        let c: Vec<f64> = (0..4096).map(|i| (i % 256) as f64 / 255.0).collect();
        let h = channel_histogram(&c, (0.0, 1.0)).unwrap();
        let lut = histogram_match_map(&h, &h);
        for i in 0..NUM_BINS {
            if h.bins[i] > 0 {
                assert_eq!(lut.map[i] as usize, i);
            }
        }
    }

    #[test]
    fn point_masses_map_directly() {
        let mut src = ChannelHistogram {
            bins: vec![0; NUM_BINS],
            total: 5,
            lo: 0.0,
            hi: 1.0,
        };
        src.bins[10] = 5;
        let mut reference = src.clone();
        reference.bins[10] = 0;
        reference.bins[200] = 5;
        let lut = histogram_match_map(&src, &reference);
        assert_eq!(lut.map[10], 200);
    }

    #[test]
    fn uniform_block_shift_matches_cdf_inversion_oracle() {
        // src uniform over bins 0..=127, ref uniform over 128..=255.
        let mut src = ChannelHistogram {
            bins: vec![0; NUM_BINS],
            total: 128,
            lo: 0.0,
            hi: 1.0,
        };
        let mut reference = src.clone();
        for i in 0..128 {
            src.bins[i] = 1;
            reference.bins[128 + i] = 1;
        }
        let lut = histogram_match_map(&src, &reference);
        // Brute-force CDF inversion, recomputed independently.
        let cs = src.cdf();
        let cr = reference.cdf();
        for i in 0..NUM_BINS {
            let expect = (0..NUM_BINS)
                .find(|&j| cr[j] >= cs[i])
                .unwrap_or(NUM_BINS - 1);
            assert_eq!(lut.map[i] as usize, expect, "bin {i}");
        }
        assert_eq!(lut.map[0], 128);
    }

    #[test]
    fn identity_lut_moves_values_less_than_one_bin() {
        let lut = LookupTable::identity();
        let c: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let out = apply_lut(&c, &lut, (0.0, 1.0));
        for (x, y) in c.iter().zip(&out) {
            assert!((x - y).abs() <= 1.0 / NUM_BINS as f64 + 1e-12);
        }
    }

    #[test]
    fn self_match_lut_keeps_values_exact() {
        let c: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect();
        let h = channel_histogram(&c, (0.0, 1.0)).unwrap();
        let lut = histogram_match_map(&h, &h);
        let out = apply_lut(&c, &lut, (0.0, 1.0));
        assert_eq!(c, out);
    }

    #[test]
    fn point_mass_lut_shift_is_uniform() {
        let mut map: Vec<u8> = (0..=255).collect();
        for m in map.iter_mut() {
            *m = m.saturating_add(10).min(255);
        }
        let lut = LookupTable { map };
        let c = vec![0.25; 4];
        let out = apply_lut(&c, &lut, (0.0, 1.0));
        let expect = bin_midpoint(bin_index(0.25, 0.0, 1.0) + 10, 0.0, 1.0);
        assert!(out.iter().all(|&v| v == expect));
    }

    fn arb_histogram() -> impl Strategy<Value = ChannelHistogram> {
        prop::collection::vec(0u64..20, NUM_BINS).prop_filter_map("non-empty", |bins| {
            let total: u64 = bins.iter().sum();
            (total > 0).then_some(ChannelHistogram {
                bins,
                total,
                lo: 0.0,
                hi: 1.0,
            })
        })
    }

    proptest! {
        #[test]
        fn matched_map_is_monotone(src in arb_histogram(), reference in arb_histogram()) {
            let lut = histogram_match_map(&src, &reference);
            prop_assert!(lut.is_monotone());
        }

        #[test]
        fn matched_values_land_in_mapped_bins(src in arb_histogram(), reference in arb_histogram()) {
            // Rebuild a channel carrying src's mass at bin midpoints, match it,
            // and check the remapped histogram's KS distance to the reference
            // stays below the max source bin mass plus rank slack.
            let mut channel = Vec::new();
            for (i, &c) in src.bins.iter().enumerate() {
                for _ in 0..c {
                    channel.push(src.bin_value(i));
                }
            }
            let lut = histogram_match_map(&src, &reference);
            let mapped = apply_lut(&channel, &lut, (0.0, 1.0));
            let hm = channel_histogram(&mapped, (0.0, 1.0)).unwrap();
            let ks = ks_distance(&hm, &reference);
            let max_mass = src.bins.iter().cloned().max().unwrap() as f64 / src.total as f64;
            prop_assert!(ks <= max_mass + 1e-9, "ks={ks} max_mass={max_mass}");
        }
    }
}
