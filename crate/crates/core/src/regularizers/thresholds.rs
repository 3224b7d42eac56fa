//! Per-category pseudo-label confidence thresholds.

use serde::{Deserialize, Serialize};

/// Global probability cap and percentage threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThresholdConfig {
    /// Hard cap on the confidence threshold, in (0, 1].
    pub p_h: f64,
    /// Percentage of pixels per category that should clear the category
    /// threshold, in (0, 100].
    pub p_percent: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            p_h: 0.9,
            p_percent: 10.0,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.p_h > 0.0 && self.p_h <= 1.0) {
            return Err(crate::Error::Config(format!("P_h {} outside (0, 1]", self.p_h)));
        }
        if !(self.p_percent > 0.0 && self.p_percent <= 100.0) {
            return Err(crate::Error::Config(format!(
                "p {} outside (0, 100]",
                self.p_percent
            )));
        }
        Ok(())
    }
}

/// Nearest-rank percentile: the `q`-th percentile of `sorted` (ascending) is
/// element `ceil(q/100 · n)`, 1-indexed and clamped to at least 1.
fn nearest_rank_percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let rank = ((q / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Per-category thresholds `t_c = min(P_h, P_{s,c})`, where `P_{s,c}` is the
/// (100 − p)-th nearest-rank percentile of the category's confidences.
/// Empty categories fall back to `P_h`.
pub fn compute_thresholds(confidences_by_category: &[Vec<f64>], cfg: &ThresholdConfig) -> Vec<f64> {
    confidences_by_category
        .iter()
        .map(|conf| {
            if conf.is_empty() {
                return cfg.p_h;
            }
            let mut sorted = conf.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite confidences"));
            let p_sc = nearest_rank_percentile(&sorted, 100.0 - cfg.p_percent);
            cfg.p_h.min(p_sc)
        })
        .collect()
}
