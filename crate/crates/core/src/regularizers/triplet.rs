//! Category-oriented triplet loss on source-domain ground truth.
//!
//! Each pixel's normalized feature is pulled toward its own category center
//! and pushed at least `margin` farther from other centers. Centers are
//! constants: no gradient flows into them.

use serde::{Deserialize, Serialize};

use crate::common::LabelMap;
use crate::tensorcore::Tensor;
use crate::{Error, Result};

use super::centers::CategoryCenters;

/// What counts as the negative distance for a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Distance to the closest other center (hard negative).
    Hardest,
    /// Sum of distances to all other centers.
    All,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TripletConfig {
    pub margin: f64,
    pub negative_mode: NegativeMode,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            negative_mode: NegativeMode::Hardest,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!(
                "triplet margin must be positive, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

const NORM_EPS: f64 = 1e-12;

/// Hinge loss over pixels plus its gradient w.r.t. the raw features.
///
/// A pixel contributes when its label's center is present, at least one
/// other center exists, and its feature vector has non-zero norm (a zero
/// vector carries no direction to normalize). The loss is the mean hinge
/// term over contributing pixels; an absent center for a label that does
/// occur is an error. The hinge subgradient at exactly zero is zero.
pub fn triplet_loss(
    features: &Tensor,
    labels: &LabelMap,
    centers: &CategoryCenters,
    cfg: &TripletConfig,
) -> Result<(f64, Tensor)> {
    cfg.validate()?;
    let (f_n, h, w) = match features.shape[..] {
        [f, h, w] => (f, h, w),
        _ => {
            return Err(Error::ShapeMismatch {
                expected: "features [F, H, W]".into(),
                found: format!("{:?}", features.shape),
            })
        }
    };
    if labels.width != w || labels.height != h {
        return Err(Error::ShapeMismatch {
            expected: format!("labels [{h}, {w}]"),
            found: format!("[{}, {}]", labels.height, labels.width),
        });
    }
    if centers.feature_dim() != f_n {
        return Err(Error::ShapeMismatch {
            expected: format!("centers [C, {f_n}]"),
            found: format!("{:?}", centers.centers.shape),
        });
    }
    let c_n = centers.num_categories();
    let plane = h * w;

    // First pass: eligibility and the contributing-pixel count, so per-pixel
    // gradients can be scaled in a single sweep.
    struct PixelTerm {
        pixel: usize,
        label: usize,
        negatives: Vec<usize>,
    }
    let mut terms: Vec<PixelTerm> = Vec::new();
    for (p, &lab) in labels.data.iter().enumerate() {
        let lab = lab as usize;
        if lab >= c_n || !centers.is_present(lab) {
            return Err(Error::MissingCenter(lab));
        }
        let norm2: f64 = (0..f_n)
            .map(|c| {
                let v = features.data[c * plane + p];
                v * v
            })
            .sum();
        if norm2.sqrt() < NORM_EPS {
            continue;
        }
        let negatives: Vec<usize> = (0..c_n)
            .filter(|&c| c != lab && centers.is_present(c))
            .collect();
        if negatives.is_empty() {
            continue;
        }
        terms.push(PixelTerm {
            pixel: p,
            label: lab,
            negatives,
        });
    }

    let mut d_features = Tensor::zeros(&features.shape);
    if terms.is_empty() {
        return Ok((0.0, d_features));
    }
    let inv_n = 1.0 / terms.len() as f64;

    let mut loss = 0.0;
    let mut x = vec![0.0; f_n];
    let mut g = vec![0.0; f_n];
    let mut dg = vec![0.0; f_n];
    for t in &terms {
        let p = t.pixel;
        for c in 0..f_n {
            x[c] = features.data[c * plane + p];
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in 0..f_n {
            g[c] = x[c] / norm;
        }

        let dist = |center: &[f64]| -> f64 {
            g.iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let pos_center = centers.row(t.label);
        let d_pos = dist(pos_center);

        let (d_neg, used_negatives): (f64, Vec<usize>) = match cfg.negative_mode {
            NegativeMode::Hardest => {
                let mut best = f64::INFINITY;
                let mut best_c = t.negatives[0];
                for &c in &t.negatives {
                    let d = dist(centers.row(c));
                    if d < best {
                        best = d;
                        best_c = c;
                    }
                }
                (best, vec![best_c])
            }
            NegativeMode::All => {
                let sum: f64 = t.negatives.iter().map(|&c| dist(centers.row(c))).sum();
                (sum, t.negatives.clone())
            }
        };

        let term = d_pos - d_neg + cfg.margin;
        if term <= 0.0 {
            continue;
        }
        loss += term * inv_n;

        // d(term)/dg = (g − f_pos)/d_pos − Σ (g − f_neg)/d_neg_c
        dg.fill(0.0);
        if d_pos > NORM_EPS {
            for c in 0..f_n {
                dg[c] += (g[c] - pos_center[c]) / d_pos;
            }
        }
        for &nc in &used_negatives {
            let row = centers.row(nc);
            let d = dist(row);
            if d > NORM_EPS {
                for c in 0..f_n {
                    dg[c] -= (g[c] - row[c]) / d;
                }
            }
        }
        // chain through the normalization: dx = (dg − g (g·dg)) / ‖x‖
        let dot: f64 = g.iter().zip(&dg).map(|(a, b)| a * b).sum();
        for c in 0..f_n {
            d_features.data[c * plane + p] += (dg[c] - g[c] * dot) / norm * inv_n;
        }
    }

    Ok((loss, d_features))
}

/// True when every pixel is comfortably away from the hinge boundary, from
/// hardest-negative ties, and from the small-distance regions where the
/// loss surface curves sharply; used to pick smooth instances for
/// finite-difference checks. The bands are sized so an epsilon-sized
/// perturbation, amplified by the normalization Jacobian, cannot cross a
/// kink.
pub(crate) fn instance_is_smooth(
    features: &Tensor,
    labels: &LabelMap,
    centers: &CategoryCenters,
    cfg: &TripletConfig,
) -> bool {
    let (f_n, h, w) = (features.shape[0], features.shape[1], features.shape[2]);
    let plane = h * w;
    let c_n = centers.num_categories();
    let band = 5e-3;
    let min_distance = 0.05;
    for p in 0..plane {
        let lab = labels.data[p] as usize;
        let x: Vec<f64> = (0..f_n).map(|c| features.data[c * plane + p]).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 0.3 {
            return false;
        }
        let g: Vec<f64> = x.iter().map(|v| v / norm).collect();
        let d = |cat: usize| -> f64 {
            centers
                .row(cat)
                .iter()
                .zip(&g)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let all_dists: Vec<f64> = (0..c_n)
            .filter(|&c| centers.is_present(c))
            .map(d)
            .collect();
        if all_dists.iter().any(|&dv| dv < min_distance) {
            return false;
        }
        let mut neg: Vec<f64> = (0..c_n)
            .filter(|&c| c != lab && centers.is_present(c))
            .map(d)
            .collect();
        neg.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if neg.is_empty() {
            continue;
        }
        let d_pos = d(lab);
        let d_neg = match cfg.negative_mode {
            NegativeMode::Hardest => {
                if neg.len() >= 2 && (neg[1] - neg[0]).abs() < band {
                    return false;
                }
                neg[0]
            }
            NegativeMode::All => neg.iter().sum(),
        };
        if (d_pos - d_neg + cfg.margin).abs() < band {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::centers::compute_centers;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn centers_from_rows(rows: Vec<Vec<f64>>, counts: Vec<u64>) -> CategoryCenters {
        let c = rows.len();
        let f = rows[0].len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        CategoryCenters {
            centers: Tensor::from_vec(&[c, f], data).unwrap(),
            pixel_counts: counts,
        }
    }

    #[test]
    fn pixel_at_its_center_with_distant_negative_has_zero_loss() {
        let centers = centers_from_rows(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            vec![1, 1],
        );
        // feature normalizes to exactly the positive center
        let features = Tensor::from_vec(&[2, 1, 1], vec![5.0, 0.0]).unwrap();
        let labels = LabelMap::new(1, 1, vec![0]).unwrap();
        let (loss, grad) = triplet_loss(&features, &labels, &centers, &TripletConfig::default()).unwrap();
        // d_pos = 0, d_neg = 2, margin 0.2 → hinge inactive
        assert_eq!(loss, 0.0);
        assert!(grad.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equidistant_pixel_pays_exactly_the_margin() {
        let centers = centers_from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 1]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let features = Tensor::from_vec(&[2, 1, 1], vec![3.0 * s, 3.0 * s]).unwrap();
        let labels = LabelMap::new(1, 1, vec![0]).unwrap();
        let cfg = TripletConfig {
            margin: 0.2,
            negative_mode: NegativeMode::Hardest,
        };
        let (loss, _) = triplet_loss(&features, &labels, &centers, &cfg).unwrap();
        assert!((loss - 0.2).abs() < 1e-12, "loss={loss}");
    }

    #[test]
    fn absent_center_for_used_label_is_an_error() {
        let centers = centers_from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 0]);
        let features = Tensor::from_vec(&[2, 1, 1], vec![1.0, 1.0]).unwrap();
        let labels = LabelMap::new(1, 1, vec![1]).unwrap();
        match triplet_loss(&features, &labels, &centers, &TripletConfig::default()) {
            Err(Error::MissingCenter(1)) => {}
            other => panic!("expected missing center, got {other:?}"),
        }
    }

    fn brute_force_oracle(
        features: &Tensor,
        labels: &LabelMap,
        centers: &CategoryCenters,
        cfg: &TripletConfig,
    ) -> f64 {
        // direct per-pixel enumeration of every distance
        let (f_n, h, w) = (features.shape[0], features.shape[1], features.shape[2]);
        let plane = h * w;
        let c_n = centers.num_categories();
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in 0..plane {
            let lab = labels.data[p] as usize;
            let x: Vec<f64> = (0..f_n).map(|c| features.data[c * plane + p]).collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                continue;
            }
            let g: Vec<f64> = x.iter().map(|v| v / norm).collect();
            let d = |cat: usize| -> f64 {
                centers
                    .row(cat)
                    .iter()
                    .zip(&g)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            };
            let negs: Vec<usize> = (0..c_n).filter(|&c| c != lab && centers.is_present(c)).collect();
            if negs.is_empty() {
                continue;
            }
            count += 1;
            let d_pos = d(lab);
            let d_neg = match cfg.negative_mode {
                NegativeMode::Hardest => negs.iter().map(|&c| d(c)).fold(f64::INFINITY, f64::min),
                NegativeMode::All => negs.iter().map(|&c| d(c)).sum(),
            };
            sum += (d_pos - d_neg + cfg.margin).max(0.0);
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    #[test]
    fn matches_enumeration_oracle_in_both_modes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
        for trial in 0..10 {
            let f = 5;
            let (h, w) = (8, 8);
            let feats = Tensor::from_vec(
                &[f, h, w],
                (0..f * h * w).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect(),
            )
            .unwrap();
            let labels =
                LabelMap::new(w, h, (0..h * w).map(|_| rng.random_range(0..3u8)).collect())
                    .unwrap();
            // centers from an independent random batch
            let center_feats = Tensor::from_vec(
                &[f, h, w],
                (0..f * h * w).map(|_| rng.random::<f64>() + 0.2).collect(),
            )
            .unwrap();
            let centers = compute_centers(3, [(&center_feats, &labels)]).unwrap();
            for mode in [NegativeMode::Hardest, NegativeMode::All] {
                let cfg = TripletConfig {
                    margin: 0.2,
                    negative_mode: mode,
                };
                let (loss, _) = triplet_loss(&feats, &labels, &centers, &cfg).unwrap();
                let expect = brute_force_oracle(&feats, &labels, &centers, &cfg);
                assert!(
                    (loss - expect).abs() <= 1e-6,
                    "trial {trial} mode {mode:?}: {loss} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn loss_is_non_negative_and_zero_iff_margins_hold() {
        let centers = centers_from_rows(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1, 1]);
        // two pixels very close to their own centers
        let features =
            Tensor::from_vec(&[2, 1, 2], vec![10.0, -10.0, 0.01, 0.01]).unwrap();
        let labels = LabelMap::new(2, 1, vec![0, 1]).unwrap();
        let (loss, _) =
            triplet_loss(&features, &labels, &centers, &TripletConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences_off_the_hinge() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let f = 4;
        let (h, w) = (3, 3);
        let centers = {
            let feats = Tensor::from_vec(
                &[f, h, w],
                (0..f * h * w).map(|_| rng.random::<f64>() + 0.3).collect(),
            )
            .unwrap();
            let labels =
                LabelMap::new(w, h, (0..h * w).map(|i| (i % 3) as u8).collect()).unwrap();
            compute_centers(3, [(&feats, &labels)]).unwrap()
        };
        let labels = LabelMap::new(w, h, (0..h * w).map(|i| ((i + 1) % 3) as u8).collect()).unwrap();
        let cfg = TripletConfig::default();
        // resample until no pixel sits near the hinge or a negative tie
        let feats = loop {
            let cand = Tensor::from_vec(
                &[f, h, w],
                (0..f * h * w).map(|_| rng.random::<f64>() * 2.0 + 0.1).collect(),
            )
            .unwrap();
            if instance_is_smooth(&cand, &labels, &centers, &cfg) {
                break cand;
            }
        };
        let (_, grad) = triplet_loss(&feats, &labels, &centers, &cfg).unwrap();
        let eps = 1e-4;
        let mut x = feats.data.clone();
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + eps;
            let lp = triplet_loss(
                &Tensor::from_vec(&[f, h, w], x.clone()).unwrap(),
                &labels,
                &centers,
                &cfg,
            )
            .unwrap()
            .0;
            x[i] = orig - eps;
            let lm = triplet_loss(
                &Tensor::from_vec(&[f, h, w], x.clone()).unwrap(),
                &labels,
                &centers,
                &cfg,
            )
            .unwrap()
            .0;
            x[i] = orig;
            let num = (lp - lm) / (2.0 * eps);
            let ana = grad.data[i];
            let rel = (num - ana).abs() / ana.abs().max(num.abs()).max(1e-3);
            assert!(rel <= 1e-4, "component {i}: {ana} vs {num}");
        }
    }

}
