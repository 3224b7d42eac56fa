//! Category centers: L2-normalized mean feature per ground-truth category.

use crate::common::LabelMap;
use crate::tensorcore::Tensor;
use crate::{Error, Result};

/// Unit-norm center row per category; categories with no pixels are absent.
#[derive(Debug, Clone)]
pub struct CategoryCenters {
    /// `[C, F]`; absent rows are zero.
    pub centers: Tensor,
    pub pixel_counts: Vec<u64>,
}

impl CategoryCenters {
    pub fn num_categories(&self) -> usize {
        self.pixel_counts.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.centers.shape[1]
    }

    pub fn is_present(&self, category: usize) -> bool {
        self.pixel_counts[category] > 0
    }

    pub fn row(&self, category: usize) -> &[f64] {
        let f = self.feature_dim();
        &self.centers.data[category * f..(category + 1) * f]
    }
}

/// Mean feature over every pixel of each category across all provided
/// (feature map, label map) pairs, then L2-normalized.
///
/// The mean is accumulated first and normalized once at the end, so scaling
/// all features of a category leaves its center unchanged. A category whose
/// mean collapses to (near) zero norm is an error; a category with no
/// pixels at all is merely absent.
pub fn compute_centers<'a, I>(num_categories: usize, batches: I) -> Result<CategoryCenters>
where
    I: IntoIterator<Item = (&'a Tensor, &'a LabelMap)>,
{
    let mut sums: Option<Vec<Vec<f64>>> = None;
    let mut counts = vec![0u64; num_categories];
    let mut feature_dim = 0usize;

    for (features, labels) in batches {
        let (f, h, w) = match features.shape[..] {
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
        let sums = sums.get_or_insert_with(|| {
            feature_dim = f;
            vec![vec![0.0; f]; num_categories]
        });
        if f != feature_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("feature dim {feature_dim}"),
                found: format!("{f}"),
            });
        }
        let plane = h * w;
        for (p, &cat) in labels.data.iter().enumerate() {
            let cat = cat as usize;
            assert!(cat < num_categories, "label {cat} out of range");
            counts[cat] += 1;
            let acc = &mut sums[cat];
            for (c, a) in acc.iter_mut().enumerate() {
                *a += features.data[c * plane + p];
            }
        }
    }

    let sums = sums.ok_or(Error::EmptyInput("no feature batches"))?;
    let mut centers = Tensor::zeros(&[num_categories, feature_dim]);
    for cat in 0..num_categories {
        if counts[cat] == 0 {
            continue;
        }
        let inv = 1.0 / counts[cat] as f64;
        let mean: Vec<f64> = sums[cat].iter().map(|&s| s * inv).collect();
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateCategory(cat));
        }
        for (o, &m) in centers.data[cat * feature_dim..(cat + 1) * feature_dim]
            .iter_mut()
            .zip(&mean)
        {
            *o = m / norm;
        }
    }
    Ok(CategoryCenters {
        centers,
        pixel_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn feat(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn single_pixel_center_is_normalized_feature() {
        let features = feat(&[2, 1, 1], vec![3.0, 4.0]);
        let labels = LabelMap::new(1, 1, vec![1]).unwrap();
        let c = compute_centers(3, [(&features, &labels)]).unwrap();
        assert!(c.is_present(1));
        assert!(!c.is_present(0) && !c.is_present(2));
        assert!((c.row(1)[0] - 0.6).abs() < 1e-12);
        assert!((c.row(1)[1] - 0.8).abs() < 1e-12);
        assert_eq!(c.pixel_counts, vec![0, 1, 0]);
    }

    #[test]
    fn exact_cancellation_is_degenerate() {
        // two pixels of the same category with features v and −v
        let features = feat(&[2, 1, 2], vec![1.0, -1.0, 2.0, -2.0]);
        let labels = LabelMap::new(2, 1, vec![0, 0]).unwrap();
        match compute_centers(1, [(&features, &labels)]) {
            Err(Error::DegenerateCategory(0)) => {}
            other => panic!("expected degenerate category, got {other:?}"),
        }
    }

    #[test]
    fn centers_match_two_pass_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let f = 6;
        let (h, w) = (5, 7);
        let batches: Vec<(Tensor, LabelMap)> = (0..3)
            .map(|_| {
                let feats = feat(
                    &[f, h, w],
                    (0..f * h * w).map(|_| rng.random::<f64>() + 0.1).collect(),
                );
                let labels =
                    LabelMap::new(w, h, (0..h * w).map(|_| rng.random_range(0..3u8)).collect())
                        .unwrap();
                (feats, labels)
            })
            .collect();
        let got = compute_centers(3, batches.iter().map(|(a, b)| (a, b))).unwrap();

        // Independent two-pass oracle: gather all features per category,
        // average, normalize.
        for cat in 0..3u8 {
            let mut gathered: Vec<Vec<f64>> = Vec::new();
            for (feats, labels) in &batches {
                let plane = h * w;
                for (p, &l) in labels.data.iter().enumerate() {
                    if l == cat {
                        gathered.push((0..f).map(|c| feats.data[c * plane + p]).collect());
                    }
                }
            }
            if gathered.is_empty() {
                assert!(!got.is_present(cat as usize));
                continue;
            }
            let n = gathered.len() as f64;
            let mut mean = vec![0.0; f];
            for v in &gathered {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x / n;
                }
            }
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (a, b) in got.row(cat as usize).iter().zip(&mean) {
                assert!((a - b / norm).abs() <= 1e-6, "category {cat}");
            }
            assert_eq!(got.pixel_counts[cat as usize], gathered.len() as u64);
        }
    }

    #[test]
    fn present_rows_are_unit_norm_and_scale_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let features = feat(&[4, 3, 3], (0..36).map(|_| rng.random::<f64>() + 0.5).collect());
        let labels = LabelMap::new(3, 3, (0..9).map(|i| (i % 2) as u8).collect()).unwrap();
        let c1 = compute_centers(2, [(&features, &labels)]).unwrap();
        for cat in 0..2 {
            let norm: f64 = c1.row(cat).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6);
        }
        let mut scaled = features.clone();
        scaled.scale(7.0);
        let c2 = compute_centers(2, [(&scaled, &labels)]).unwrap();
        for (a, b) in c1.centers.data.iter().zip(&c2.centers.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
