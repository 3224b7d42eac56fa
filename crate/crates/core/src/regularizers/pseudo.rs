//! Pseudo-label generation over a target set, with file persistence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::common::LabelMap;
use crate::datagen::{read_f32_raster, read_label_pgm, write_f32_raster, write_label_pgm};
use crate::par;
use crate::segmodel::SegModel;
use crate::tensorcore::Tensor;
use crate::{Error, Result};

use super::thresholds::{compute_thresholds, ThresholdConfig};

/// Pseudo labels for one image.
#[derive(Debug, Clone)]
pub struct PseudoLabelImage {
    pub labels: LabelMap,
    pub confidence: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PseudoLabelImage {
    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.valid.len() as f64
    }
}

/// Pseudo labels for a whole target set, sharing per-category thresholds
/// computed over the set.
#[derive(Debug, Clone)]
pub struct PseudoLabelSet {
    pub thresholds: Vec<f64>,
    pub images: Vec<PseudoLabelImage>,
}

#[derive(Serialize, Deserialize)]
struct PseudoSidecar {
    thresholds: Vec<f64>,
    num_images: usize,
}

impl PseudoLabelSet {
    /// Fraction of pixels predicted as each category that cleared the
    /// category threshold.
    pub fn valid_fraction_per_category(&self) -> Vec<f64> {
        let c_n = self.thresholds.len();
        let mut valid = vec![0u64; c_n];
        let mut total = vec![0u64; c_n];
        for img in &self.images {
            for (p, &l) in img.labels.data.iter().enumerate() {
                total[l as usize] += 1;
                if img.valid[p] {
                    valid[l as usize] += 1;
                }
            }
        }
        (0..c_n)
            .map(|c| {
                if total[c] == 0 {
                    0.0
                } else {
                    valid[c] as f64 / total[c] as f64
                }
            })
            .collect()
    }

    /// Persist as one P5 label map and one f32 confidence raster per image,
    /// plus a JSON sidecar carrying the thresholds.
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {dir:?}"), e))?;
        for (i, img) in self.images.iter().enumerate() {
            write_label_pgm(&dir.join(format!("{prefix}_{i:04}.pgm")), &img.labels)?;
            write_f32_raster(
                &dir.join(format!("{prefix}_{i:04}.conf")),
                img.labels.width,
                img.labels.height,
                &img.confidence,
            )?;
        }
        let sidecar = PseudoSidecar {
            thresholds: self.thresholds.clone(),
            num_images: self.images.len(),
        };
        let path = dir.join(format!("{prefix}_thresholds.json"));
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::format(&path, format!("serialize: {e}")))?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(format!("write {path:?}"), e))
    }

    /// Load a set saved by [`PseudoLabelSet::save`]. The validity mask is
    /// reconstructed from confidences and thresholds (confidences crossing
    /// a threshold survive f32 storage only approximately, so masks are
    /// recomputed, not stored).
    pub fn load(dir: &Path, prefix: &str) -> Result<Self> {
        let path = dir.join(format!("{prefix}_thresholds.json"));
        let text =
            std::fs::read_to_string(&path).map_err(|e| Error::io(format!("read {path:?}"), e))?;
        let sidecar: PseudoSidecar =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("parse: {e}")))?;
        let mut images = Vec::with_capacity(sidecar.num_images);
        for i in 0..sidecar.num_images {
            let labels = read_label_pgm(&dir.join(format!("{prefix}_{i:04}.pgm")))?;
            let (w, h, confidence) = read_f32_raster(&dir.join(format!("{prefix}_{i:04}.conf")))?;
            if (w, h) != (labels.width, labels.height) {
                return Err(Error::ShapeMismatch {
                    expected: format!("raster [{}, {}]", labels.height, labels.width),
                    found: format!("[{h}, {w}]"),
                });
            }
            let valid = validity(&labels, &confidence, &sidecar.thresholds);
            images.push(PseudoLabelImage {
                labels,
                confidence,
                valid,
            });
        }
        Ok(Self {
            thresholds: sidecar.thresholds,
            images,
        })
    }
}

fn validity(labels: &LabelMap, confidence: &[f64], thresholds: &[f64]) -> Vec<bool> {
    labels
        .data
        .iter()
        .zip(confidence)
        .map(|(&l, &c)| c >= thresholds[l as usize])
        .collect()
}

/// Run a frozen model over non-augmented target images, threshold per
/// category over the whole set, and mark validity.
///
/// A pure function of (model, images, config): repeated calls agree bitwise.
pub fn generate_pseudo_labels(
    model: &SegModel,
    target_images: &[Tensor],
    cfg: &ThresholdConfig,
) -> Result<PseudoLabelSet> {
    cfg.validate()?;
    if target_images.is_empty() {
        return Err(Error::EmptyInput("target image set"));
    }
    let c_n = model.config.num_classes;
    let predictions: Vec<Result<(LabelMap, Vec<f64>)>> =
        par::map_indexed(target_images.len(), |i| model.predict(&target_images[i]));
    let mut predicted = Vec::with_capacity(predictions.len());
    for p in predictions {
        predicted.push(p?);
    }

    // Group confidences by predicted category, in fixed image order.
    let mut by_category: Vec<Vec<f64>> = vec![Vec::new(); c_n];
    for (labels, confidence) in &predicted {
        for (&l, &c) in labels.data.iter().zip(confidence) {
            by_category[l as usize].push(c);
        }
    }
    let thresholds = compute_thresholds(&by_category, cfg);

    let images = predicted
        .into_iter()
        .map(|(labels, confidence)| {
            let valid = validity(&labels, &confidence, &thresholds);
            PseudoLabelImage {
                labels,
                confidence,
                valid,
            }
        })
        .collect();
    Ok(PseudoLabelSet { thresholds, images })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmodel::ModelConfig;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn tiny_model(seed: u64) -> SegModel {
        SegModel::init(
            ModelConfig {
                in_channels: 3,
                hidden_channels: 4,
                feature_channels: 4,
                num_classes: 4,
            },
            seed,
        )
        .unwrap()
    }

    fn random_images(rng: &mut impl Rng, n: usize, h: usize, w: usize) -> Vec<Tensor> {
        (0..n)
            .map(|_| {
                Tensor::from_vec(&[3, h, w], (0..3 * h * w).map(|_| rng.random()).collect())
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn uniform_output_model_validates_everything() {
        // Zeroed head → uniform softmax → every pixel predicted class 0 with
        // confidence 1/4; P_{s,0} = 0.25 caps the threshold below P_h, so all
        // pixels are valid.
        let mut model = tiny_model(1);
        model.params_mut()[6].value.fill(0.0);
        model.params_mut()[7].value.fill(0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let images = random_images(&mut rng, 3, 6, 6);
        let set = generate_pseudo_labels(&model, &images, &ThresholdConfig::default()).unwrap();
        assert!((set.thresholds[0] - 0.25).abs() < 1e-12);
        // empty categories fall back to the cap
        for c in 1..4 {
            assert_eq!(set.thresholds[c], 0.9);
        }
        for img in &set.images {
            assert!(img.valid.iter().all(|&v| v));
        }
    }

    #[test]
    fn generation_is_bitwise_reproducible() {
        let model = tiny_model(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let images = random_images(&mut rng, 4, 5, 7);
        let a = generate_pseudo_labels(&model, &images, &ThresholdConfig::default()).unwrap();
        let b = generate_pseudo_labels(&model, &images, &ThresholdConfig::default()).unwrap();
        assert_eq!(a.thresholds, b.thresholds);
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.labels, y.labels);
            let bx: Vec<u64> = x.confidence.iter().map(|v| v.to_bits()).collect();
            let by: Vec<u64> = y.confidence.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bx, by);
            assert_eq!(x.valid, y.valid);
        }
    }

    #[test]
    fn validity_follows_thresholds_per_category() {
        let model = tiny_model(5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let images = random_images(&mut rng, 5, 8, 8);
        let set = generate_pseudo_labels(&model, &images, &ThresholdConfig::default()).unwrap();
        for img in &set.images {
            for (p, &l) in img.labels.data.iter().enumerate() {
                assert_eq!(img.valid[p], img.confidence[p] >= set.thresholds[l as usize]);
            }
        }
        // per the percentile definition, each non-empty category keeps at
        // least ~p% of its pixels (up to rank quantization and the P_h cap)
        let fractions = set.valid_fraction_per_category();
        assert!(fractions.iter().all(|&f| f <= 1.0));
    }

    #[test]
    fn save_load_round_trip() {
        let model = tiny_model(7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let images = random_images(&mut rng, 3, 4, 6);
        let set = generate_pseudo_labels(&model, &images, &ThresholdConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save(dir.path(), "pl").unwrap();
        let back = PseudoLabelSet::load(dir.path(), "pl").unwrap();
        assert_eq!(back.thresholds, set.thresholds);
        assert_eq!(back.images.len(), set.images.len());
        for (a, b) in set.images.iter().zip(&back.images) {
            assert_eq!(a.labels, b.labels);
            for (x, y) in a.confidence.iter().zip(&b.confidence) {
                assert!((x - y).abs() <= f32::EPSILON as f64 * 2.0);
            }
        }
    }
}
