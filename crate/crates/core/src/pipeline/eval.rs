//! Confusion-matrix evaluation: per-class IoU and mIoU.

use serde::Serialize;

use crate::datagen::LoadedSplit;
use crate::par;
use crate::segmodel::{image_to_tensor, SegModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    /// IoU per class; `None` for classes absent from both predictions and
    /// labels (those are excluded from the mean).
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

/// Evaluate a model over a labeled split.
pub fn evaluate(model: &SegModel, split: &LoadedSplit) -> Result<EvalResult> {
    let labels = split
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("evaluation split carries no labels".into()))?;
    if split.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let c_n = model.config.num_classes;

    // Per-image confusion matrices; integer counts sum in any order.
    let partials: Vec<Result<Vec<u64>>> = par::map_indexed(split.len(), |i| {
        let (pred, _) = model.predict(&image_to_tensor(&split.images[i]))?;
        let truth = &labels[i];
        if (pred.width, pred.height) != (truth.width, truth.height) {
            return Err(Error::ShapeMismatch {
                expected: format!("labels [{}, {}]", pred.height, pred.width),
                found: format!("[{}, {}]", truth.height, truth.width),
            });
        }
        let mut confusion = vec![0u64; c_n * c_n];
        for (&t, &p) in truth.data.iter().zip(&pred.data) {
            let t = t as usize;
            assert!(t < c_n, "ground-truth label {t} out of range");
            confusion[t * c_n + p as usize] += 1;
        }
        Ok(confusion)
    });
    let mut confusion = vec![0u64; c_n * c_n];
    for partial in partials {
        for (acc, v) in confusion.iter_mut().zip(partial?) {
            *acc += v;
        }
    }

    Ok(iou_from_confusion(&confusion, c_n))
}

pub(crate) fn iou_from_confusion(confusion: &[u64], c_n: usize) -> EvalResult {
    let mut per_class_iou = Vec::with_capacity(c_n);
    for c in 0..c_n {
        let tp = confusion[c * c_n + c];
        let fp: u64 = (0..c_n).filter(|&t| t != c).map(|t| confusion[t * c_n + c]).sum();
        let fn_: u64 = (0..c_n).filter(|&p| p != c).map(|p| confusion[c * c_n + p]).sum();
        let union = tp + fp + fn_;
        per_class_iou.push(if union == 0 {
            None
        } else {
            Some(tp as f64 / union as f64)
        });
    }
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    EvalResult {
        per_class_iou,
        miou,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_scores_one() {
        // diagonal confusion
        let mut confusion = vec![0u64; 9];
        confusion[0] = 5;
        confusion[4] = 3;
        confusion[8] = 2;
        let r = iou_from_confusion(&confusion, 3);
        assert_eq!(r.miou, 1.0);
        assert!(r.per_class_iou.iter().all(|i| *i == Some(1.0)));
    }

    #[test]
    fn constant_prediction_on_balanced_two_class_set() {
        // truth half class 0 half class 1, prediction always class 0
        let mut confusion = vec![0u64; 4];
        confusion[0 * 2 + 0] = 50;
        confusion[1 * 2 + 0] = 50;
        let r = iou_from_confusion(&confusion, 2);
        assert_eq!(r.per_class_iou[0], Some(0.5));
        assert_eq!(r.per_class_iou[1], Some(0.0));
        assert_eq!(r.miou, 0.25);
    }

    #[test]
    fn classes_absent_everywhere_are_excluded() {
        let mut confusion = vec![0u64; 9];
        confusion[0] = 10; // only class 0 appears anywhere
        let r = iou_from_confusion(&confusion, 3);
        assert_eq!(r.per_class_iou[1], None);
        assert_eq!(r.per_class_iou[2], None);
        assert_eq!(r.miou, 1.0);
    }

    #[test]
    fn matches_per_pixel_set_intersection_oracle() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(40);
        for _ in 0..20 {
            let c_n = rng.random_range(2..6usize);
            let n = rng.random_range(10..300usize);
            let truth: Vec<u8> = (0..n).map(|_| rng.random_range(0..c_n as u8)).collect();
            let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..c_n as u8)).collect();
            let mut confusion = vec![0u64; c_n * c_n];
            for (&t, &p) in truth.iter().zip(&pred) {
                confusion[t as usize * c_n + p as usize] += 1;
            }
            let got = iou_from_confusion(&confusion, c_n);
            // brute-force set intersection oracle
            for c in 0..c_n as u8 {
                let inter = truth
                    .iter()
                    .zip(&pred)
                    .filter(|(&t, &p)| t == c && p == c)
                    .count();
                let union = truth
                    .iter()
                    .zip(&pred)
                    .filter(|(&t, &p)| t == c || p == c)
                    .count();
                match got.per_class_iou[c as usize] {
                    None => assert_eq!(union, 0),
                    Some(iou) => {
                        assert!((iou - inter as f64 / union as f64).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
