//! Target-domain consistency loss.
//!
//! Cross-entropy between the hard pseudo label taken from the clean image
//! and the current model's prediction on the photometrically jittered
//! version of the same image, restricted to pixels whose pseudo label
//! cleared its category threshold. Jitter never moves pixels, so the
//! correspondence is exact.

use crate::tensorcore::Tensor;
use crate::{Error, Result};

use super::pseudo::PseudoLabelImage;

/// Loss and gradient w.r.t. the logits on the jittered image.
///
/// Implemented standalone (own softmax) so it can be cross-checked against
/// the generic masked cross-entropy kernel.
pub fn consistency_loss(
    pseudo: &PseudoLabelImage,
    logits_on_jittered: &Tensor,
) -> Result<(f64, Tensor)> {
    let (c_n, h, w) = match logits_on_jittered.shape[..] {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::ShapeMismatch {
                expected: "logits [C, H, W]".into(),
                found: format!("{:?}", logits_on_jittered.shape),
            })
        }
    };
    if pseudo.labels.width != w || pseudo.labels.height != h {
        return Err(Error::ShapeMismatch {
            expected: format!("pseudo labels [{h}, {w}]"),
            found: format!("[{}, {}]", pseudo.labels.height, pseudo.labels.width),
        });
    }
    let plane = h * w;
    let valid_count = pseudo.valid.iter().filter(|&&v| v).count();
    let mut d_logits = Tensor::zeros(&logits_on_jittered.shape);
    if valid_count == 0 {
        return Ok((0.0, d_logits));
    }
    let inv_n = 1.0 / valid_count as f64;

    let mut loss = 0.0;
    let mut probs = vec![0.0; c_n];
    for p in 0..plane {
        if !pseudo.valid[p] {
            continue;
        }
        let label = pseudo.labels.data[p] as usize;
        assert!(label < c_n, "pseudo label {label} out of range");
        let mut mx = f64::NEG_INFINITY;
        for c in 0..c_n {
            mx = mx.max(logits_on_jittered.data[c * plane + p]);
        }
        let mut z = 0.0;
        for c in 0..c_n {
            let e = (logits_on_jittered.data[c * plane + p] - mx).exp();
            probs[c] = e;
            z += e;
        }
        for v in probs.iter_mut() {
            *v /= z;
        }
        loss -= probs[label].max(f64::MIN_POSITIVE).ln() * inv_n;
        for c in 0..c_n {
            let indicator = if c == label { 1.0 } else { 0.0 };
            d_logits.data[c * plane + p] = (probs[c] - indicator) * inv_n;
        }
    }
    Ok((loss, d_logits))
}
