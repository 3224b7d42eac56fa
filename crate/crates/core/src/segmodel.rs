//! Toy per-pixel segmentation network.
//!
//! Three 3×3 conv + ReLU blocks followed by a 1×1 classifier head. The
//! post-ReLU activation feeding the head is the pixel-wise feature map used
//! for category centers and the triplet loss. The network is fully
//! convolutional, so any image size works.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::common::LabelMap;
use crate::imgproc::RgbImage;
use crate::rng::{stream, stream_rng};
use crate::tensorcore::{
    conv1x1_backward, conv1x1_forward, conv2d_backward, conv2d_forward, read_tensors,
    relu_backward, relu_forward, softmax_pixels, write_tensors, Parameter, Tensor,
};
use crate::{Error, Result};

const MODEL_MAGIC: [u8; 4] = *b"SEGM";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub feature_channels: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            hidden_channels: 16,
            feature_channels: 16,
            num_classes: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.hidden_channels == 0
            || self.feature_channels == 0
            || self.num_classes == 0
        {
            return Err(Error::Config("model channel counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameter order: conv1 w/b, conv2 w/b, conv3 w/b, head w/b.
#[derive(Debug, Clone)]
pub struct SegModel {
    pub config: ModelConfig,
    params: Vec<Parameter>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardTrace {
    pub input: Tensor,
    z1: Tensor,
    a1: Tensor,
    z2: Tensor,
    a2: Tensor,
    z3: Tensor,
    /// Post-ReLU feature map feeding the classifier head.
    pub features: Tensor,
    pub logits: Tensor,
}

/// Gradients in parameter order, plus the input gradient when requested.
pub struct BackwardResult {
    pub grads: Vec<Tensor>,
    pub d_input: Option<Tensor>,
}

fn he_init(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid stddev");
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| normal.sample(rng)).collect()).expect("sized init")
}

impl SegModel {
    /// He-style fan-in scaled Gaussian init with an explicit seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, &[stream::MODEL_INIT]);
        let c = &config;
        let params = vec![
            Parameter::new(he_init(
                &mut rng,
                &[c.hidden_channels, c.in_channels, 3, 3],
                c.in_channels * 9,
            )),
            Parameter::new(Tensor::zeros(&[c.hidden_channels])),
            Parameter::new(he_init(
                &mut rng,
                &[c.hidden_channels, c.hidden_channels, 3, 3],
                c.hidden_channels * 9,
            )),
            Parameter::new(Tensor::zeros(&[c.hidden_channels])),
            Parameter::new(he_init(
                &mut rng,
                &[c.feature_channels, c.hidden_channels, 3, 3],
                c.hidden_channels * 9,
            )),
            Parameter::new(Tensor::zeros(&[c.feature_channels])),
            Parameter::new(he_init(
                &mut rng,
                &[c.num_classes, c.feature_channels],
                c.feature_channels,
            )),
            Parameter::new(Tensor::zeros(&[c.num_classes])),
        ];
        Ok(Self { config, params })
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Forward pass keeping every intermediate activation.
    pub fn forward_trace(&self, input: &Tensor) -> Result<ForwardTrace> {
        let z1 = conv2d_forward(input, &self.params[0].value, &self.params[1].value)?;
        let a1 = relu_forward(&z1);
        let z2 = conv2d_forward(&a1, &self.params[2].value, &self.params[3].value)?;
        let a2 = relu_forward(&z2);
        let z3 = conv2d_forward(&a2, &self.params[4].value, &self.params[5].value)?;
        let features = relu_forward(&z3);
        let logits = conv1x1_forward(&features, &self.params[6].value, &self.params[7].value)?;
        Ok(ForwardTrace {
            input: input.clone(),
            z1,
            a1,
            z2,
            a2,
            z3,
            features,
            logits,
        })
    }

    /// Forward pass returning only the feature map and logits.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let t = self.forward_trace(input)?;
        Ok((t.features, t.logits))
    }

    /// Backward through the whole network.
    ///
    /// `d_logits` is the gradient at the head output; `d_features` is an
    /// optional extra gradient injected directly at the feature map (the
    /// triplet loss attaches there). Set `want_d_input` only when the
    /// gradient w.r.t. the image itself is needed.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_logits: &Tensor,
        d_features: Option<&Tensor>,
        want_d_input: bool,
    ) -> Result<BackwardResult> {
        let (mut d_a3, d_w4, d_b4) =
            conv1x1_backward(&trace.features, &self.params[6].value, d_logits)?;
        if let Some(extra) = d_features {
            d_a3.add_assign(extra);
        }
        let d_z3 = relu_backward(&trace.z3, &d_a3);
        let g3 = conv2d_backward(&trace.a2, &self.params[4].value, &d_z3, true)?;
        let d_z2 = relu_backward(&trace.z2, &g3.d_input.expect("requested"));
        let g2 = conv2d_backward(&trace.a1, &self.params[2].value, &d_z2, true)?;
        let d_z1 = relu_backward(&trace.z1, &g2.d_input.expect("requested"));
        let g1 = conv2d_backward(&trace.input, &self.params[0].value, &d_z1, want_d_input)?;
        Ok(BackwardResult {
            grads: vec![
                g1.d_weights,
                g1.d_bias,
                g2.d_weights,
                g2.d_bias,
                g3.d_weights,
                g3.d_bias,
                d_w4,
                d_b4,
            ],
            d_input: g1.d_input,
        })
    }

    /// Accumulate a gradient set into the parameter gradient buffers.
    pub fn accumulate_grads(&mut self, grads: &[Tensor]) {
        assert_eq!(grads.len(), self.params.len(), "gradient set size");
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.grad.add_assign(g);
        }
    }

    /// Per-pixel argmax labels and the winning softmax probability.
    ///
    /// Ties break toward the lowest class index.
    pub fn predict(&self, input: &Tensor) -> Result<(LabelMap, Vec<f64>)> {
        let (_, logits) = self.forward(input)?;
        let (h, w) = (logits.shape[1], logits.shape[2]);
        let probs = softmax_pixels(&logits)?;
        let c_n = self.config.num_classes;
        let plane = h * w;
        let mut labels = vec![0u8; plane];
        let mut confidence = vec![0.0; plane];
        for p in 0..plane {
            let mut best_c = 0usize;
            let mut best_v = probs.data[p];
            for c in 1..c_n {
                let v = probs.data[c * plane + p];
                if v > best_v {
                    best_v = v;
                    best_c = c;
                }
            }
            labels[p] = best_c as u8;
            confidence[p] = best_v;
        }
        Ok((LabelMap::new(w, h, labels)?, confidence))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(format!("create {path:?}"), e))?;
        let mut w = BufWriter::new(file);
        let write_io = |e: std::io::Error| Error::io(format!("write {path:?}"), e);
        w.write_all(&MODEL_MAGIC).map_err(write_io)?;
        w.write_all(&MODEL_VERSION.to_le_bytes()).map_err(write_io)?;
        for v in [
            self.config.in_channels,
            self.config.hidden_channels,
            self.config.feature_channels,
            self.config.num_classes,
        ] {
            w.write_all(&(v as u32).to_le_bytes()).map_err(write_io)?;
        }
        let tensors: Vec<&Tensor> = self.params.iter().map(|p| &p.value).collect();
        write_tensors(&mut w, &tensors).map_err(write_io)?;
        w.flush().map_err(write_io)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(format!("open {path:?}"), e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format(path, "unexpected end of file"))?;
        if magic != MODEL_MAGIC {
            return Err(Error::format(
                path,
                format!("bad model magic: expected {MODEL_MAGIC:?}, found {magic:?}"),
            ));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)
            .map_err(|_| Error::format(path, "unexpected end of file"))?;
        let version = u32::from_le_bytes(b4);
        if version != MODEL_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported model version: expected {MODEL_VERSION}, found {version}"),
            ));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            r.read_exact(&mut b4)
                .map_err(|_| Error::format(path, "unexpected end of file"))?;
            *d = u32::from_le_bytes(b4) as usize;
        }
        let config = ModelConfig {
            in_channels: dims[0],
            hidden_channels: dims[1],
            feature_channels: dims[2],
            num_classes: dims[3],
        };
        config.validate()?;
        let tensors = read_tensors(&mut r, path)?;
        if tensors.len() != 8 {
            return Err(Error::format(
                path,
                format!("expected 8 parameter tensors, found {}", tensors.len()),
            ));
        }
        Ok(Self {
            config,
            params: tensors.into_iter().map(Parameter::new).collect(),
        })
    }
}

/// Normalize an 8-bit RGB image into a `[3, H, W]` tensor in [0, 1].
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let plane = img.num_pixels();
    let mut data = vec![0.0; 3 * plane];
    for (p, px) in img.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = px[c] as f64 / 255.0;
        }
    }
    Tensor {
        shape: vec![3, img.height, img.width],
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::cross_entropy;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            in_channels: 3,
            hidden_channels: 4,
            feature_channels: 4,
            num_classes: 4,
        }
    }

    fn random_input(rng: &mut impl Rng, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(
            &[3, h, w],
            (0..3 * h * w).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zeroed_head_gives_uniform_softmax() {
        let mut model = SegModel::init(tiny_config(), 7).unwrap();
        model.params[6].value.fill(0.0);
        model.params[7].value.fill(0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let input = random_input(&mut rng, 5, 5);
        let (labels, conf) = model.predict(&input).unwrap();
        assert!(labels.data.iter().all(|&l| l == 0), "tie-break to class 0");
        assert!(conf.iter().all(|&c| (c - 0.25).abs() < 1e-12));
    }

    #[test]
    fn fixed_seed_init_is_reproducible() {
        let a = SegModel::init(tiny_config(), 99).unwrap();
        let b = SegModel::init(tiny_config(), 99).unwrap();
        for (x, y) in a.params.iter().zip(&b.params) {
            assert_eq!(x.value.data, y.value.data);
        }
        let c = SegModel::init(tiny_config(), 100).unwrap();
        assert_ne!(a.params[0].value.data, c.params[0].value.data);
    }

    #[test]
    fn prediction_invariant_to_uniform_logit_shift() {
        let model = SegModel::init(tiny_config(), 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let input = random_input(&mut rng, 4, 4);
        let (_, logits) = model.forward(&input).unwrap();
        let probs = softmax_pixels(&logits).unwrap();
        let mut shifted = logits.clone();
        let plane = 16;
        for p in 0..plane {
            for c in 0..4 {
                shifted.data[c * plane + p] += 3.7;
            }
        }
        let probs2 = softmax_pixels(&shifted).unwrap();
        for (a, b) in probs.data.iter().zip(&probs2.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn confidence_in_unit_interval_and_labels_in_range() {
        let model = SegModel::init(tiny_config(), 5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let input = random_input(&mut rng, 6, 3);
        let (labels, conf) = model.predict(&input).unwrap();
        assert!(labels.data.iter().all(|&l| (l as usize) < 4));
        assert!(conf.iter().all(|&c| c > 0.0 && c <= 1.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let model = SegModel::init(tiny_config(), 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save_checkpoint(&path).unwrap();
        let back = SegModel::load_checkpoint(&path).unwrap();
        assert_eq!(back.config, model.config);
        for (a, b) in model.params.iter().zip(back.params.iter()) {
            let bits_a: Vec<u64> = a.value.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.value.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        // Same forward output, bit for bit.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let input = random_input(&mut rng, 4, 5);
        let (_, l1) = model.forward(&input).unwrap();
        let (_, l2) = back.forward(&input).unwrap();
        let b1: Vec<u64> = l1.data.iter().map(|v| v.to_bits()).collect();
        let b2: Vec<u64> = l2.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(b1, b2);
    }

    #[test]
    fn truncated_checkpoint_is_an_error() {
        let model = SegModel::init(tiny_config(), 22).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(SegModel::load_checkpoint(&path).is_err());
    }

    #[test]
    fn corrupted_magic_names_expected_and_found() {
        let model = SegModel::init(tiny_config(), 23).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save_checkpoint(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'Z';
        std::fs::write(&path, &bytes).unwrap();
        let err = SegModel::load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("expected") && err.contains("found"), "{err}");
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        let model = SegModel::init(tiny_config(), 31).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let h = 8;
        let w = 8;
        let input = random_input(&mut rng, h, w);
        let labels: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..4u8)).collect();

        let trace = model.forward_trace(&input).unwrap();
        let ce = cross_entropy(&trace.logits, &labels, None).unwrap();
        let analytic = model.backward(&trace, &ce.d_logits, None, true).unwrap();
        let d_input = analytic.d_input.unwrap();

        let loss_at = |data: &[f64]| -> f64 {
            let t = Tensor::from_vec(&[3, h, w], data.to_vec()).unwrap();
            let (_, logits) = model.forward(&t).unwrap();
            cross_entropy(&logits, &labels, None).unwrap().loss
        };
        let eps = 1e-4;
        let mut x = input.data.clone();
        let mut max_rel: f64 = 0.0;
        // Sweep a deterministic subset of input pixels to keep the test quick.
        for i in (0..x.len()).step_by(7) {
            let orig = x[i];
            x[i] = orig + eps;
            let fp = loss_at(&x);
            x[i] = orig - eps;
            let fm = loss_at(&x);
            x[i] = orig;
            let num = (fp - fm) / (2.0 * eps);
            let ana = d_input.data[i];
            let rel = (num - ana).abs() / ana.abs().max(num.abs()).max(1e-3);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel <= 1e-3, "max relative error {max_rel}");
    }
}
