//! Finite-difference gradient verification for every backward kernel and
//! both pixel losses.
//!
//! The numerical side is an independent oracle: it only ever calls forward
//! code, never the analytic backward paths it checks. Relative error uses a
//! small denominator floor so near-zero gradient components compare on an
//! absolute scale.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::common::LabelMap;
use crate::regularizers::{
    compute_centers, consistency_loss, triplet_loss, NegativeMode, PseudoLabelImage,
    TripletConfig,
};
use crate::rng::stream_rng;
use crate::segmodel::{ModelConfig, SegModel};
use crate::tensorcore::{
    conv1x1_backward, conv1x1_forward, conv2d_backward, conv2d_forward, cross_entropy,
    l2_normalize_rows, l2_normalize_rows_backward, relu_backward, relu_forward, Tensor,
};

pub const EPSILON: f64 = 1e-4;
pub const KERNEL_TOLERANCE: f64 = 1e-4;
pub const FULL_MODEL_TOLERANCE: f64 = 1e-3;
const REL_FLOOR: f64 = 1e-3;

/// Outcome of one check family.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckReport {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Central finite differences of a scalar function at `x`.
pub fn numerical_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + EPSILON;
            let fp = f(&xp);
            xp[i] = orig - EPSILON;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * EPSILON)
        })
        .collect()
}

/// Worst relative error between analytic and numerical gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect(),
    )
    .expect("sized")
}

/// Scalar projection loss: a fixed random linear functional of a tensor, so
/// backward passes of tensor-valued kernels can be checked one scalar at a
/// time.
fn projection(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    rand_tensor(rng, shape, -1.0, 1.0)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

fn check_conv2d(cases: usize, rng: &mut ChaCha8Rng) -> CheckReport {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let ci = rng.random_range(1..4usize);
        let co = rng.random_range(1..4usize);
        let h = rng.random_range(2..6usize);
        let w = rng.random_range(2..6usize);
        let input = rand_tensor(rng, &[ci, h, w], -1.0, 1.0);
        let weights = rand_tensor(rng, &[co, ci, 3, 3], -1.0, 1.0);
        let bias = rand_tensor(rng, &[co], -0.5, 0.5);
        let proj = projection(rng, &[co, h, w]);

        let grads = conv2d_backward(&input, &weights, &proj, true).expect("shapes agree");
        let loss_input = |x: &[f64]| {
            let t = Tensor::from_vec(&[ci, h, w], x.to_vec()).unwrap();
            dot(&conv2d_forward(&t, &weights, &bias).unwrap(), &proj)
        };
        worst = worst.max(max_rel_err(
            &grads.d_input.as_ref().unwrap().data,
            &numerical_gradient(loss_input, &input.data),
        ));
        let loss_weights = |x: &[f64]| {
            let t = Tensor::from_vec(&[co, ci, 3, 3], x.to_vec()).unwrap();
            dot(&conv2d_forward(&input, &t, &bias).unwrap(), &proj)
        };
        worst = worst.max(max_rel_err(
            &grads.d_weights.data,
            &numerical_gradient(loss_weights, &weights.data),
        ));
        let loss_bias = |x: &[f64]| {
            let t = Tensor::from_vec(&[co], x.to_vec()).unwrap();
            dot(&conv2d_forward(&input, &weights, &t).unwrap(), &proj)
        };
        worst = worst.max(max_rel_err(
            &grads.d_bias.data,
            &numerical_gradient(loss_bias, &bias.data),
        ));
    }
    CheckReport {
        name: "conv3x3".into(),
        cases,
        max_rel_err: worst,
        tolerance: KERNEL_TOLERANCE,
    }
}

fn check_conv1x1(cases: usize, rng: &mut ChaCha8Rng) -> CheckReport {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let ci = rng.random_range(1..5usize);
        let co = rng.random_range(1..5usize);
        let h = rng.random_range(1..5usize);
        let w = rng.random_range(1..5usize);
        let input = rand_tensor(rng, &[ci, h, w], -1.0, 1.0);
        let weights = rand_tensor(rng, &[co, ci], -1.0, 1.0);
        let bias = rand_tensor(rng, &[co], -0.5, 0.5);
        let proj = projection(rng, &[co, h, w]);
        let (d_in, d_w, d_b) = conv1x1_backward(&input, &weights, &proj).unwrap();

        worst = worst.max(max_rel_err(
            &d_in.data,
            &numerical_gradient(
                |x| {
                    let t = Tensor::from_vec(&[ci, h, w], x.to_vec()).unwrap();
                    dot(&conv1x1_forward(&t, &weights, &bias).unwrap(), &proj)
                },
                &input.data,
            ),
        ));
        worst = worst.max(max_rel_err(
            &d_w.data,
            &numerical_gradient(
                |x| {
                    let t = Tensor::from_vec(&[co, ci], x.to_vec()).unwrap();
                    dot(&conv1x1_forward(&input, &t, &bias).unwrap(), &proj)
                },
                &weights.data,
            ),
        ));
        worst = worst.max(max_rel_err(
            &d_b.data,
            &numerical_gradient(
                |x| {
                    let t = Tensor::from_vec(&[co], x.to_vec()).unwrap();
                    dot(&conv1x1_forward(&input, &weights, &t).unwrap(), &proj)
                },
                &bias.data,
            ),
        ));
    }
    CheckReport {
        name: "conv1x1".into(),
        cases,
        max_rel_err: worst,
        tolerance: KERNEL_TOLERANCE,
    }
}

fn check_relu(cases: usize, rng: &mut ChaCha8Rng) -> CheckReport {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(4..40usize);
        // keep activations away from the kink at 0
        let mut input = rand_tensor(rng, &[n], -1.0, 1.0);
        for v in &mut input.data {
            if v.abs() < 2.0 * EPSILON {
                *v += 0.01 * v.signum().max(0.5);
            }
        }
        let proj = projection(rng, &[n]);
        let analytic = relu_backward(&input, &proj);
        let numeric = numerical_gradient(
            |x| {
                let t = Tensor::from_vec(&[n], x.to_vec()).unwrap();
                dot(&relu_forward(&t), &proj)
            },
            &input.data,
        );
        worst = worst.max(max_rel_err(&analytic.data, &numeric));
    }
    CheckReport {
        name: "relu".into(),
        cases,
        max_rel_err: worst,
        tolerance: KERNEL_TOLERANCE,
    }
}

fn check_cross_entropy(cases: usize, rng: &mut ChaCha8Rng) -> CheckReport {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let c = rng.random_range(2..6usize);
        let h = rng.random_range(2..5usize);
        let w = rng.random_range(2..5usize);
        let logits = rand_tensor(rng, &[c, h, w], -2.0, 2.0);
        let labels: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..c as u8)).collect();
        let mask: Vec<bool> = (0..h * w).map(|_| rng.random::<f64>() < 0.7).collect();
        let use_mask = rng.random::<bool>();
        let mask_opt = use_mask.then_some(&mask[..]);
        let r = cross_entropy(&logits, &labels, mask_opt).unwrap();
        if r.contributing == 0 {
            continue;
        }
        let numeric = numerical_gradient(
            |x| {
                let t = Tensor::from_vec(&[c, h, w], x.to_vec()).unwrap();
                cross_entropy(&t, &labels, mask_opt).unwrap().loss
            },
            &logits.data,
        );
        worst = worst.max(max_rel_err(&r.d_logits.data, &numeric));
    }
    CheckReport {
        name: "softmax_cross_entropy".into(),
        cases,
        max_rel_err: worst,
        tolerance: KERNEL_TOLERANCE,
    }
}

fn check_l2_normalize(cases: usize, rng: &mut ChaCha8Rng) -> CheckReport {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..6usize);
        let f = rng.random_range(2..8usize);
        // rows bounded away from zero norm
        let input = rand_tensor(rng, &[n, f], 0.2, 1.2);
        let proj = projection(rng, &[n, f]);
        let analytic = l2_normalize_rows_backward(&input, &proj).unwrap();
        let numeric = numerical_gradient(
            |x| {
                let t = Tensor::from_vec(&[n, f], x.to_vec()).unwrap();
                dot(&l2_normalize_rows(&t).unwrap(), &proj)
            },
            &input.data,
        );
        worst = worst.max(max_rel_err(&analytic.data, &numeric));
    }
    CheckReport {
        name: "l2_normalize_rows".into(),
        cases,
        max_rel_err: worst,
        tolerance: KERNEL_TOLERANCE,
    }
}

fn smooth_triplet_instance(
    rng: &mut ChaCha8Rng,
    mode: NegativeMode,
) -> (Tensor, LabelMap, crate::regularizers::CategoryCenters, TripletConfig) {
    let f = rng.random_range(3..6usize);
    let h = rng.random_range(2..5usize);
    let w = rng.random_range(2..5usize);
    let c_n = 3;
    let cfg = TripletConfig {
        margin: 0.2,
        negative_mode: mode,
    };
    let labels = LabelMap::new(
        w,
        h,
        (0..h * w).map(|_| rng.random_range(0..c_n as u8)).collect(),
    )
    .unwrap();
    let center_labels = LabelMap::new(w, h, (0..h * w).map(|i| (i % c_n) as u8).collect()).unwrap();
    loop {
        let center_feats = rand_tensor(rng, &[f, h, w], 0.2, 1.2);
        let centers = match compute_centers(c_n, [(&center_feats, &center_labels)]) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let features = rand_tensor(rng, &[f, h, w], 0.3, 2.0);
        if crate::regularizers::instance_is_smooth(&features, &labels, &centers, &cfg) {
            return (features, labels, centers, cfg);
        }
    }
}

fn check_triplet(cases: usize, rng: &mut ChaCha8Rng, mode: NegativeMode) -> CheckReport {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (features, labels, centers, cfg) = smooth_triplet_instance(rng, mode);
        let (_, analytic) = triplet_loss(&features, &labels, &centers, &cfg).unwrap();
        let shape = features.shape.clone();
        let numeric = numerical_gradient(
            |x| {
                let t = Tensor::from_vec(&shape, x.to_vec()).unwrap();
                triplet_loss(&t, &labels, &centers, &cfg).unwrap().0
            },
            &features.data,
        );
        worst = worst.max(max_rel_err(&analytic.data, &numeric));
    }
    CheckReport {
        name: match mode {
            NegativeMode::Hardest => "triplet_loss_hardest".into(),
            NegativeMode::All => "triplet_loss_all".into(),
        },
        cases,
        max_rel_err: worst,
        tolerance: KERNEL_TOLERANCE,
    }
}

fn check_consistency(cases: usize, rng: &mut ChaCha8Rng) -> CheckReport {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let c = rng.random_range(2..6usize);
        let h = rng.random_range(2..5usize);
        let w = rng.random_range(2..5usize);
        let logits = rand_tensor(rng, &[c, h, w], -2.0, 2.0);
        let pseudo = PseudoLabelImage {
            labels: LabelMap::new(
                w,
                h,
                (0..h * w).map(|_| rng.random_range(0..c as u8)).collect(),
            )
            .unwrap(),
            confidence: (0..h * w).map(|_| rng.random()).collect(),
            valid: (0..h * w).map(|_| rng.random::<f64>() < 0.7).collect(),
        };
        if !pseudo.valid.iter().any(|&v| v) {
            continue;
        }
        let (_, analytic) = consistency_loss(&pseudo, &logits).unwrap();
        let numeric = numerical_gradient(
            |x| {
                let t = Tensor::from_vec(&[c, h, w], x.to_vec()).unwrap();
                consistency_loss(&pseudo, &t).unwrap().0
            },
            &logits.data,
        );
        worst = worst.max(max_rel_err(&analytic.data, &numeric));
    }
    CheckReport {
        name: "consistency_loss".into(),
        cases,
        max_rel_err: worst,
        tolerance: KERNEL_TOLERANCE,
    }
}

fn check_full_model(rng: &mut ChaCha8Rng) -> CheckReport {
    let model = SegModel::init(
        ModelConfig {
            in_channels: 3,
            hidden_channels: 4,
            feature_channels: 4,
            num_classes: 4,
        },
        rng.random(),
    )
    .expect("valid config");
    let (h, w) = (8, 8);
    let input = rand_tensor(rng, &[3, h, w], 0.0, 1.0);
    let labels: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..4u8)).collect();
    let trace = model.forward_trace(&input).unwrap();
    let ce = cross_entropy(&trace.logits, &labels, None).unwrap();
    let back = model.backward(&trace, &ce.d_logits, None, true).unwrap();
    let analytic = back.d_input.unwrap();

    // Sweep a deterministic subset of input components.
    let mut xs = input.data.clone();
    let mut worst: f64 = 0.0;
    for i in (0..xs.len()).step_by(5) {
        let orig = xs[i];
        xs[i] = orig + EPSILON;
        let fp = {
            let t = Tensor::from_vec(&[3, h, w], xs.clone()).unwrap();
            let (_, logits) = model.forward(&t).unwrap();
            cross_entropy(&logits, &labels, None).unwrap().loss
        };
        xs[i] = orig - EPSILON;
        let fm = {
            let t = Tensor::from_vec(&[3, h, w], xs.clone()).unwrap();
            let (_, logits) = model.forward(&t).unwrap();
            cross_entropy(&logits, &labels, None).unwrap().loss
        };
        xs[i] = orig;
        let num = (fp - fm) / (2.0 * EPSILON);
        let ana = analytic.data[i];
        worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(REL_FLOOR));
    }
    CheckReport {
        name: "full_model_cross_entropy".into(),
        cases: 1,
        max_rel_err: worst,
        tolerance: FULL_MODEL_TOLERANCE,
    }
}

/// Run every finite-difference suite.
pub fn run_all(cases_per_kernel: usize, seed: u64) -> Vec<CheckReport> {
    let mut rng = stream_rng(seed, &[0xF1D]);
    vec![
        check_conv2d(cases_per_kernel, &mut rng),
        check_conv1x1(cases_per_kernel, &mut rng),
        check_relu(cases_per_kernel, &mut rng),
        check_cross_entropy(cases_per_kernel, &mut rng),
        check_l2_normalize(cases_per_kernel, &mut rng),
        check_triplet(cases_per_kernel, &mut rng, NegativeMode::Hardest),
        check_triplet(cases_per_kernel, &mut rng, NegativeMode::All),
        check_consistency(cases_per_kernel, &mut rng),
        check_full_model(&mut rng),
    ]
}
