//! Coarse-alignment training, the iterative self-training steps, and the
//! full pipeline driver.
//!
//! Pseudo-labels and category centers inside step `i` are computed from the
//! frozen previous model before the step's training loop begins; the model
//! being optimized never feeds them. All randomness derives from
//! (seed, step index, iteration), so toggling one component does not
//! perturb another's draws, and reruns are bit-identical.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::common::LabelMap;
use crate::datagen::LoadedSplit;
use crate::imgproc::{color_jitter, photometric_align, RgbImage};
use crate::regularizers::{
    compute_centers, consistency_loss, generate_pseudo_labels, triplet_loss, CategoryCenters,
    PseudoLabelSet,
};
use crate::rng::{stream, stream_rng};
use crate::segmodel::{image_to_tensor, SegModel};
use crate::tensorcore::{cross_entropy, sgd_step, Tensor};
use crate::{Error, Result};

use super::config::TrainingConfig;
use super::eval::{evaluate, EvalResult};

/// The three splits a pipeline run consumes.
pub struct Datasets {
    pub source: LoadedSplit,
    pub target_train: LoadedSplit,
    pub target_eval: LoadedSplit,
    /// Clean target-train images as normalized tensors.
    target_tensors: Vec<Tensor>,
}

impl Datasets {
    pub fn new(
        source: LoadedSplit,
        target_train: LoadedSplit,
        target_eval: LoadedSplit,
    ) -> Result<Self> {
        if source.is_empty() || target_train.is_empty() {
            return Err(Error::EmptyInput("training split"));
        }
        if source.labels.is_none() {
            return Err(Error::Config("source manifest must carry labels".into()));
        }
        if target_eval.labels.is_none() {
            return Err(Error::Config("eval manifest must carry labels".into()));
        }
        let target_tensors = target_train.images.iter().map(image_to_tensor).collect();
        Ok(Self {
            source,
            target_train,
            target_eval,
            target_tensors,
        })
    }

    pub fn load(source: &Path, target_train: &Path, target_eval: &Path) -> Result<Self> {
        Self::new(
            LoadedSplit::load(source)?,
            LoadedSplit::load(target_train)?,
            LoadedSplit::load(target_eval)?,
        )
    }

    fn source_labels(&self) -> &[LabelMap] {
        self.source.labels.as_ref().expect("validated")
    }

    pub fn num_categories(&self) -> usize {
        self.source.manifest.num_categories
    }
}

/// Per-step summary written to the report stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub mean_seg_loss: f64,
    pub mean_triplet_loss: f64,
    pub mean_consistency_loss: f64,
    pub valid_pseudo_fraction: Vec<f64>,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

fn scaled(mut t: Tensor, k: f64) -> Tensor {
    t.scale(k);
    t
}

/// Draws for one training iteration, taken in a fixed order so that
/// component toggles never shift the stream.
struct IterDraws {
    src_idx: usize,
    ref_idx: usize,
    src_jitter_seed: u64,
    tgt_idx: usize,
    tgt_jitter_seed: u64,
}

fn iteration_draws(config: &TrainingConfig, step: usize, iter: usize, data: &Datasets) -> IterDraws {
    let mut rng = stream_rng(config.seed, &[stream::TRAIN_ITER, step as u64, iter as u64]);
    IterDraws {
        src_idx: rng.random_range(0..data.source.len()),
        ref_idx: rng.random_range(0..data.target_train.len()),
        src_jitter_seed: rng.random(),
        tgt_idx: rng.random_range(0..data.target_train.len()),
        tgt_jitter_seed: rng.random(),
    }
}

/// Alignment + jitter for one source image against a sampled reference.
/// Alignment happens online per use; nothing is cached.
fn augment_source(
    config: &TrainingConfig,
    data: &Datasets,
    draws: &IterDraws,
) -> RgbImage {
    let src = &data.source.images[draws.src_idx];
    let aligned = if config.toggles.use_gpa {
        photometric_align(src, &data.target_train.images[draws.ref_idx], config.beta)
    } else {
        src.clone()
    };
    color_jitter(&aligned, &config.jitter.with_seed(draws.src_jitter_seed))
}

/// Step 0: train the initial model on aligned, jittered source images with
/// the segmentation loss only.
pub fn step0_coarse(config: &TrainingConfig, data: &Datasets) -> Result<(SegModel, f64)> {
    config.validate()?;
    if config.model.num_classes != data.num_categories() {
        return Err(Error::Config(format!(
            "model has {} classes but the benchmark has {} categories",
            config.model.num_classes,
            data.num_categories()
        )));
    }
    let mut model = SegModel::init(config.model, config.seed)?;
    let schedule = config.step0_schedule();
    let mut seg_sum = 0.0;
    for iter in 0..config.iters_per_step {
        let draws = iteration_draws(config, 0, iter, data);
        let img = augment_source(config, data, &draws);
        let x = image_to_tensor(&img);
        let trace = model.forward_trace(&x)?;
        let ce = cross_entropy(&trace.logits, &data.source_labels()[draws.src_idx].data, None)?;
        seg_sum += ce.loss;
        let back = model.backward(
            &trace,
            &scaled(ce.d_logits, config.loss_weights.seg),
            None,
            false,
        )?;
        model.accumulate_grads(&back.grads);
        sgd_step(model.params_mut(), &schedule, iter);
    }
    Ok((model, seg_sum / config.iters_per_step as f64))
}

/// Per-step loss means.
pub struct StepStats {
    pub mean_seg_loss: f64,
    pub mean_triplet_loss: f64,
    pub mean_consistency_loss: f64,
    pub valid_pseudo_fraction: Vec<f64>,
}

/// One self-training step: pseudo-labels and centers from the frozen
/// previous model, then `U` iterations minimizing the summed losses.
pub fn step_k(
    prev: &SegModel,
    config: &TrainingConfig,
    data: &Datasets,
    step_index: usize,
) -> Result<(SegModel, StepStats)> {
    assert!(step_index >= 1, "step 0 is the coarse step");
    // (1) pseudo labels from the frozen model on clean target images;
    // thresholds span the whole target set and stay fixed within the step.
    let pseudo: PseudoLabelSet =
        generate_pseudo_labels(prev, &data.target_tensors, &config.thresholds)?;

    // (2) category centers from the frozen model's features over the
    // aligned source set; frozen within the step, no gradient into them.
    let centers: Option<CategoryCenters> = if config.toggles.use_ctl {
        Some(source_centers(prev, config, data, step_index)?)
    } else {
        None
    };

    let mut model = prev.clone();
    // Optimizer state restarts each step along with the schedule, so a run
    // resumed from a step-boundary checkpoint matches the uninterrupted one.
    for p in model.params_mut() {
        p.momentum_buf.fill(0.0);
        p.zero_grad();
    }
    let schedule = config.finetune_schedule();
    let n_iters = config.iters_per_step;
    let mut seg_sum = 0.0;
    let mut triplet_sum = 0.0;
    let mut cst_sum = 0.0;
    for iter in 0..n_iters {
        let draws = iteration_draws(config, step_index, iter, data);

        // source pass: segmentation + (optionally) triplet on features
        let src_img = augment_source(config, data, &draws);
        let x_src = image_to_tensor(&src_img);
        let trace_src = model.forward_trace(&x_src)?;
        let src_labels = &data.source_labels()[draws.src_idx];
        let ce_src = cross_entropy(&trace_src.logits, &src_labels.data, None)?;
        seg_sum += ce_src.loss;
        let d_feat = match &centers {
            Some(centers) => {
                let (l_trip, grad) =
                    triplet_loss(&trace_src.features, src_labels, centers, &config.triplet)?;
                triplet_sum += l_trip;
                Some(scaled(grad, config.loss_weights.triplet))
            }
            None => None,
        };
        let back_src = model.backward(
            &trace_src,
            &scaled(ce_src.d_logits, config.loss_weights.seg),
            d_feat.as_ref(),
            false,
        )?;

        // target pass on the clean image: self-training segmentation loss
        // over valid pseudo-labels
        let pl = &pseudo.images[draws.tgt_idx];
        let x_tgt = &data.target_tensors[draws.tgt_idx];
        let trace_tgt = model.forward_trace(x_tgt)?;
        let ce_tgt = cross_entropy(&trace_tgt.logits, &pl.labels.data, Some(&pl.valid))?;
        seg_sum += ce_tgt.loss;
        let back_tgt = model.backward(
            &trace_tgt,
            &scaled(ce_tgt.d_logits, config.loss_weights.seg),
            None,
            false,
        )?;

        // target pass on the jittered image: consistency against the clean
        // image's pseudo-labels
        let back_cst = if config.toggles.use_tcr {
            let jittered = color_jitter(
                &data.target_train.images[draws.tgt_idx],
                &config.jitter.with_seed(draws.tgt_jitter_seed),
            );
            let x_j = image_to_tensor(&jittered);
            let trace_j = model.forward_trace(&x_j)?;
            let (l_cst, d_logits) = consistency_loss(pl, &trace_j.logits)?;
            cst_sum += l_cst;
            Some(model.backward(
                &trace_j,
                &scaled(d_logits, config.loss_weights.consistency),
                None,
                false,
            )?)
        } else {
            None
        };

        model.accumulate_grads(&back_src.grads);
        model.accumulate_grads(&back_tgt.grads);
        if let Some(b) = &back_cst {
            model.accumulate_grads(&b.grads);
        }
        sgd_step(model.params_mut(), &schedule, iter);
    }

    let stats = StepStats {
        mean_seg_loss: seg_sum / n_iters as f64,
        mean_triplet_loss: triplet_sum / n_iters as f64,
        mean_consistency_loss: cst_sum / n_iters as f64,
        valid_pseudo_fraction: pseudo.valid_fraction_per_category(),
    };
    Ok((model, stats))
}

/// Features of the aligned source set under the frozen model, reduced to
/// per-category centers.
fn source_centers(
    prev: &SegModel,
    config: &TrainingConfig,
    data: &Datasets,
    step_index: usize,
) -> Result<CategoryCenters> {
    let n = data.source.len();
    let features: Vec<Result<Tensor>> = crate::par::map_indexed(n, |i| {
        let mut rng = stream_rng(
            config.seed,
            &[stream::CENTER_PASS, step_index as u64, i as u64],
        );
        let ref_idx = rng.random_range(0..data.target_train.len());
        let img = if config.toggles.use_gpa {
            photometric_align(
                &data.source.images[i],
                &data.target_train.images[ref_idx],
                config.beta,
            )
        } else {
            data.source.images[i].clone()
        };
        let (feat, _) = prev.forward(&image_to_tensor(&img))?;
        Ok(feat)
    });
    let mut collected = Vec::with_capacity(n);
    for f in features {
        collected.push(f?);
    }
    compute_centers(
        data.num_categories(),
        collected.iter().zip(data.source_labels().iter()),
    )
}

/// Final model plus one report per executed step.
pub struct PipelineOutput {
    pub model: SegModel,
    pub reports: Vec<StepReport>,
}

fn checkpoint_path(out_dir: &Path, step: usize) -> std::path::PathBuf {
    out_dir.join(format!("step_{step:03}.ckpt"))
}

/// Run the full pipeline: the coarse step plus `k_steps − 1` self-training
/// steps, evaluating and (when `out_dir` is given) checkpointing each step.
///
/// With `resume`, steps whose checkpoints already exist under `out_dir` are
/// loaded instead of retrained; because per-step randomness derives from
/// (seed, step, iteration) and optimizer state restarts each step, a
/// resumed run reproduces the uninterrupted run bit for bit.
pub fn run_pipeline(
    config: &TrainingConfig,
    data: &Datasets,
    out_dir: Option<&Path>,
    resume: bool,
) -> Result<PipelineOutput> {
    config.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {dir:?}"), e))?;
    }
    let mut reports = Vec::new();

    let mut completed: Option<(usize, SegModel)> = None;
    if resume {
        if let Some(dir) = out_dir {
            for step in (0..config.k_steps).rev() {
                let path = checkpoint_path(dir, step);
                if path.is_file() {
                    completed = Some((step, SegModel::load_checkpoint(&path)?));
                    break;
                }
            }
        }
    }

    let (start_step, mut model) = match completed {
        Some((step, model)) => (step + 1, model),
        None => {
            let (model, seg_loss) = step0_coarse(config, data)?;
            let eval = evaluate(&model, &data.target_eval)?;
            let report = StepReport {
                step: 0,
                mean_seg_loss: seg_loss,
                mean_triplet_loss: 0.0,
                mean_consistency_loss: 0.0,
                valid_pseudo_fraction: vec![0.0; data.num_categories()],
                per_class_iou: eval.per_class_iou.clone(),
                miou: eval.miou,
            };
            if let Some(dir) = out_dir {
                model.save_checkpoint(&checkpoint_path(dir, 0))?;
                append_report(dir, &report)?;
            }
            reports.push(report);
            (1, model)
        }
    };

    for step in start_step..config.k_steps {
        let (next, stats) = step_k(&model, config, data, step)
            .map_err(|e| Error::Config(format!("self-training step {step}: {e}")))?;
        model = next;
        let eval: EvalResult = evaluate(&model, &data.target_eval)?;
        let report = StepReport {
            step,
            mean_seg_loss: stats.mean_seg_loss,
            mean_triplet_loss: stats.mean_triplet_loss,
            mean_consistency_loss: stats.mean_consistency_loss,
            valid_pseudo_fraction: stats.valid_pseudo_fraction,
            per_class_iou: eval.per_class_iou.clone(),
            miou: eval.miou,
        };
        if let Some(dir) = out_dir {
            model.save_checkpoint(&checkpoint_path(dir, step))?;
            append_report(dir, &report)?;
        }
        reports.push(report);
    }

    Ok(PipelineOutput { model, reports })
}

fn append_report(dir: &Path, report: &StepReport) -> Result<()> {
    use std::io::Write;
    let path = dir.join("reports.jsonl");
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(format!("open {path:?}"), e))?;
    let line = serde_json::to_string(report)
        .map_err(|e| Error::format(&path, format!("serialize report: {e}")))?;
    writeln!(f, "{line}").map_err(|e| Error::io(format!("write {path:?}"), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_benchmark, BenchmarkSpec, SceneSpec};

    fn tiny_benchmark(dir: &Path) -> Datasets {
        let spec = BenchmarkSpec {
            scene: SceneSpec {
                num_categories: 4,
                shapes_per_image: 5,
                width: 16,
                height: 16,
            },
            num_source: 12,
            num_target_train: 8,
            num_target_eval: 4,
            ..BenchmarkSpec::default()
        };
        let paths = generate_benchmark(&spec, dir).unwrap();
        Datasets::load(&paths.source, &paths.target_train, &paths.target_eval).unwrap()
    }

    fn tiny_config() -> TrainingConfig {
        let mut cfg = TrainingConfig::default();
        cfg.k_steps = 2;
        cfg.iters_per_step = 30;
        cfg.model.num_classes = 4;
        cfg.model.hidden_channels = 6;
        cfg.model.feature_channels = 6;
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn step0_is_bit_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_benchmark(dir.path());
        let cfg = tiny_config();
        let (a, _) = step0_coarse(&cfg, &data).unwrap();
        let (b, _) = step0_coarse(&cfg, &data).unwrap();
        for (x, y) in a.params().iter().zip(b.params()) {
            let xb: Vec<u64> = x.value.data.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.value.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn gpa_toggle_reduces_to_jittered_source_training() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_benchmark(dir.path());
        let mut cfg = tiny_config();
        cfg.toggles.use_gpa = false;
        let (model, loss) = step0_coarse(&cfg, &data).unwrap();
        assert!(loss.is_finite());
        assert!(model.params().iter().all(|p| p.value.all_finite()));
    }

    #[test]
    fn full_pipeline_produces_reports_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_benchmark(dir.path());
        let cfg = tiny_config();
        let out = dir.path().join("run");
        let result = run_pipeline(&cfg, &data, Some(&out), false).unwrap();
        assert_eq!(result.reports.len(), 2);
        assert!(out.join("step_000.ckpt").is_file());
        assert!(out.join("step_001.ckpt").is_file());
        assert!(out.join("reports.jsonl").is_file());
        assert!(result.reports.iter().all(|r| (0.0..=1.0).contains(&r.miou)));
        // step indices are consecutive
        for (i, r) in result.reports.iter().enumerate() {
            assert_eq!(r.step, i);
        }
    }

    #[test]
    fn resume_reproduces_uninterrupted_run_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_benchmark(dir.path());
        let cfg = tiny_config();

        let full_out = dir.path().join("full");
        let full = run_pipeline(&cfg, &data, Some(&full_out), false).unwrap();

        // pretend the run died after step 0: keep only step_000.ckpt
        let resumed_out = dir.path().join("resumed");
        std::fs::create_dir_all(&resumed_out).unwrap();
        std::fs::copy(
            full_out.join("step_000.ckpt"),
            resumed_out.join("step_000.ckpt"),
        )
        .unwrap();
        let resumed = run_pipeline(&cfg, &data, Some(&resumed_out), true).unwrap();

        let a = std::fs::read(full_out.join("step_001.ckpt")).unwrap();
        let b = std::fs::read(resumed_out.join("step_001.ckpt")).unwrap();
        assert_eq!(a, b, "resumed checkpoint differs from uninterrupted run");
        assert_eq!(resumed.reports.len(), 1, "only the remaining step is retrained");
    }

    #[test]
    fn pure_self_training_step_runs_without_regularizers() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_benchmark(dir.path());
        let mut cfg = tiny_config();
        cfg.toggles.use_ctl = false;
        cfg.toggles.use_tcr = false;
        let (t0, _) = step0_coarse(&cfg, &data).unwrap();
        let (t1, stats) = step_k(&t0, &cfg, &data, 1).unwrap();
        assert_eq!(stats.mean_triplet_loss, 0.0);
        assert_eq!(stats.mean_consistency_loss, 0.0);
        assert!(t1.params().iter().all(|p| p.value.all_finite()));
    }

    #[test]
    fn empty_split_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BenchmarkSpec {
            num_source: 2,
            num_target_train: 2,
            num_target_eval: 1,
            scene: SceneSpec {
                num_categories: 3,
                shapes_per_image: 2,
                width: 8,
                height: 8,
            },
            ..BenchmarkSpec::default()
        };
        let paths = generate_benchmark(&spec, dir.path()).unwrap();
        let source = LoadedSplit::load(&paths.source).unwrap();
        let mut empty = LoadedSplit::load(&paths.target_train).unwrap();
        empty.images.clear();
        let eval = LoadedSplit::load(&paths.target_eval).unwrap();
        assert!(Datasets::new(source, empty, eval).is_err());
    }
}
