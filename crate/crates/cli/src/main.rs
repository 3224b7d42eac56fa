//! `segadapt` — CLI for the coarse-to-fine domain-adaptation pipeline.
//!
//! Subcommands: `gen-data` (synthetic benchmark), `align` (photometric
//! alignment), `gamma-solve` (lightness exponent only), `train`, `eval`,
//! `ablate`, and `gradcheck`. Exit codes: 0 success, 1 internal error,
//! 2 usage or IO error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use segadapt_core::datagen::{
    generate_benchmark, read_ppm, write_ppm, BenchmarkSpec, LoadedSplit, SceneSpec,
};
use segadapt_core::imgproc::{photometric_align_detailed, rgb_to_lab, solve_gamma};
use segadapt_core::pipeline::{ablate, evaluate, run_pipeline, Datasets, RunConfig};
use segadapt_core::rng::{derive_seed, stream_rng};
use segadapt_core::segmodel::SegModel;
use segadapt_core::Error;

mod output;

use output::Printer;

/// Output-directory override; the only environment variable consulted.
const OUT_DIR_ENV: &str = "SEGADAPT_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "segadapt",
    version,
    about = "Coarse-to-fine domain adaptation for semantic segmentation at desk scale"
)]
struct Cli {
    /// Worker threads for data-parallel sections; 1 keeps everything sequential
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Emit machine-readable JSON on stdout
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-domain benchmark
    GenData(GenDataArgs),
    /// Photometrically align a source image (or a manifest of them) to a reference
    Align(AlignArgs),
    /// Solve the lightness exponent between two images and print it
    GammaSolve(GammaSolveArgs),
    /// Run the training pipeline described by a config file
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled manifest
    Eval(EvalArgs),
    /// Run the component ablation over several seeds
    Ablate(AblateArgs),
    /// Run every finite-difference gradient suite
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for the three splits
    #[arg(long)]
    out: PathBuf,
    /// Generation seed
    #[arg(long)]
    seed: u64,
    /// Square image size in pixels
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Number of categories including background
    #[arg(long, default_value_t = 5)]
    categories: usize,
    /// Shapes painted per scene
    #[arg(long, default_value_t = 7)]
    shapes: usize,
    /// Source-split image count
    #[arg(long, default_value_t = 200)]
    num_source: usize,
    /// Target-train-split image count
    #[arg(long, default_value_t = 100)]
    num_target: usize,
    /// Target-eval-split image count
    #[arg(long, default_value_t = 50)]
    num_eval: usize,
}

#[derive(Args)]
struct AlignArgs {
    /// Source image (PPM); single-image mode
    #[arg(long, conflicts_with = "src_manifest", requires = "reference")]
    src: Option<PathBuf>,
    /// Reference image (PPM); single-image mode
    #[arg(long = "ref", conflicts_with = "src_manifest")]
    reference: Option<PathBuf>,
    /// Output image path; single-image mode
    #[arg(long, conflicts_with = "src_manifest")]
    out: Option<PathBuf>,
    /// Manifest of source images; batch mode
    #[arg(long, requires_all = ["ref_manifest", "out_dir"])]
    src_manifest: Option<PathBuf>,
    /// Manifest of reference images to sample from; batch mode
    #[arg(long)]
    ref_manifest: Option<PathBuf>,
    /// Output directory; batch mode
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Regularization weight on the exponent
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    /// Seed for reference sampling in batch mode
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GammaSolveArgs {
    /// Source image (PPM)
    #[arg(long)]
    src: PathBuf,
    /// Reference image (PPM)
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Regularization weight on the exponent
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run config (manifests + training scalars)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoints and reports (overrides config and env)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override (wins over the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from the newest step checkpoint in the output directory
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled manifest to evaluate on
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// JSON run config (manifests + training scalars)
    #[arg(long)]
    config: PathBuf,
    /// Number of seeds per variant
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    /// First seed; runs use seed-base, seed-base+1, ...
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Directory for ablation.csv and ablation.json (overrides config and env)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random instances per kernel
    #[arg(long, default_value_t = 20)]
    cases: usize,
    /// Seed for the random instances
    #[arg(long, default_value_t = 1234)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    #[cfg(feature = "parallel")]
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: building thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let printer = Printer::new(cli.json);
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args, &printer),
        Command::Align(args) => cmd_align(args, &printer),
        Command::GammaSolve(args) => cmd_gamma_solve(args, &printer),
        Command::Train(args) => cmd_train(args, &printer),
        Command::Eval(args) => cmd_eval(args, &printer),
        Command::Ablate(args) => cmd_ablate(args, &printer),
        Command::Gradcheck(args) => cmd_gradcheck(args, &printer),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 2 for usage/IO-category errors, 1 for internal ones.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Format { .. }
        | Error::MissingFile(_)
        | Error::Config(_)
        | Error::EmptyInput(_)
        | Error::InvalidDimensions(_) => 2,
        _ => 1,
    }
}

fn cmd_gen_data(args: GenDataArgs, printer: &Printer) -> Result<ExitCode, Error> {
    let mut spec = BenchmarkSpec {
        scene: SceneSpec {
            num_categories: args.categories,
            shapes_per_image: args.shapes,
            width: args.size,
            height: args.size,
        },
        num_source: args.num_source,
        num_target_train: args.num_target,
        num_target_eval: args.num_eval,
        seed: args.seed,
        ..BenchmarkSpec::default()
    };
    if args.categories != spec.source_profile.palette.len() {
        return Err(Error::Config(format!(
            "default palette covers {} categories; --categories {} needs a custom palette",
            spec.source_profile.palette.len(),
            args.categories
        )));
    }
    spec.seed = args.seed;
    let out = resolve_out_dir(Some(args.out), None)?;
    let paths = generate_benchmark(&spec, &out)?;
    printer.emit(
        &serde_json::json!({
            "source_manifest": paths.source,
            "target_train_manifest": paths.target_train,
            "target_eval_manifest": paths.target_eval,
        }),
        |v| {
            format!(
                "generated benchmark under {}\n  source:       {}\n  target-train: {}\n  target-eval:  {}",
                out.display(),
                v["source_manifest"].as_str().unwrap_or(""),
                v["target_train_manifest"].as_str().unwrap_or(""),
                v["target_eval_manifest"].as_str().unwrap_or("")
            )
        },
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_align(args: AlignArgs, printer: &Printer) -> Result<ExitCode, Error> {
    match (&args.src, &args.src_manifest) {
        (Some(src), None) => {
            let reference = args
                .reference
                .as_ref()
                .ok_or_else(|| Error::Config("--ref is required with --src".into()))?;
            let out = args
                .out
                .as_ref()
                .ok_or_else(|| Error::Config("--out is required with --src".into()))?;
            let src_img = read_ppm(src)?;
            let ref_img = read_ppm(reference)?;
            let (aligned, report) = photometric_align_detailed(&src_img, &ref_img, args.beta);
            write_ppm(out, &aligned)?;
            let sidecar = out.with_extension("json");
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Config(format!("serialize report: {e}")))?;
            std::fs::write(&sidecar, json + "\n")
                .map_err(|e| Error::io(format!("write {sidecar:?}"), e))?;
            printer.emit(&report, |r| {
                format!(
                    "aligned {} -> {} (gamma {:.6}, mean-L gap {:+.5})",
                    src.display(),
                    out.display(),
                    r.gamma,
                    r.mean_l_delta
                )
            });
            Ok(ExitCode::SUCCESS)
        }
        (None, Some(src_manifest)) => {
            let ref_manifest = args
                .ref_manifest
                .as_ref()
                .ok_or_else(|| Error::Config("--ref-manifest is required in batch mode".into()))?;
            let out_dir = args
                .out_dir
                .as_ref()
                .ok_or_else(|| Error::Config("--out-dir is required in batch mode".into()))?;
            let seed = args.seed.ok_or_else(|| {
                Error::Config("--seed is required in batch mode (reference sampling)".into())
            })?;
            let sources = LoadedSplit::load(src_manifest)?;
            let refs = LoadedSplit::load(ref_manifest)?;
            std::fs::create_dir_all(out_dir)
                .map_err(|e| Error::io(format!("create {out_dir:?}"), e))?;
            let mut successes = 0usize;
            for (i, img) in sources.images.iter().enumerate() {
                use rand::Rng;
                let mut rng = stream_rng(seed, &[0xA11, i as u64]);
                let ref_idx = rng.random_range(0..refs.images.len());
                let (aligned, _) = photometric_align_detailed(img, &refs.images[ref_idx], args.beta);
                write_ppm(&out_dir.join(format!("aligned_{i:04}.ppm")), &aligned)?;
                successes += 1;
            }
            printer.emit(
                &serde_json::json!({ "aligned": successes, "out_dir": out_dir }),
                |v| format!("aligned {} images into {}", v["aligned"], out_dir.display()),
            );
            Ok(ExitCode::SUCCESS)
        }
        _ => Err(Error::Config(
            "pass either --src/--ref/--out or --src-manifest/--ref-manifest/--out-dir".into(),
        )),
    }
}

fn cmd_gamma_solve(args: GammaSolveArgs, printer: &Printer) -> Result<ExitCode, Error> {
    use segadapt_core::imgproc::channel_histogram;
    let src = rgb_to_lab(&read_ppm(&args.src)?);
    let reference = rgb_to_lab(&read_ppm(&args.reference)?);
    let norm = |l: &[f64]| -> Vec<f64> { l.iter().map(|&v| v / 100.0).collect() };
    let hs = channel_histogram(&norm(&src.l), (0.0, 1.0))?;
    let hr = channel_histogram(&norm(&reference.l), (0.0, 1.0))?;
    let solution = solve_gamma(&hs, &hr, args.beta, 200, 1e-6);
    printer.emit(
        &serde_json::json!({
            "gamma": solution.gamma,
            "objective_value": solution.objective_value,
            "iterations": solution.iterations,
        }),
        |_| {
            format!(
                "gamma {:.6} (objective {:.3e}, {} iterations)",
                solution.gamma, solution.objective_value, solution.iterations
            )
        },
    );
    Ok(ExitCode::SUCCESS)
}

fn resolve_out_dir(flag: Option<PathBuf>, config_value: Option<&str>) -> Result<PathBuf, Error> {
    if let Some(p) = flag {
        return Ok(p);
    }
    if let Ok(env) = std::env::var(OUT_DIR_ENV) {
        if !env.is_empty() {
            return Ok(PathBuf::from(env));
        }
    }
    if let Some(c) = config_value {
        return Ok(PathBuf::from(c));
    }
    Err(Error::Config(format!(
        "no output directory: pass --out, set {OUT_DIR_ENV}, or put out_dir in the config"
    )))
}

fn load_datasets(config: &RunConfig, config_path: &Path) -> Result<Datasets, Error> {
    let base = config_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base.join(path)
        }
    };
    Datasets::load(
        &resolve(&config.source_manifest),
        &resolve(&config.target_train_manifest),
        &resolve(&config.target_eval_manifest),
    )
}

fn cmd_train(args: TrainArgs, printer: &Printer) -> Result<ExitCode, Error> {
    let mut config = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.training.seed = seed;
    }
    let out = resolve_out_dir(args.out, config.out_dir.as_deref())?;
    let data = load_datasets(&config, &args.config)?;
    let result = run_pipeline(&config.training, &data, Some(&out), args.resume)?;
    let final_miou = result.reports.last().map(|r| r.miou);
    printer.emit(
        &serde_json::json!({
            "out_dir": out,
            "steps": result.reports,
            "final_miou": final_miou,
        }),
        |v| {
            let mut text = String::new();
            for r in &result.reports {
                text.push_str(&format!(
                    "step {}: seg {:.4}  triplet {:.4}  consistency {:.4}  mIoU {:.4}\n",
                    r.step, r.mean_seg_loss, r.mean_triplet_loss, r.mean_consistency_loss, r.miou
                ));
            }
            text.push_str(&format!(
                "final mIoU {:.4} (checkpoints in {})",
                v["final_miou"].as_f64().unwrap_or(f64::NAN),
                out.display()
            ));
            text
        },
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs, printer: &Printer) -> Result<ExitCode, Error> {
    let model = SegModel::load_checkpoint(&args.checkpoint)?;
    let split = LoadedSplit::load(&args.manifest)?;
    let result = evaluate(&model, &split)?;
    printer.emit(&result, |r| {
        let mut text = String::new();
        for (c, iou) in r.per_class_iou.iter().enumerate() {
            match iou {
                Some(v) => text.push_str(&format!("class {c}: IoU {v:.4}\n")),
                None => text.push_str(&format!("class {c}: absent\n")),
            }
        }
        text.push_str(&format!("mIoU {:.4}", r.miou));
        text
    });
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(args: AblateArgs, printer: &Printer) -> Result<ExitCode, Error> {
    let config = RunConfig::from_file(&args.config)?;
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let data = load_datasets(&config, &args.config)?;
    let seeds: Vec<u64> = (0..args.seeds as u64)
        .map(|i| derive_seed(args.seed_base, &[0xAB1A7E, i]))
        .collect();
    let result = ablate(&config.training, &data, &seeds)?;
    if let Some(out) = args
        .out
        .map(Some)
        .unwrap_or_else(|| std::env::var(OUT_DIR_ENV).ok().map(PathBuf::from))
    {
        std::fs::create_dir_all(&out).map_err(|e| Error::io(format!("create {out:?}"), e))?;
        let csv_path = out.join("ablation.csv");
        std::fs::write(&csv_path, result.to_csv())
            .map_err(|e| Error::io(format!("write {csv_path:?}"), e))?;
        let json_path = out.join("ablation.json");
        let json = serde_json::to_string_pretty(&result)
            .map_err(|e| Error::Config(format!("serialize ablation: {e}")))?;
        std::fs::write(&json_path, json + "\n")
            .map_err(|e| Error::io(format!("write {json_path:?}"), e))?;
    }
    printer.emit(&result, |r| {
        let mut text = String::from("variant        mean mIoU (per-seed)\n");
        for (name, mean) in r.seed_means() {
            let per_seed: Vec<String> = r
                .rows
                .iter()
                .filter(|row| row.variant == name)
                .map(|row| format!("{:.4}", row.miou))
                .collect();
            text.push_str(&format!(
                "{name:<14} {mean:.4} ({})\n",
                per_seed.join(", ")
            ));
        }
        text.pop();
        text
    });
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs, printer: &Printer) -> Result<ExitCode, Error> {
    let reports = segadapt_core::gradcheck::run_all(args.cases, args.seed);
    let all_passed = reports.iter().all(|r| r.passed());
    printer.emit(&reports, |rs| {
        let mut text = String::new();
        for r in rs {
            text.push_str(&format!(
                "[{}] {:<26} cases {:>3}  max rel err {:.3e} (tol {:.0e})\n",
                if r.passed() { "PASS" } else { "FAIL" },
                r.name,
                r.cases,
                r.max_rel_err,
                r.tolerance
            ));
        }
        text.pop();
        text
    });
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
