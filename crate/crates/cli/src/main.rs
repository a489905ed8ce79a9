use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use contrail_core::hough::LineExtraction;
use contrail_core::ingest::{
    compute_btd, load_scene, normalize, pair_with_mask, read_manifest, write_manifest, Split,
};
use contrail_core::losses::{HoughParams, LossId};
use contrail_core::pipeline::{
    diagnose_hough, evaluate, plot_metrics, predict, train, DiagnoseConfig, PredictionSource,
    RunConfig,
};
use contrail_core::synthetic::{synthetic_dataset, SyntheticConfig};
use contrail_core::{Error, Result};

/// Contrail segmentation with ResUNet and the Hough-space SR loss.
#[derive(Parser, Debug)]
#[command(name = "contrail", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a two-band scene and its label mask into a normalized training scene.
    Ingest(IngestArgs),
    /// Train a model described by a run file.
    Train(TrainArgs),
    /// Per-scene IoU of a checkpoint on a manifest.
    Evaluate(EvaluateArgs),
    /// Segment one image, writing a mask and a red overlay.
    Predict(PredictArgs),
    /// Six-panel Hough-space comparison of a target mask and a prediction.
    DiagnoseHough(DiagnoseArgs),
    /// Plot train/eval IoU curves from one or more metrics logs.
    PlotMetrics(PlotArgs),
    /// Write a synthetic contrail dataset and its manifest.
    Synthesize(SynthesizeArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// NetCDF file with CMI_Cnn variables, or a directory of Cnn.btdr rasters.
    #[arg(long)]
    scene: PathBuf,
    /// 8- or 16-bit grayscale label mask.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    scene_id: String,
    #[arg(long, default_value = "train")]
    split: Split,
    /// Shorter-wavelength band (the subtrahend).
    #[arg(long, default_value_t = 13)]
    short_band: u8,
    #[arg(long, default_value_t = 15)]
    long_band: u8,
    #[arg(long, default_value_t = 2.0)]
    lo_percentile: f64,
    #[arg(long, default_value_t = 98.0)]
    hi_percentile: f64,
    /// Directory receiving the scene files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Manifest to create or extend with the new scene.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML run file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    loss: Option<LossId>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Continue from the newest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// `train`, `eval` or `all`.
    #[arg(long, default_value = "eval")]
    split: String,
    /// Where to write the per-scene table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    /// Target mask image.
    #[arg(long)]
    target: PathBuf,
    /// Prediction mask or probability image.
    #[arg(long, conflicts_with_all = ["checkpoint", "image"])]
    prediction: Option<PathBuf>,
    /// Checkpoint producing the prediction from `--image`.
    #[arg(long, requires = "image")]
    checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    image: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 180)]
    n_theta: usize,
    #[arg(long, default_value_t = 0.25)]
    tau: f64,
    #[arg(long, default_value_t = 20.0)]
    beta: f64,
    /// Minimum normalized vote density of a detected line.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Metrics logs; each becomes one run in the legend.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, default_value = "iou.svg")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    train: usize,
    #[arg(long, default_value_t = 10)]
    eval: usize,
    #[arg(long, default_value_t = 320)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let (short, long) = load_scene(&args.scene, args.short_band, args.long_band)?;
    let btd = compute_btd(&short, &long)?;
    let norm = normalize(&btd, args.lo_percentile, args.hi_percentile)?;
    let scene = pair_with_mask(norm.image.clone(), &args.mask, &args.scene_id, args.split)?;
    let entry = scene.save(&args.out_dir, Some(&norm))?;
    println!(
        "{}: {}x{}, {} contrail pixels",
        scene.scene_id,
        scene.image.nrows(),
        scene.image.ncols(),
        scene.foreground_pixels()
    );
    if let Some(manifest) = &args.manifest {
        let mut entries = if manifest.exists() {
            read_manifest(manifest)?
        } else {
            Vec::new()
        };
        entries.retain(|e| e.scene_id != entry.scene_id);
        entries.push(entry);
        write_manifest(manifest, &entries)?;
    }
    Ok(())
}

fn run_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.loss {
        cfg.loss = v;
    }
    if let Some(v) = args.steps {
        cfg.steps = Some(v);
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = &args.manifest {
        cfg.manifest = Some(v.clone());
    }
    if let Some(v) = &args.output_dir {
        cfg.output_dir = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = run_config(args)?;
    let outcome = train(&cfg, args.resume)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "step {}: train iou {:.4}, eval iou {:.4}",
            last.step, last.train_iou, last.eval_iou
        );
    }
    println!("checkpoint: {}", outcome.final_checkpoint.display());
    println!("metrics: {}", outcome.metrics_log.display());
    Ok(())
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let split = match args.split.as_str() {
        "all" => None,
        s => Some(s.parse::<Split>()?),
    };
    let report = evaluate(&args.checkpoint, &args.manifest, split, args.out.as_deref())?;
    print!("{}", report.to_table());
    Ok(())
}

fn predict_cmd(args: &PredictArgs) -> Result<()> {
    let out = predict(&args.checkpoint, &args.image, &args.out_dir)?;
    println!("mask: {}", out.mask.display());
    println!("overlay: {}", out.overlay.display());
    println!("contrail pixels: {}", out.foreground_pixels);
    Ok(())
}

fn diagnose_cmd(args: &DiagnoseArgs) -> Result<()> {
    let source = match (&args.prediction, &args.checkpoint, &args.image) {
        (Some(p), _, _) => PredictionSource::Mask(p.clone()),
        (None, Some(c), Some(i)) => PredictionSource::Checkpoint {
            checkpoint: c.clone(),
            image: i.clone(),
        },
        _ => {
            return Err(Error::InvalidArgument(
                "give --prediction, or --checkpoint with --image".into(),
            ))
        }
    };
    let cfg = DiagnoseConfig {
        hough: HoughParams {
            n_theta: args.n_theta,
            tau: args.tau,
            beta: args.beta,
            ..Default::default()
        },
        lines: LineExtraction {
            threshold: args.threshold,
            ..Default::default()
        },
    };
    let out = diagnose_hough(&args.target, &source, &cfg, &args.out_dir)?;
    println!("target lines: {}", out.target_lines);
    println!("prediction lines: {}", out.prediction_lines);
    println!("figure: {}", out.figure.display());
    Ok(())
}

fn synthesize(args: &SynthesizeArgs) -> Result<()> {
    let cfg = SyntheticConfig::sized(args.size, args.size);
    let scenes = synthetic_dataset(args.train, args.eval, &cfg, args.seed)?;
    let entries = scenes
        .iter()
        .map(|s| s.save(&args.out_dir, None))
        .collect::<Result<Vec<_>>>()?;
    let manifest = args.out_dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    println!("{} scenes, manifest {}", entries.len(), manifest.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::DiagnoseHough(a) => diagnose_cmd(a),
        Command::PlotMetrics(a) => {
            let out = plot_metrics(&a.logs, &a.out)?;
            println!("figure: {}", out.display());
            Ok(())
        }
        Command::Synthesize(a) => synthesize(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            log::debug!("{e:?}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
