//! `skelbench` command line: data generation, training, inference, evaluation,
//! the shift demonstration and classical thinning.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{gen_dataset, ingest_dir, png_files, DatagenError, DatasetSpec, ShapeMix};
use crate::mask::{load_png, save_png, shift_clips, shift_mask, BinaryMask};
use crate::metrics::{aggregate, evaluate_batch, evaluate_pair, AggregateReport, MatchConfig, MetricReport};
use crate::nn::{AdamConfig, LossConfig, LossMode};
use crate::thinning::{skeletonize, ThinningAlgo, ThinningVariant};
use crate::unet::{infer, load_model, save_model, train_pipeline_with, PipelineConfig, TrainEvent, UNetConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "skelbench", version, about = "Skeletonization benchmark: U-Net pipeline, F1 and M-CCORR")]
pub struct Cli {
    /// JSON object whose keys pre-populate the subcommand's flags; flags given
    /// on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic shape/skeleton dataset.
    Gen(GenArgs),
    /// Train a multi-stage U-Net pipeline.
    Train(TrainArgs),
    /// Skeletonize every PNG in a directory with a trained pipeline.
    Infer(InferArgs),
    /// Score predicted skeletons against ground truth.
    Eval(EvalArgs),
    /// Shift a skeleton and compare F1 with M-CCORR.
    ShiftDemo(ShiftDemoArgs),
    /// Classical skeletonization of a PNG or a directory of PNGs.
    Thin(ThinArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    ZhangSuen,
    MedialAxis,
}

impl From<Algo> for ThinningVariant {
    fn from(a: Algo) -> Self {
        match a {
            Algo::ZhangSuen => ThinningVariant::ZhangSuen,
            Algo::MedialAxis => ThinningVariant::MedialAxis,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Literal,
    Wcce,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ground-truth skeletonizer.
    #[arg(long, value_enum, default_value_t = Algo::ZhangSuen)]
    pub gt: Algo,
    /// Spur pruning length for the ground truth (0 disables).
    #[arg(long, default_value_t = 8)]
    pub prune: usize,
    /// Shape family ratios: ellipse-union,polygon,random-walk.
    #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.4, 0.2])]
    pub mix: Vec<f64>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Dataset directory with img/ and gt/ subdirectories.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub stages: u8,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Wcce)]
    pub loss: LossArg,
    /// Class weights: background,skeleton.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 25.0])]
    pub weights: Vec<f64>,
    /// U-Net depth (default: 4 for 256 px and larger images, 2 otherwise).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Filters at the first level (default: 64 for 256 px and larger images, 8 otherwise).
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model.sklb")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Largest translation searched by the correlation.
    #[arg(long, default_value_t = 64)]
    pub radius: usize,
    #[arg(long, default_value_t = 0.25)]
    pub min_overlap: f64,
    /// Where to write the JSON run report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ShiftDemoArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub dx: isize,
    #[arg(long, allow_hyphen_values = true)]
    pub dy: isize,
    #[arg(long, default_value_t = 64)]
    pub radius: usize,
    /// Optional side-by-side PNG: truth, a one-pixel gap, shifted copy.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ThinArgs {
    /// A PNG file or a directory of PNGs.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Algo::ZhangSuen)]
    pub algo: Algo,
    #[arg(long, default_value_t = 8)]
    pub prune: usize,
    /// Output file (file input) or directory (directory input).
    #[arg(long)]
    pub out: PathBuf,
}

/// Per-image and mean scores of one `eval` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub config: EvalConfigEcho,
    pub timings: Timings,
    pub images: Vec<ImageReport>,
    pub aggregate: AggregateReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfigEcho {
    pub pred: PathBuf,
    pub truth: PathBuf,
    pub matching: MatchConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_seconds: f64,
    pub compute_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub stem: String,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

/// Loss curves written next to a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub tool_version: String,
    pub unet: UNetConfig,
    pub pipeline: PipelineConfig,
    pub samples: usize,
    pub stages: Vec<Vec<f64>>,
    pub total_seconds: f64,
}

/// Path of the loss history written beside `model`.
pub fn history_path(model: &Path) -> PathBuf {
    model.with_extension("history.json")
}

/// Turns `--config` JSON into flags spliced in right after the subcommand name,
/// so later (explicit) occurrences override them.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(PathBuf::from(it.next().context("--config needs a file")?));
        } else if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&text).with_context(|| format!("{} is not a JSON object", path.display()))?;
    let mut flags = Vec::new();
    for (key, value) in obj {
        let flag = format!("--{}", key.trim_start_matches('-').replace('_', "-"));
        use serde_json::Value;
        let text = match value {
            Value::Bool(true) => {
                flags.push(OsString::from(flag));
                continue;
            }
            Value::Bool(false) | Value::Null => continue,
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            Value::Object(_) => bail!("config key `{key}` holds an object"),
        };
        flags.push(OsString::from(flag));
        flags.push(OsString::from(text));
    }
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 2)
        .unwrap_or(rest.len());
    rest.splice(sub..sub, flags);
    Ok(rest)
}

/// Applies `SKELBENCH_THREADS` (unset or 0: one worker per core).
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SKELBENCH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("SKELBENCH_THREADS must be a non-negative integer, got `{raw}`"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

/// Prints a usage error and exits with status 2, like clap's own parse errors.
fn usage_error(msg: String) -> ! {
    Cli::command().error(clap::error::ErrorKind::WrongNumberOfValues, msg).exit()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ShiftDemo(a) => cmd_shift_demo(a),
        Command::Thin(a) => cmd_thin(a),
    }
}

pub fn cmd_gen(a: GenArgs) -> Result<()> {
    if a.mix.len() != 3 {
        usage_error(format!("--mix takes three ratios, got {}", a.mix.len()));
    }
    let spec = DatasetSpec {
        count: a.count,
        size: a.size,
        seed: a.seed,
        mix: ShapeMix {
            ellipse_union: a.mix[0],
            polygon: a.mix[1],
            random_walk: a.mix[2],
        },
        gt: ThinningAlgo {
            variant: a.gt.into(),
            prune_length: a.prune,
        },
    };
    let manifest = gen_dataset(&spec, &a.out)?;
    println!(
        "wrote {} pairs ({}x{} px, seed {}) to {}",
        manifest.files.len(),
        a.size,
        a.size,
        a.seed,
        a.out.display()
    );
    Ok(())
}

pub fn cmd_train(a: TrainArgs) -> Result<()> {
    let start = Instant::now();
    if a.weights.len() != 2 {
        usage_error(format!("--weights takes two values, got {}", a.weights.len()));
    }
    let samples = ingest_dir(&a.data.join("img"), Some(&a.data.join("gt")))?;
    let size = samples[0].shape.height() as usize;
    if let Some(s) = samples
        .iter()
        .find(|s| s.shape.width() as usize != size || s.shape.height() as usize != size)
    {
        bail!(
            "`{}` is {}x{}; training needs square images of one size ({size}x{size})",
            s.stem,
            s.shape.height(),
            s.shape.width()
        );
    }
    let auto = UNetConfig::for_size(size);
    let unet = UNetConfig::new(
        a.depth.unwrap_or(auto.depth),
        a.base_channels.unwrap_or(auto.base_channels),
        size,
    );
    let cfg = PipelineConfig {
        n_stages: a.stages as usize,
        epochs: a.epochs,
        batch_size: a.batch,
        adam: AdamConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            ..AdamConfig::default()
        },
        loss: LossConfig {
            class_weights: [a.weights[0], a.weights[1]],
            mode: match a.loss {
                LossArg::Literal => LossMode::Literal,
                LossArg::Wcce => LossMode::StandardWcce,
            },
        },
        seed: a.seed,
    };
    unet.validate()?;
    cfg.validate()?;
    println!(
        "training {} stage(s) on {} pairs: depth {}, base channels {}, {}x{} px",
        cfg.n_stages,
        samples.len(),
        unet.depth,
        unet.base_channels,
        size,
        size
    );
    println!(
        "epochs {}, batch {}, lr {}, betas {}/{}, loss {}, weights [{}, {}], seed {}",
        cfg.epochs,
        cfg.batch_size,
        cfg.adam.lr,
        cfg.adam.beta1,
        cfg.adam.beta2,
        match cfg.loss.mode {
            LossMode::Literal => "literal",
            LossMode::StandardWcce => "wcce",
        },
        cfg.loss.class_weights[0],
        cfg.loss.class_weights[1],
        cfg.seed
    );
    let shapes: Vec<BinaryMask> = samples.iter().map(|s| s.shape.clone()).collect();
    let skeletons: Vec<BinaryMask> = samples
        .into_iter()
        .map(|s| s.skeleton.expect("ground truth requested"))
        .collect();
    let epochs = cfg.epochs;
    let (bundle, stages) = train_pipeline_with(&shapes, &skeletons, unet, &cfg, &mut |e| {
        if let TrainEvent::Epoch { stage, epoch, loss, .. } = e {
            println!("stage {stage} epoch {epoch}/{epochs} loss {loss:.4}");
        }
    })?;
    save_model(&bundle, &a.out)?;
    let log = TrainLog {
        tool_version: TOOL_VERSION.into(),
        unet,
        pipeline: cfg,
        samples: shapes.len(),
        stages,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    let hist = history_path(&a.out);
    std::fs::write(&hist, serde_json::to_string_pretty(&log)? + "\n")
        .with_context(|| format!("writing {}", hist.display()))?;
    println!("saved {} and {}", a.out.display(), hist.display());
    Ok(())
}

pub fn cmd_infer(a: InferArgs) -> Result<()> {
    let bundle = load_model(&a.model)?;
    let files = png_files(&a.input)?;
    if files.is_empty() {
        return Err(DatagenError::EmptyDirectory(a.input.clone()).into());
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let results: Vec<(String, Result<()>)> = files
        .into_par_iter()
        .map(|(stem, path)| {
            let r = (|| {
                let shape = load_png(&path)?;
                let skel = infer(&bundle, &shape)?;
                save_png(&skel, a.out.join(format!("{stem}.png")))?;
                Ok(())
            })();
            (stem, r)
        })
        .collect();
    let mut failed = 0;
    for (stem, r) in &results {
        if let Err(e) = r {
            eprintln!("{stem}: {e:#}");
            failed += 1;
        }
    }
    println!(
        "wrote {} of {} skeletons to {}",
        results.len() - failed,
        results.len(),
        a.out.display()
    );
    if failed > 0 {
        bail!("{failed} image(s) failed");
    }
    Ok(())
}

/// Pairs `pred_dir` and `truth_dir` by stem and scores every pair.
pub fn evaluate_dirs(pred_dir: &Path, truth_dir: &Path, matching: MatchConfig) -> Result<RunReport> {
    let start = Instant::now();
    let samples = ingest_dir(truth_dir, Some(pred_dir))?;
    let (stems, pairs): (Vec<String>, Vec<(BinaryMask, BinaryMask)>) = samples
        .into_iter()
        .map(|s| (s.stem, (s.shape, s.skeleton.expect("paired"))))
        .unzip();
    let loaded = start.elapsed();
    let reports = evaluate_batch(&pairs, &matching)?;
    let total = start.elapsed();
    let aggregate = aggregate(&reports);
    Ok(RunReport {
        tool_version: TOOL_VERSION.into(),
        config: EvalConfigEcho {
            pred: pred_dir.to_owned(),
            truth: truth_dir.to_owned(),
            matching,
        },
        timings: Timings {
            load_seconds: loaded.as_secs_f64(),
            compute_seconds: (total - loaded).as_secs_f64(),
            total_seconds: total.as_secs_f64(),
        },
        images: stems
            .into_iter()
            .zip(reports)
            .map(|(stem, metrics)| ImageReport { stem, metrics })
            .collect(),
        aggregate,
    })
}

pub fn cmd_eval(a: EvalArgs) -> Result<()> {
    let matching = MatchConfig::new(a.radius, a.min_overlap)?;
    let report = evaluate_dirs(&a.pred, &a.truth, matching)?;
    let g = &report.aggregate;
    println!("images     {}", g.count);
    println!("precision  {:.4}", g.precision);
    println!("recall     {:.4}", g.recall);
    println!("F1         {:.4}", g.f1);
    println!("M-CCORR    {:.4}", g.m_ccorr);
    if g.degenerate > 0.0 {
        println!("degenerate {:.4}", g.degenerate);
    }
    if let Some(path) = &a.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn cmd_shift_demo(a: ShiftDemoArgs) -> Result<()> {
    let truth = load_png(&a.truth)?;
    if shift_clips(&truth, a.dx, a.dy) {
        eprintln!("warning: the shift by ({}, {}) pushes foreground out of the frame", a.dx, a.dy);
    }
    let pred = shift_mask(&truth, a.dx, a.dy);
    let r = evaluate_pair(&truth, &pred, &MatchConfig::new(a.radius, 0.25)?)?;
    println!("shift      dx {} dy {}", a.dx, a.dy);
    println!("F1         {:.4}", r.f1);
    println!("M-CCORR    {:.4}", r.m_ccorr);
    if let Some(out) = &a.out {
        let (w, h) = (truth.width(), truth.height());
        let composite = BinaryMask::from_fn(2 * w + 1, h, |r, c| {
            let w = w as usize;
            if c < w {
                truth.get(r, c)
            } else if c > w {
                pred.get(r, c - w - 1)
            } else {
                false
            }
        });
        save_png(&composite, out)?;
    }
    Ok(())
}

pub fn cmd_thin(a: ThinArgs) -> Result<()> {
    let algo = ThinningAlgo {
        variant: a.algo.into(),
        prune_length: a.prune,
    };
    if a.input.is_dir() {
        let files = png_files(&a.input)?;
        if files.is_empty() {
            return Err(DatagenError::EmptyDirectory(a.input.clone()).into());
        }
        std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
        files.par_iter().try_for_each(|(stem, path)| -> Result<()> {
            let skel = skeletonize(&load_png(path)?, &algo);
            save_png(&skel, a.out.join(format!("{stem}.png")))?;
            Ok(())
        })?;
        println!("thinned {} images into {}", files.len(), a.out.display());
    } else {
        let skel = skeletonize(&load_png(&a.input)?, &algo);
        save_png(&skel, &a.out)?;
        println!("wrote {} ({} skeleton pixels)", a.out.display(), skel.count());
    }
    Ok(())
}
