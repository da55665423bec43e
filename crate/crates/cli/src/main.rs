//! `bfloss`: generate data, evaluate masks, check gradients, train and
//! compare losses. Results go to stdout as JSON; diagnostics go to stderr.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use bfloss::gradcheck::{self, CheckTarget};
use bfloss::grid::{load_mask, save_map};
use bfloss::losses::{LossParams, TrainLoss};
use bfloss::metrics::{self, DistanceMode};
use bfloss::synthgen::{self, ShapeKind, Texture};
use bfloss::trainer::{self, EpochRecord};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;

use config::{echo_config, read_json, resolve_out, ConfigError, ExperimentConfig, GenConfig};

#[derive(Parser)]
#[command(name = "bfloss", version, about = "Boundary-F1 loss toolkit for binary segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of image/mask pairs.
    Gen(GenArgs),
    /// Score a predicted mask against a ground-truth mask.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Train one model per loss on the same data and tabulate the results.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    edge_touch_fraction: Option<f64>,
    #[arg(long)]
    min_area: Option<f64>,
    #[arg(long)]
    max_area: Option<f64>,
    #[arg(long, value_enum)]
    texture: Option<TextureArg>,
    /// Comma-separated shape kinds.
    #[arg(long, value_delimiter = ',', value_parser = parse_shape)]
    shapes: Option<Vec<ShapeKind>>,
}

#[derive(Copy, Clone, ValueEnum)]
enum TextureArg {
    None,
    Gradient,
    Perlin,
}

impl From<TextureArg> for Texture {
    fn from(t: TextureArg) -> Self {
        match t {
            TextureArg::None => Texture::None,
            TextureArg::Gradient => Texture::Gradient,
            TextureArg::Perlin => Texture::Perlin,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Euclidean,
    Chebyshev,
}

impl From<ModeArg> for DistanceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Euclidean => DistanceMode::Euclidean,
            ModeArg::Chebyshev => DistanceMode::Chebyshev,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted mask (.pgm or .png; pixels >= 128 are foreground).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Boundary match distance; pixels closer than this count as matched.
    #[arg(long, default_value_t = 3.0)]
    theta_dist: f64,
    #[arg(long, value_enum, default_value = "euclidean")]
    mode: ModeArg,
    /// Specificity weight of the sensitivity-specificity score.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// bce, iou, dice, ss, bf1, combined or model.
    #[arg(long, value_parser = parse_target)]
    loss: CheckTarget,
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 20)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    theta0: Option<usize>,
    #[arg(long)]
    theta: Option<usize>,
    /// Where inputs of failing trials are written.
    #[arg(long, default_value = "gradcheck-failures")]
    dump_dir: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory written by `gen`; otherwise data is generated in memory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of generated samples.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    /// Seed of the generated data.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Seed of initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Emit no per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    #[arg(long, value_parser = parse_loss)]
    loss: Option<TrainLoss>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Comma-separated training losses.
    #[arg(long, value_delimiter = ',', value_parser = parse_loss)]
    losses: Option<Vec<TrainLoss>>,
}

fn parse_target(s: &str) -> Result<CheckTarget, String> {
    s.parse()
        .map_err(|_| format!("unknown loss `{s}`; expected one of bce, iou, dice, ss, bf1, combined, model"))
}

fn parse_loss(s: &str) -> Result<TrainLoss, String> {
    s.parse().map_err(|e: bfloss::Error| e.to_string())
}

fn parse_shape(s: &str) -> Result<ShapeKind, String> {
    s.parse().map_err(|e: bfloss::Error| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut cfg: GenConfig = read_json(args.config.as_deref())?;
    let s = &mut cfg.synth;
    set(&mut s.count, args.count);
    set(&mut s.size, args.size);
    set(&mut s.seed, args.seed);
    set(&mut s.noise_std, args.noise_std);
    set(&mut s.edge_touch_fraction, args.edge_touch_fraction);
    set(&mut s.min_area, args.min_area);
    set(&mut s.max_area, args.max_area);
    set(&mut s.texture, args.texture.map(Texture::from));
    set(&mut s.shapes, args.shapes);
    if args.out.is_some() {
        cfg.out = args.out;
    }
    cfg.synth.validate()?;
    let out = resolve_out(cfg.out.clone())?;
    echo_config(&out, &cfg)?;
    let samples = synthgen::generate(&cfg.synth)?;
    synthgen::export(&samples, &out)?;
    print_json(&json!({ "count": samples.len(), "out": out }));
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred = load_mask(&args.pred)?;
    let gt = load_mask(&args.gt)?;
    let c = metrics::confusion(&pred, &gt)?;
    let b = metrics::exact_bf1(&pred, &gt, args.theta_dist, args.mode.into())?;
    print_json(&json!({
        "iou": metrics::iou(&c),
        "dice": metrics::dice(&c),
        "ss": metrics::ss(&c, args.lambda)?,
        "precision": b.precision,
        "recall": b.recall,
        "bf1": b.bf1,
        "tp": c.tp,
        "fp": c.fp,
        "tn": c.tn,
        "fn": c.fn_,
    }));
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<bool> {
    let mut params = LossParams::default();
    set(&mut params.theta0, args.theta0);
    set(&mut params.theta, args.theta);
    params.validate()?;
    if args.size == 0 {
        return Err(ConfigError("--size must be at least 1".into()).into());
    }
    if args.trials == 0 {
        return Err(ConfigError("--trials must be at least 1".into()).into());
    }
    let name = match args.loss {
        CheckTarget::Loss(k) => k.name(),
        CheckTarget::Combined => "combined",
        CheckTarget::Model => "model",
    };
    let mut all_passed = true;
    for trial in 0..args.trials {
        let report = gradcheck::run_trial(args.loss, args.size, args.seed, trial, &params)?;
        let passed = report.passed();
        let mut line = json!({ "loss": name, "trial": trial, "passed": passed });
        if let (Some(obj), serde_json::Value::Object(extra)) = (line.as_object_mut(), serde_json::to_value(&report)?) {
            obj.extend(extra);
        }
        print_json(&line);
        if !passed {
            all_passed = false;
            let dir = args.dump_dir.join(format!("{name}-seed{}-trial{trial}", args.seed));
            dump_failure(&dir, args.loss, args.size, args.seed, trial, &line)?;
            let at = if matches!(args.loss, CheckTarget::Model) {
                format!("parameter {}", report.worst_index)
            } else {
                format!("pixel ({}, {})", report.worst_index / args.size, report.worst_index % args.size)
            };
            eprintln!(
                "trial {trial}: max relative error {:.3e} at {at} (analytic {:.6e}, numeric {:.6e}); inputs written to {}",
                report.max_rel_err,
                report.analytic_at_worst,
                report.numeric_at_worst,
                dir.display()
            );
        }
    }
    Ok(all_passed)
}

fn dump_failure(
    dir: &Path,
    target: CheckTarget,
    size: usize,
    seed: u64,
    trial: u64,
    report: &serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (p, g) = gradcheck::trial_inputs(size, seed, trial)?;
    let input = if matches!(target, CheckTarget::Model) { "image.pgm" } else { "prediction.pgm" };
    save_map(&p, dir.join(input))?;
    save_map(&g, dir.join("mask.pgm"))?;
    let path = dir.join("report.json");
    fs::write(&path, format!("{report}\n")).with_context(|| format!("writing {}", path.display()))
}

fn resolve_experiment(common: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = read_json(common.config.as_deref())?;
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    if common.data.is_some() {
        cfg.data.dir = common.data.clone();
    }
    set(&mut cfg.data.synth.count, common.count);
    set(&mut cfg.data.synth.size, common.size);
    set(&mut cfg.data.synth.seed, common.data_seed);
    set(&mut cfg.data.train_fraction, common.train_fraction);
    set(&mut cfg.train.epochs, common.epochs);
    set(&mut cfg.train.batch_size, common.batch_size);
    set(&mut cfg.train.lr.initial, common.lr);
    set(&mut cfg.train.seed, common.seed);
    Ok(cfg)
}

fn validate_experiment(cfg: &ExperimentConfig) -> Result<()> {
    cfg.train.validate()?;
    if cfg.data.dir.is_none() {
        cfg.data.synth.validate()?;
    }
    if !(cfg.data.train_fraction > 0.0 && cfg.data.train_fraction < 1.0) {
        return Err(ConfigError(format!(
            "data.train_fraction {} is outside (0, 1)",
            cfg.data.train_fraction
        ))
        .into());
    }
    Ok(())
}

fn progress(quiet: bool, loss: TrainLoss, total: usize) -> impl FnMut(&EpochRecord) {
    move |r| {
        if !quiet {
            eprintln!(
                "[{loss}] epoch {}/{total} loss {:.4} val iou {:.4} bf1 {:.4} w {} lr {:.1e}",
                r.epoch, r.loss, r.iou, r.bf1, r.w, r.lr
            );
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = resolve_experiment(&args.common)?;
    set(&mut cfg.train.loss, args.loss);
    validate_experiment(&cfg)?;
    let out = resolve_out(cfg.out.clone())?;
    echo_config(&out, &cfg)?;
    let (train, val) = cfg.data.load()?;
    let loss = cfg.train.loss;
    let outcome = trainer::train_observed(
        &cfg.train,
        &train,
        &val,
        progress(args.common.quiet, loss, cfg.train.epochs),
    )?;
    trainer::write_run(&out, loss, &outcome)?;
    print_json(&json!({
        "loss": loss,
        "iou": outcome.best.iou,
        "bf1": outcome.best.bf1,
        "best_epoch": outcome.best.epoch,
        "epochs": outcome.records.len(),
        "out": out,
    }));
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let mut cfg = resolve_experiment(&args.common)?;
    set(&mut cfg.losses, args.losses);
    if cfg.losses.is_empty() {
        return Err(ConfigError("losses must not be empty".into()).into());
    }
    validate_experiment(&cfg)?;
    let out = resolve_out(cfg.out.clone())?;
    echo_config(&out, &cfg)?;
    let (train, val) = cfg.data.load()?;
    let quiet = args.common.quiet;
    let total = cfg.train.epochs;
    let runs = trainer::compare_losses_observed(&cfg.train, &cfg.losses, &train, &val, |loss, r| {
        progress(quiet, loss, total)(r)
    })?;
    trainer::write_comparison(&out, &runs)?;
    let rows: Vec<_> = runs.iter().map(|(row, _)| row).collect();
    print_json(&serde_json::to_value(rows)?);
    Ok(())
}

/// 1: invalid input or config, 2: file system, 3: training diverged.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<bfloss::Error>() {
            return match e {
                bfloss::Error::Io { .. } | bfloss::Error::UnsupportedRaster { .. } => 2,
                bfloss::Error::NonFiniteLoss { .. } => 3,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

/// Usage line of the subcommand named on the command line, if any.
fn usage() -> clap::builder::StyledStr {
    let mut cmd = Cli::command();
    let sub = std::env::args().nth(1).unwrap_or_default();
    match cmd.find_subcommand_mut(&sub) {
        Some(sub) => sub.clone().bin_name(format!("bfloss {sub}", sub = sub.get_name())).render_usage(),
        None => cmd.render_usage(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !matches!(e.kind(), clap::error::ErrorKind::MissingSubcommand | clap::error::ErrorKind::MissingRequiredArgument) {
                eprintln!("\n{}", usage());
            }
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Compare(a) => cmd_compare(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
