//! Subcommands behind the `mvassoc` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::diffcore::op_gradient_checks;
use crate::error::{Error, Result};
use crate::inference::{associate_dataset, AssociationReport};
use crate::metrics::{precision_recall_table, score_pairs, MetricsReport};
use crate::model::Checkpoint;
use crate::pretext::{toy_problem, train_with};
use crate::sim::generate_scene;

/// Finite-difference step and relative tolerance used by `gradcheck`.
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "mvassoc", version, about = "Self-supervised multi-view person association")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a multi-camera scene and write its detections.
    Generate(GenerateArgs),
    /// Train the geometric encoder on a detections file.
    Train(TrainArgs),
    /// Associate detections across views with a trained checkpoint.
    Associate(AssociateArgs),
    /// Score an association report against ground-truth identities.
    Evaluate(EvaluateArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history path; defaults to the checkpoint path with `.history`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssociateArgs {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub report: PathBuf,
    pub data: PathBuf,
    /// Enables AP and FPR-95 by rescoring every instance pair.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Metrics path.
    #[arg(long)]
    pub out: PathBuf,
    /// `threshold,precision,recall` table path.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => {
            require_file(p)?;
            RunConfig::read(p)?
        }
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        )),
        _ => Ok(()),
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64> {
    flag.or(cfg.seed)
        .ok_or_else(|| Error::Config("a seed is required: pass --seed or set `seed` in the config".into()))
}

fn history_path(args: &TrainArgs) -> PathBuf {
    args.history.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".history");
        PathBuf::from(p)
    })
}

/// Runs one subcommand. Progress goes to stderr; results go to files.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Associate(a) => cmd_associate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &cfg)?;
    require_parent(&args.out)?;
    let scene = generate_scene(&cfg.scene, seed)?;
    scene.dataset.write(&args.out)?;
    eprintln!(
        "wrote {} frames, {} cameras, {} detections to {}",
        scene.dataset.len(),
        scene.dataset.cameras(),
        scene.dataset.frames.iter().map(|f| f.detection_count()).sum::<usize>(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &cfg)?;
    require_file(&args.data)?;
    require_parent(&args.out)?;
    let history = history_path(args);
    require_parent(&history)?;
    let dataset = Dataset::read(&args.data)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let outcome = train_with(&dataset, &train_cfg, |r| eprintln!("{}", r.to_line()))?;
    let mut text = format!("#mvassoc-history v1 seed={seed}\n#epoch L_syn L_pro L_edge val_ACC\n");
    for r in &outcome.history {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    std::fs::write(&history, text).map_err(|e| Error::io(&history, e))?;
    outcome.checkpoint.write(&args.out)?;
    if outcome.skipped_anchors > 0 {
        eprintln!("skipped {} anchors with empty views", outcome.skipped_anchors);
    }
    match outcome.divergence {
        Some(why) => Err(Error::Runtime(format!(
            "{why}; wrote the last finite model (after {} epochs) to {}",
            outcome.checkpoint.epochs_completed,
            args.out.display()
        ))),
        None => Ok(()),
    }
}

pub fn cmd_associate(args: &AssociateArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let mut params = cfg.associate.params;
    if let Some(t) = args.threshold {
        params.threshold = t;
    }
    params.validate()?;
    require_file(&args.data)?;
    require_file(&args.checkpoint)?;
    require_parent(&args.out)?;
    let dataset = Dataset::read(&args.data)?;
    let checkpoint = Checkpoint::read(&args.checkpoint)?;
    let frames = dataset.split(cfg.associate.holdout).1;
    let frames = if cfg.associate.holdout > 0.0 {
        frames
    } else {
        0..dataset.len()
    };
    let report = associate_dataset(&checkpoint.model, &dataset, frames, &params, cfg.associate.appearance)?;
    report.write(&args.out)?;
    eprintln!("wrote {} matches to {}", report.match_count(), args.out.display());
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    require_file(&args.report)?;
    require_file(&args.data)?;
    if let Some(ck) = &args.checkpoint {
        require_file(ck)?;
    }
    require_parent(&args.out)?;
    if let Some(p) = &args.plot {
        require_parent(p)?;
    }
    let report = AssociationReport::read(&args.report)?;
    let dataset = Dataset::read(&args.data)?;
    let scores = match &args.checkpoint {
        Some(path) => {
            let checkpoint = Checkpoint::read(path)?;
            let mut params = cfg.associate.params;
            params.threshold = report.threshold;
            Some(score_pairs(
                &checkpoint.model,
                &dataset,
                report.frames.clone(),
                &params,
                cfg.associate.appearance,
            )?)
        }
        None => None,
    };
    let metrics = MetricsReport::build(&report, &dataset, scores.as_deref())?;
    metrics.write(&args.out)?;
    if let Some(p) = &args.plot {
        let table = precision_recall_table(&report, &dataset, cfg.evaluate.plot_step)?;
        std::fs::write(p, table).map_err(|e| Error::io(p, e))?;
    }
    eprint!("{}", metrics.to_text());
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let mut failed = Vec::new();
    for c in op_gradient_checks(args.seed, GRADCHECK_STEP, GRADCHECK_TOLERANCE)? {
        println!(
            "{:<16} max_rel_error {:.3e} {}",
            c.op,
            c.report.worst(),
            verdict(c.report.passed())
        );
        if !c.report.passed() {
            failed.push(c.op.to_string());
        }
    }
    let toy = toy_problem(args.seed)?;
    let report = toy.gradient_check(GRADCHECK_STEP, GRADCHECK_TOLERANCE)?;
    println!(
        "{:<16} max_rel_error {:.3e} {}",
        "total_loss",
        report.worst(),
        verdict(report.passed())
    );
    if !report.passed() {
        failed.push("total_loss".into());
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Runtime(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}
