//! Command-line front end: loads a JSON config, applies flag overrides, runs
//! the pipeline, and prints a short summary. Failures land on stderr as a
//! single JSON object with a stable `kind` field.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use feel_core::curriculum::ScheduleMode;
use feel_core::pipeline::{run_pipeline, PipelineConfig};
use feel_core::Error;

#[derive(Parser)]
#[command(
    name = "feel",
    version,
    about = "Unsupervised temporal action localization via iterative clustering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full loop and write reports.
    Run(Box<RunArgs>),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON file mirroring the pipeline config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Binary snippet-feature file.
    #[arg(long, conflicts_with = "synth")]
    features: Option<PathBuf>,
    /// Ground-truth segment file (JSON lines).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Generate the built-in synthetic dataset instead of loading features.
    #[arg(long)]
    synth: bool,
    /// Number of action classes; required with --features unless configured.
    #[arg(long)]
    num_classes: Option<usize>,
    /// Report directory (iterations.csv, final_eval.json, ...).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Selection schedule shape.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Number of outer iterations.
    #[arg(long)]
    imax: Option<usize>,
    /// Concavity of the variable schedule; must exceed 1.
    #[arg(long)]
    mu: Option<f64>,
    /// Ablation: skip re-ranking, cluster on raw Euclidean confidences.
    #[arg(long = "no-cci")]
    no_cci: bool,
    /// Ablation: train on every video each iteration.
    #[arg(long = "no-iis")]
    no_iis: bool,
    /// Ablation: cluster top-attention snippets instead of whole videos.
    #[arg(long)]
    snippetwise: bool,
    /// Replace existing report files.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Constant,
    Variable,
}

fn build_config(args: &RunArgs) -> Result<PipelineConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?
        }
        None => PipelineConfig::default(),
    };
    if let Some(features) = &args.features {
        cfg.features = Some(features.clone());
        cfg.synth = None;
    }
    if args.synth {
        cfg.synth = Some(cfg.synth.take().unwrap_or_default());
        cfg.features = None;
    }
    if let Some(gt) = &args.gt {
        cfg.ground_truth = Some(gt.clone());
    }
    if let Some(k) = args.num_classes {
        cfg.num_classes = Some(k);
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.mode = match mode {
            ModeArg::Constant => ScheduleMode::Constant,
            ModeArg::Variable => ScheduleMode::Variable,
        };
    }
    if let Some(imax) = args.imax {
        cfg.i_max = imax;
    }
    if let Some(mu) = args.mu {
        cfg.mu = mu;
    }
    if args.no_cci {
        cfg.disable_cci = true;
    }
    if args.no_iis {
        cfg.disable_iis = true;
    }
    if args.snippetwise {
        cfg.snippet_wise = true;
    }
    if args.overwrite {
        cfg.overwrite = true;
    }
    Ok(cfg)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::ShapeMismatch(_) => "shape_mismatch",
        Error::Format { .. } => "format",
        Error::Corrupt { .. } => "corrupt",
        Error::Parse { .. } => "parse",
        Error::Validation(_) => "validation",
        Error::Io(_) => "io",
        Error::Pipeline { .. } => "pipeline",
    }
}

fn try_run(args: &RunArgs) -> Result<(), Error> {
    let cfg = build_config(args)?;
    let output = run_pipeline(&cfg)?;
    println!(
        "completed {} iterations, {} proposals",
        output.records.len(),
        output.proposals.len()
    );
    if let Some(nmi) = output.final_eval.nmi {
        println!("final NMI: {nmi:.4}");
    }
    if let Some(map) = &output.final_eval.map {
        println!("final average mAP over the IoU grid: {:.4}", map.average_map);
    }
    if let Some(dir) = &output.config.out_dir {
        println!("reports written to {}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    match try_run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": err.to_string(),
                "kind": error_kind(&err),
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
