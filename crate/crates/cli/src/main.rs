//! `salient`: the interpretable ECG classification pipeline as a sequence
//! of file-based stages.

mod config;
mod error;
mod stages;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use salient_core::signal::DatasetFormat;

use crate::config::{Config, ModelChoice};
use crate::error::CliError;
use crate::stages::{Ctx, Stage};

#[derive(Parser, Debug)]
#[command(name = "salient", version, about = "Saliency-driven ECG classification pipeline")]
struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Work directory holding every stage artifact.
    #[arg(long, global = true, env = "SALIENT_DATA_DIR", default_value = "salient-work")]
    out_dir: PathBuf,
    /// Seed for the stage being run (every seed for `all`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// External dataset to preprocess instead of the synthetic one.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Format of --input: bundle or csv_dir.
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<DatasetFormat>,
    #[arg(long, global = true)]
    n_instances: Option<usize>,
    #[arg(long, global = true)]
    n_folds: Option<usize>,
    /// Network shape for train-cnn; needs --kernel and --deepness too.
    #[arg(long, global = true, requires_all = ["kernel", "deepness"])]
    filters: Option<usize>,
    #[arg(long, global = true, requires = "filters")]
    kernel: Option<usize>,
    #[arg(long, global = true, requires = "filters")]
    deepness: Option<usize>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    /// Number of K-shape centroids.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Salient segment length in seconds.
    #[arg(long, global = true)]
    l_seconds: Option<f64>,
    /// Ridge strength; repeat for a grid.
    #[arg(long = "lambda", global = true)]
    lambdas: Vec<f64>,
}

fn parse_format(s: &str) -> Result<DatasetFormat, String> {
    match s {
        "bundle" => Ok(DatasetFormat::Bundle),
        "csv_dir" | "csv-dir" => Ok(DatasetFormat::CsvDir),
        _ => Err(format!("unknown format '{s}' (expected bundle or csv_dir)")),
    }
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic cohort.
    Synth,
    /// Filter, detrend, rescale and taper every record.
    Preprocess,
    /// Assign CNN folds, the CNN test set and the LR half.
    Split,
    /// Cross-validate every network shape in the grid.
    GridSearch,
    /// Train the chosen network on fold 0 and evaluate it on the test set.
    TrainCnn,
    /// Reconstruct the test records through the inverse network.
    Invert,
    /// Saliency maps of the test records.
    Saliency,
    /// AUROC under salient and random occlusion.
    Roar,
    /// Cluster salient segments into shape centroids.
    Kshape,
    /// Presence features of the LR half.
    Extract,
    /// Cross-validate and fit the kernel-PCA logistic model.
    FitLr,
    /// Permutation importance and rank correlations.
    Importance,
    /// Likelihood-ratio tests for age and sex.
    Lrt,
    /// Collect every output into report/.
    Report,
    /// Run every stage in order.
    All,
}

impl Command {
    fn stages(self, cfg: &Config) -> Vec<Stage> {
        let one = match self {
            Command::Synth => Stage::Synth,
            Command::Preprocess => Stage::Preprocess,
            Command::Split => Stage::Split,
            Command::GridSearch => Stage::GridSearch,
            Command::TrainCnn => Stage::TrainCnn,
            Command::Invert => Stage::Invert,
            Command::Saliency => Stage::Saliency,
            Command::Roar => Stage::Roar,
            Command::Kshape => Stage::Kshape,
            Command::Extract => Stage::Extract,
            Command::FitLr => Stage::FitLr,
            Command::Importance => Stage::Importance,
            Command::Lrt => Stage::Lrt,
            Command::Report => Stage::Report,
            Command::All => {
                return Stage::ALL
                    .into_iter()
                    .filter(|s| !(*s == Stage::Synth && cfg.data.input.is_some()))
                    .collect()
            }
        };
        vec![one]
    }
}

fn apply_overrides(cfg: &mut Config, o: &Overrides) {
    if let Some(p) = &o.input {
        cfg.data.input = Some(p.clone());
    }
    if let Some(f) = o.format {
        cfg.data.format = f;
    }
    if let Some(n) = o.n_instances {
        cfg.synth.n_instances = n;
    }
    if let Some(n) = o.n_folds {
        cfg.data.n_folds = n;
    }
    if let (Some(filters), Some(kernel), Some(deepness)) = (o.filters, o.kernel, o.deepness) {
        cfg.cnn.model = Some(ModelChoice { filters, kernel, deepness });
    }
    if let Some(n) = o.max_epochs {
        cfg.cnn.max_epochs = n;
    }
    if let Some(k) = o.k {
        cfg.kshape.k = k;
    }
    if let Some(l) = o.l_seconds {
        cfg.kshape.l_seconds = l;
    }
    if !o.lambdas.is_empty() {
        cfg.lr.lambdas = o.lambdas.clone();
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    apply_overrides(&mut cfg, &cli.overrides);
    let stages = cli.command.stages(&cfg);
    if let Some(seed) = cli.seed {
        let targets: &[Stage] = if matches!(cli.command, Command::All) { &Stage::ALL } else { &stages };
        for s in targets {
            if let Some(slot) = s.seed_mut(&mut cfg) {
                *slot = seed;
            }
        }
    }
    let ctx = Ctx::new(cfg, cli.out_dir);
    for stage in stages {
        ctx.run(stage)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
