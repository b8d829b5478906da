//! `fuselab` — run fusion experiments from JSON configs.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fuselab_core::experiment::{self, ExperimentConfig, ExperimentKind, Format};

#[derive(Parser, Debug)]
#[command(name = "fuselab", version, about = "Train, fuse and probe desk-scale models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Interpolate between two shortcut models (or a triplet simplex).
    ShortcutInterp(RunArgs),
    /// Fuse N shortcut models uniformly and compare with full-data training.
    ShortcutFuseN(RunArgs),
    /// Interpolate between two single-attribute-biased classifiers.
    BiasInterp(RunArgs),
    /// Fuse two single-attribute-biased classifiers at a fixed weight.
    BiasFuse(RunArgs),
    /// Measure memorization of overlapping corpora before and after fusion.
    Memorize(RunArgs),
    /// Fisher overlap between two shortcut models on clean and shortcut probes.
    FisherOverlap(RunArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for tables, checkpoints and traces.
    #[arg(long, default_value = "fuselab-out")]
    out: PathBuf,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output formats (repeatable).
    #[arg(long, value_enum, default_values_t = [OutFormat::Json, OutFormat::Csv])]
    format: Vec<OutFormat>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
    Plotseries,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
            OutFormat::Plotseries => Format::Plotseries,
        }
    }
}

fn load_config(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if cfg.kind != kind {
                bail!("config is for `{}`, not `{kind}`", cfg.kind);
            }
            cfg
        }
        None => ExperimentConfig::new(kind, vec![0]),
    };
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    cfg.output_dir = Some(args.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<bool> {
    let cfg = load_config(kind, args)?;
    let table = experiment::run(&cfg)?;
    for e in &table.errors {
        eprintln!("seed {} failed: {}", e.seed, e.message);
    }
    if table.rows.is_empty() {
        bail!("no seed completed");
    }
    for f in &args.format {
        for path in experiment::emit(&table, (*f).into(), &args.out)? {
            println!("{}", path.display());
        }
    }
    Ok(table.is_complete())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::ShortcutInterp(a) => (ExperimentKind::ShortcutInterp, a),
        Command::ShortcutFuseN(a) => (ExperimentKind::ShortcutFuseN, a),
        Command::BiasInterp(a) => (ExperimentKind::BiasInterp, a),
        Command::BiasFuse(a) => (ExperimentKind::BiasFuse, a),
        Command::Memorize(a) => (ExperimentKind::Memorize, a),
        Command::FisherOverlap(a) => (ExperimentKind::FisherOverlap, a),
    };
    match run(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
