use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use laplace_certify::experiment::{self, ExperimentConfig, ExperimentKind};
use laplace_certify::Error;

#[derive(Parser)]
#[command(name = "laplace-certify", version, about = "Certified Laplace and BvM bounds with measured TV")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// CSV output path (stdout if omitted). The summary goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Sweep only: write a log-log plot of the medians.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Laplace certificate per replication, with measured TV.
    Certify(RunArgs),
    /// BvM bound, events and TV to the Fisher Gaussian.
    Bvm(RunArgs),
    /// Event frequencies only.
    Events(RunArgs),
    /// Grid over d and/or n with log-log slopes.
    Sweep(RunArgs),
    /// TV between the posterior and a Gaussian.
    Tv(RunArgs),
}

fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

fn execute(kind: ExperimentKind, args: &RunArgs) -> Result<usize, Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.experiment = Some(kind);
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let output = pool.install(|| experiment::run(&cfg))?;

    let out = args.out.clone().or_else(|| cfg.out.as_ref().map(PathBuf::from));
    let summary = serde_json::to_string_pretty(&output.summary)?;
    match &out {
        Some(path) => {
            experiment::write_csv(&output.records, std::fs::File::create(path)?)?;
            std::fs::write(summary_path(path), summary + "\n")?;
        }
        None => {
            experiment::write_csv(&output.records, std::io::stdout().lock())?;
            eprintln!("{summary}");
        }
    }
    if let Some(svg) = &args.svg {
        std::fs::write(svg, experiment::svg::render(&output.series))?;
    }
    Ok(output.summary.violations)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Certify(a) => (ExperimentKind::Certify, a),
        Command::Bvm(a) => (ExperimentKind::Bvm, a),
        Command::Events(a) => (ExperimentKind::Events, a),
        Command::Sweep(a) => (ExperimentKind::Sweep, a),
        Command::Tv(a) => (ExperimentKind::Tv, a),
    };
    match execute(kind, args) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(v) => {
            eprintln!("{v} soundness violation(s) detected");
            ExitCode::from(3)
        }
        Err(e @ (Error::Config(_) | Error::Json(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
