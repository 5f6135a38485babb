use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dcflow_cli::config::ExperimentConfig;
use dcflow_cli::{compare, runner};

#[derive(Parser)]
#[command(
    name = "dcflow",
    version,
    about = "Sampling from difference-of-convex targets by discretized Wasserstein gradient flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment config (or a manifest) and write metrics,
    /// samples, and state snapshots to its output directory.
    Run { config: PathBuf },
    /// Summarize completed runs side by side (same target and eval settings).
    Compare {
        dirs: Vec<PathBuf>,
        /// Also write the comparison table to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples from a saved state snapshot into a CSV file.
    DumpSamples {
        snapshot: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a config, resolving all referenced names.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

type CliResult = std::result::Result<(), (u8, String)>;

fn load_config(path: &PathBuf) -> std::result::Result<ExperimentConfig, (u8, String)> {
    ExperimentConfig::from_path(path)
        .map_err(|e| (2, format!("config {}: {e}", path.display())))
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let output = runner::run(&cfg)
                .map_err(|e| (runner::exit_code_for(&e) as u8, e.to_string()))?;
            println!(
                "run complete: {} iterations, outputs in {}",
                output.records.last().map(|r| r.iteration).unwrap_or(0),
                output.dir.display()
            );
            Ok(())
        }
        Command::Compare { dirs, out } => {
            let table = compare::compare(&dirs).map_err(|e| (2u8, e.to_string()))?;
            let csv = table.to_csv();
            print!("{csv}");
            for (a, b, ratio) in &table.ratios {
                println!("# final KL ratio {a}/{b} = {ratio:.4}");
            }
            if let Some(path) = out {
                std::fs::write(&path, csv).map_err(|e| (4u8, e.to_string()))?;
            }
            Ok(())
        }
        Command::DumpSamples { snapshot, n, seed, out } => {
            runner::dump_samples(&snapshot, n, seed, &out).map_err(|e| match e {
                dcflow::Error::Io(_) => (4u8, e.to_string()),
                other => (2u8, format!("snapshot {}: {other}", snapshot.display())),
            })
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!(
                "OK: {} on {} (dim {}), {} outer iterations, seed {}",
                cfg.scheme,
                target_name(&cfg),
                cfg.target.dim().unwrap_or(0),
                cfg.outer_iters,
                cfg.seed
            );
            Ok(())
        }
    }
}

fn target_name(cfg: &ExperimentConfig) -> &'static str {
    match cfg.target {
        dcflow::TargetSpec::GaussianMixture { .. } => "gaussian_mixture",
        dcflow::TargetSpec::RelaxedVmf { .. } => "relaxed_vmf",
        dcflow::TargetSpec::SmoothDc { .. } => "smooth_dc",
        dcflow::TargetSpec::Mmd { .. } => "mmd",
    }
}
