use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conjunction_cli::commands::{self, AssessOptions, CalibrateOptions, CurveOptions};
use conjunction_cli::{BiasInput, CalibrationInput, CliError, ConjunctionInput};
use conjunction_core::inference::DEFAULT_GRID_POINTS;

#[derive(Parser)]
#[command(name = "conjunction", version, about = "Miss-distance inference for satellite conjunctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Confidence intervals, significance at psi0 and p_c for one conjunction.
    Assess {
        #[arg(long)]
        input: PathBuf,
        /// Safety threshold in meters; overrides the input file.
        #[arg(long)]
        psi0: Option<f64>,
        /// Decision level; overrides the input file.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid_points: usize,
        /// Include the Jeffreys-prior modified root.
        #[arg(long)]
        bayes: bool,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Significance functions on a grid, as CSV.
    Curve {
        #[arg(long)]
        input: PathBuf,
        /// Smallest tail probability the grid must reach.
        #[arg(long, default_value_t = 1e-6)]
        alpha_min: f64,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid_points: usize,
        #[arg(long)]
        bayes: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo coverage of the interval procedures.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "CONJUNCTION_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, env = "CONJUNCTION_WORKERS")]
        workers: Option<usize>,
        /// Coverage table (CSV); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Sorted pivots at the true miss distance, for Q-Q plots (CSV).
        #[arg(long)]
        qq: Option<PathBuf>,
    },
    /// Sampling distribution of the plug-in collision probability.
    PcStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn write(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Numerical(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Assess { input, psi0, eps, grid_points, bayes, out } => {
            let conj = ConjunctionInput::parse(&read(&input)?)?.resolve()?;
            let opts = AssessOptions { psi0, epsilon: eps, grid_points, bayes };
            write(out.as_deref(), &commands::assess_json(&conj, &opts)?)
        }
        Command::Curve { input, alpha_min, grid_points, bayes, out } => {
            let conj = ConjunctionInput::parse(&read(&input)?)?.resolve()?;
            let opts = CurveOptions { alpha_min, grid_points, bayes };
            write(out.as_deref(), &commands::curve(&conj, &opts)?)
        }
        Command::Calibrate { config, seed, replicates, workers, out, json, qq } => {
            let input = CalibrationInput::parse(&read(&config)?)?;
            let opts = CalibrateOptions { seed, replicates, workers, qq: qq.is_some() };
            let result = commands::calibrate(&input, &opts)?;
            if result.report.failures > 0 {
                eprintln!(
                    "warning: {} of {} replicates failed, e.g. {}",
                    result.report.failures,
                    result.report.replicates,
                    result.report.failure_examples.first().map_or("", String::as_str)
                );
            }
            write(out.as_deref(), &result.table)?;
            if let Some(path) = json {
                write(Some(&path), &result.json)?;
            }
            if let (Some(path), Some(text)) = (qq, result.qq) {
                write(Some(&path), &text)?;
            }
            Ok(())
        }
        Command::PcStudy { config, out } => {
            let input = BiasInput::parse(&read(&config)?)?;
            write(out.as_deref(), &commands::pc_study(&input)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
