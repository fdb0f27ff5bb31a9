mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "assim", version, about = "Variational annealing twin experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Worker threads for branches and sweep items.
    #[arg(long, value_parser = parse_jobs)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate truth and noisy observations.
    Generate(Common),
    /// Run variational annealing on generated observations.
    Anneal {
        #[command(flatten)]
        common: Common,
        /// Rerun with this smaller growth factor and compare lowest levels.
        #[arg(long)]
        alpha_check: Option<f64>,
    },
    /// Prediction errors of the lowest two action levels.
    Predict(Common),
    /// Euler-Lagrange, momentum and boundary diagnostics of the lowest path.
    Elcheck {
        #[command(flatten)]
        common: Common,
        /// Diagnose this path file instead of the lowest-level path.
        #[arg(long)]
        path: Option<PathBuf>,
    },
    /// Generate and anneal once per value of one config axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; may be empty.
        #[arg(long, default_value = "", value_parser = parse_values)]
        values: Values,
    },
}

fn parse_jobs(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Clone, Debug)]
struct Values(Vec<usize>);

fn parse_values(s: &str) -> Result<Values, String> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Values)
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    #[value(name = "L")]
    L,
    #[value(name = "M")]
    M,
    #[value(name = "l_F")]
    LF,
    #[value(name = "steps_between_obs")]
    StepsBetweenObs,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::L => "L",
            Axis::M => "M",
            Axis::LF => "l_F",
            Axis::StepsBetweenObs => "steps_between_obs",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(c) => commands::generate(&c),
        Command::Anneal { common, alpha_check } => commands::anneal(&common, alpha_check),
        Command::Predict(c) => commands::predict(&c),
        Command::Elcheck { common, path } => commands::elcheck(&common, path.as_deref()),
        Command::Sweep { common, axis, values } => commands::sweep(&common, axis, &values.0),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
