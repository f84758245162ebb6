use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use gpgd::harness::{run_experiment, ExperimentKind, ExperimentReport, ExperimentSpec, RunStatus};

const VERSION: &str = env!("GPGD_VERSION");

const EXIT_INVALID_CONFIG: u8 = 1;
const EXIT_COMPONENT_ERROR: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

#[derive(Parser)]
#[command(name = "gpgd", version = VERSION, about = "Seeded recovery experiments with CSV output")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Phase transition of IHT under the degraded projection P_alpha
    PhaseAlpha(RunArgs),
    /// Residual-threshold back-projection against sparse outliers
    Outliers(RunArgs),
    /// Error against sparsity for several step sizes
    Stepsize(RunArgs),
    /// Joint recovery of signal and outliers with the operator (A, I)
    Joint(RunArgs),
    /// Stability of learned priors trained with and without NIPR
    Nipr(RunArgs),
    /// Observed errors against the recovery bound
    Theorem(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key-value config; missing keys take the experiment's defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; metadata goes beside it with a .json extension
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::PhaseAlpha(a) => (ExperimentKind::PhaseTransitionAlpha, a),
            Command::Outliers(a) => (ExperimentKind::OutlierTradeoff, a),
            Command::Stepsize(a) => (ExperimentKind::StepSizeStudy, a),
            Command::Joint(a) => (ExperimentKind::JointModel, a),
            Command::Nipr(a) => (ExperimentKind::NiprStability, a),
            Command::Theorem(a) => (ExperimentKind::TheoremCheck, a),
        }
    }
}

fn load_spec(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentSpec, String> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            ExperimentSpec::from_config_str(&text, Some(kind)).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ExperimentSpec::defaults(kind),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(trials) = args.trials {
        spec.trials = trials;
    }
    if let Some(out) = &args.out {
        spec.output_path = out.display().to_string();
    }
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn exit_code(report: &ExperimentReport) -> u8 {
    match report.status {
        RunStatus::Complete => 0,
        RunStatus::Inconclusive(_) => EXIT_INCONCLUSIVE,
        RunStatus::Aborted(_) | RunStatus::Violated(_) => EXIT_COMPONENT_ERROR,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_INVALID_CONFIG),
            };
        }
    };
    let (kind, args) = cli.command.split();
    let spec = match load_spec(kind, &args) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("gpgd: invalid config: {msg}");
            return ExitCode::from(EXIT_INVALID_CONFIG);
        }
    };

    let start = Instant::now();
    let report = match run_experiment(&spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("gpgd: {kind} failed: {e}");
            return ExitCode::from(EXIT_COMPONENT_ERROR);
        }
    };
    let out = PathBuf::from(&spec.output_path);
    match report.write(&out, VERSION, start.elapsed().as_secs_f64()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
        }
        Err(e) => {
            eprintln!("gpgd: writing {}: {e}", out.display());
            return ExitCode::from(EXIT_COMPONENT_ERROR);
        }
    }
    match &report.status {
        RunStatus::Complete => {}
        RunStatus::Inconclusive(m) => eprintln!("gpgd: inconclusive: {m}"),
        RunStatus::Aborted(m) => eprintln!("gpgd: aborted: {m}"),
        RunStatus::Violated(m) => eprintln!("gpgd: bound violated: {m}"),
    }
    ExitCode::from(exit_code(&report))
}
