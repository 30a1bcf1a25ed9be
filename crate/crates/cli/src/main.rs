use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use zofd::config::{Experiment, Overrides};
use zofd::Fault;
use zofd_core::linesearch::Preset;
use zofd_core::{DirectionKind, EllSpec};

#[derive(Parser)]
#[command(name = "zofd", version, about = "Zeroth-order finite-difference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Wall-clock cost of generating direction matrices.
    Timing(Common),
    /// Relative error of the gradient surrogate against analytic gradients.
    GradError(Common),
    /// Line-search runs on the benchmark problems.
    Optimize(Common),
    /// Fraction-solved curves from optimization or gradient-error results.
    Profile(Common),
    /// Monte Carlo check of the smoothing inequality and gap identity.
    Oracle(Common),
    /// Print the registered problems.
    ListProblems,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    DropScale,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "ZOFD_OUT")]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    jobs: Option<usize>,
    /// Dimensions, comma-separated.
    #[arg(long, value_delimiter = ',')]
    dim: Option<Vec<usize>>,
    /// Direction counts: integers or `d`, `d/2`, `2d/3`.
    #[arg(long, value_delimiter = ',')]
    ell: Option<Vec<EllSpec>>,
    /// Direction kinds, comma-separated.
    #[arg(long, value_delimiter = ',')]
    kind: Option<Vec<DirectionKind>>,
    /// Problem names, comma-separated.
    #[arg(long, value_delimiter = ',')]
    problem: Option<Vec<String>>,
    /// Objective-call budget per run.
    #[arg(long)]
    budget: Option<usize>,
    /// Repeats per cell (timing draws or optimization runs).
    #[arg(long)]
    repeats: Option<usize>,
    /// Gradient-error trials per cell.
    #[arg(long)]
    trials: Option<usize>,
    /// Line-search preset: synthetic, cutest or adversarial.
    #[arg(long)]
    preset: Option<Preset>,
    /// Finite-difference step.
    #[arg(long)]
    h: Option<f64>,
    /// Results CSV to profile instead of running.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Oracle Monte Carlo samples.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, hide = true)]
    inject_fault: Option<FaultArg>,
}

impl Common {
    fn split(self) -> (Option<PathBuf>, Overrides, Option<Fault>) {
        let over = Overrides {
            out_dir: self.out,
            master_seed: self.seed,
            jobs: self.jobs,
            dims: self.dim,
            ells: self.ell,
            kinds: self.kind,
            problems: self.problem,
            budget: self.budget,
            repeats: self.repeats,
            trials: self.trials,
            preset: self.preset,
            h: self.h,
            input: self.input,
            samples: self.samples,
        };
        let fault = self.inject_fault.map(|FaultArg::DropScale| Fault::DropScale);
        (self.config, over, fault)
    }
}

fn main() -> ExitCode {
    let (experiment, common) = match Cli::parse().command {
        Command::Timing(c) => (Experiment::Timing, c),
        Command::GradError(c) => (Experiment::GradError, c),
        Command::Optimize(c) => (Experiment::Optimize, c),
        Command::Profile(c) => (Experiment::Profile, c),
        Command::Oracle(c) => (Experiment::Oracle, c),
        Command::ListProblems => {
            print!("{}", zofd::commands::list_problems());
            return ExitCode::SUCCESS;
        }
    };
    let (config, over, fault) = common.split();
    match zofd::run_experiment(experiment, config.as_deref(), over, fault) {
        Ok(report) => {
            match report.files.as_slice() {
                [] => {}
                [f] => eprintln!("wrote {}", f.display()),
                [f, ..] => eprintln!("wrote {} files, first {}", report.files.len(), f.display()),
            }
            if report.ok {
                println!("{}", report.message);
                ExitCode::SUCCESS
            } else {
                eprintln!("check failed: {}", report.message);
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
