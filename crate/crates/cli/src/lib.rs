//! Command-line driver for the zeroth-order experiments: timing,
//! gradient error, optimization runs, fraction-solved profiles and the
//! smoothing oracle.

pub mod commands;
pub mod config;
pub mod output;

use anyhow::Result;

pub use commands::Report;
use config::{resolve, Experiment, ExperimentConfig, Overrides, Resolved};

/// Deliberate faults for checking that the oracle can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Drop the `d/ell` factor from the surrogate.
    DropScale,
}

fn unscaled_surrogate(
    f: &dyn zofd_core::Objective,
    x: &[f64],
    h: f64,
    p: &zofd_core::DirectionMatrix,
    fx: Option<f64>,
) -> zofd_core::Result<zofd_core::GradEstimate> {
    let mut est = zofd_core::forward_fd(f, x, h, p, fx)?;
    let k = p.ell() as f64 / p.d() as f64;
    est.g.iter_mut().for_each(|v| *v *= k);
    Ok(est)
}

pub fn execute(cfg: &Resolved, fault: Option<Fault>) -> Result<Report> {
    match cfg.experiment {
        Experiment::Timing => commands::cmd_timing(cfg),
        Experiment::GradError => commands::cmd_grad_error(cfg),
        Experiment::Optimize => commands::cmd_optimize(cfg),
        Experiment::Profile => commands::cmd_profile(cfg),
        Experiment::Oracle => match fault {
            Some(Fault::DropScale) => commands::oracle_with(cfg, unscaled_surrogate),
            None => commands::cmd_oracle(cfg),
        },
    }
}

/// Load the optional config file, apply overrides and run.
pub fn run_experiment(
    experiment: Experiment,
    config: Option<&std::path::Path>,
    over: Overrides,
    fault: Option<Fault>,
) -> Result<Report> {
    let file = match config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    execute(&resolve(experiment, file, over)?, fault)
}
