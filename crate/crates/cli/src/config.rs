//! Experiment configuration: JSON file, command-line overrides, defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zofd_core::linesearch::{FdConfig, Preset, DEFAULT_BUDGET};
use zofd_core::metrics::{default_tau_grid, DEFAULT_GRAD_TRIALS, DEFAULT_TIMING_REPEATS, DEFAULT_VALUE_REPEATS};
use zofd_core::objectives::{ProblemParams, ProblemSpec, Registry};
use zofd_core::smoothing::{OracleGrid, TestFunction};
use zofd_core::{DirectionKind, EllSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Timing,
    GradError,
    Optimize,
    Profile,
    Oracle,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Timing => "timing",
            Experiment::GradError => "grad-error",
            Experiment::Optimize => "optimize",
            Experiment::Profile => "profile",
            Experiment::Oracle => "oracle",
        }
    }
}

/// Which per-problem metric feeds the fraction-solved curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileMetric {
    /// Mean final `V` over repeats.
    #[default]
    Optimize,
    /// Mean relative gradient error over trials.
    GradError,
}

/// Line-search parameters on top of a base preset; unset fields keep the
/// preset value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSearchParams {
    #[serde(default)]
    pub base: Option<Preset>,
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub gamma0: Option<f64>,
    #[serde(default)]
    pub gamma_min: Option<f64>,
    #[serde(default)]
    pub gamma_max: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub rho_exp: Option<f64>,
    #[serde(default)]
    pub strict_eval: Option<bool>,
}

/// `"preset": "cutest"` or `"preset": { "base": "cutest", "c": 1e-4, ... }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LineSearch {
    Preset(Preset),
    Explicit(LineSearchParams),
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch::Preset(Preset::Synthetic)
    }
}

impl LineSearch {
    pub fn fd_config(&self, kind: DirectionKind, ell: usize, budget: usize) -> FdConfig {
        let p = match self {
            LineSearch::Preset(preset) => return FdConfig::preset(*preset, kind, ell).with_budget(budget),
            LineSearch::Explicit(p) => p,
        };
        let base = FdConfig::preset(p.base.unwrap_or(Preset::Synthetic), kind, ell).with_budget(budget);
        FdConfig {
            h: p.h.unwrap_or(base.h),
            gamma0: p.gamma0.unwrap_or(base.gamma0),
            gamma_min: p.gamma_min.unwrap_or(base.gamma_min),
            gamma_max: p.gamma_max.unwrap_or(base.gamma_max),
            c: p.c.unwrap_or(base.c),
            theta: p.theta.unwrap_or(base.theta),
            rho_exp: p.rho_exp.unwrap_or(base.rho_exp),
            strict_eval: p.strict_eval.unwrap_or(base.strict_eval),
            ..base
        }
    }
}

/// Oracle grid settings; unset fields take the default grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSettings {
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    #[serde(default)]
    pub ells: Option<Vec<EllSpec>>,
    #[serde(default)]
    pub hs: Option<Vec<f64>>,
    #[serde(default)]
    pub functions: Option<Vec<TestFunction>>,
    #[serde(default)]
    pub n_samples: Option<usize>,
}

/// The JSON config file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub problems: Vec<ProblemSpec>,
    /// Timing dimensions; for problem experiments, replaces each problem's `d`.
    #[serde(default)]
    pub dims: Vec<usize>,
    #[serde(default)]
    pub kinds: Vec<DirectionKind>,
    #[serde(default)]
    pub ells: Vec<EllSpec>,
    #[serde(default)]
    pub preset: Option<LineSearch>,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub repeats: Option<usize>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Finite-difference step for grad-error, and an override for the
    /// line-search preset.
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
    #[serde(default)]
    pub tau_fixed: Option<f64>,
    /// Number of evenly spaced evaluation counts in the budget profile.
    #[serde(default)]
    pub eval_points: Option<usize>,
    #[serde(default)]
    pub profile_metric: Option<ProfileMetric>,
    /// Existing `optimize_summary.csv` or `grad_error.csv` to profile instead
    /// of running inline.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub oracle: Option<OracleSettings>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub master_seed: Option<u64>,
    pub jobs: Option<usize>,
    pub dims: Option<Vec<usize>>,
    pub ells: Option<Vec<EllSpec>>,
    pub kinds: Option<Vec<DirectionKind>>,
    pub problems: Option<Vec<String>>,
    pub budget: Option<usize>,
    pub repeats: Option<usize>,
    pub trials: Option<usize>,
    pub preset: Option<Preset>,
    pub h: Option<f64>,
    pub input: Option<PathBuf>,
    pub samples: Option<usize>,
}

pub const DEFAULT_GRAD_H: f64 = 1e-7;
pub const DEFAULT_TAU_FIXED: f64 = 1e-2;
pub const DEFAULT_EVAL_POINTS: usize = 20;
pub const DEFAULT_PROBLEM_DIM: usize = 50;
pub const DEFAULT_TIMING_DIMS: [usize; 5] = [64, 128, 256, 512, 1024];
pub const DEFAULT_ORACLE_SAMPLES: usize = 100_000;

/// Fully resolved settings. Serialized (without `out_dir` and `jobs`, which
/// cannot change results) to form the config hash.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub experiment: Experiment,
    pub problems: Vec<ProblemSpec>,
    pub dims: Vec<usize>,
    pub kinds: Vec<DirectionKind>,
    pub ells: Vec<EllSpec>,
    pub line_search: LineSearch,
    pub budget: usize,
    pub repeats: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub grad_h: f64,
    pub taus: Vec<f64>,
    pub tau_fixed: f64,
    pub eval_points: usize,
    pub profile_metric: ProfileMetric,
    pub input: Option<PathBuf>,
    pub oracle: OracleGrid,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub jobs: usize,
}

impl Resolved {
    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn header_line(&self) -> String {
        format!("# config_hash={} master_seed={}", self.config_hash(), self.master_seed)
    }

    /// Direction counts resolved at dimension `d`, deduplicated, in config
    /// order.
    pub fn ells_for(&self, d: usize) -> Result<Vec<usize>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for spec in &self.ells {
            let ell = spec.resolve(d).with_context(|| format!("direction count `{spec}` at d = {d}"))?;
            if seen.insert(ell) {
                out.push(ell);
            }
        }
        Ok(out)
    }
}

fn default_problems(dims: &[usize]) -> Vec<ProblemSpec> {
    let dims = if dims.is_empty() { vec![DEFAULT_PROBLEM_DIM] } else { dims.to_vec() };
    dims.iter().flat_map(|&d| Registry::builtin().map(move |(name, _)| ProblemSpec::new(name, d))).collect()
}

/// Merge file, flags and defaults, then check the result.
pub fn resolve(experiment: Experiment, file: ExperimentConfig, over: Overrides) -> Result<Resolved> {
    if let Some(e) = file.experiment {
        ensure!(e == experiment, "config is for `{}` but `{}` was requested", e.as_str(), experiment.as_str());
    }
    let dims = over.dims.clone().unwrap_or(file.dims.clone());
    let mut problems = match &over.problems {
        Some(names) => names.iter().map(|n| ProblemSpec::new(n.clone(), DEFAULT_PROBLEM_DIM)).collect(),
        None => file.problems.clone(),
    };
    let input = over.input.clone().or(file.input.clone());
    if problems.is_empty() {
        if !(experiment == Experiment::Profile && input.is_some()) {
            problems = default_problems(&dims);
        }
    } else if !dims.is_empty() {
        problems = problems
            .iter()
            .flat_map(|p| dims.iter().map(move |&d| ProblemSpec { d, ..p.clone() }))
            .collect();
    }

    let (default_kinds, default_ells): (Vec<DirectionKind>, Vec<EllSpec>) = match experiment {
        Experiment::Timing => (DirectionKind::ALL.to_vec(), vec![EllSpec::Fraction(1, 1)]),
        _ => (DirectionKind::ALL.to_vec(), vec![EllSpec::Fraction(1, 2), EllSpec::Fraction(1, 1)]),
    };
    let kinds = over.kinds.clone().filter(|k| !k.is_empty()).unwrap_or(if file.kinds.is_empty() {
        default_kinds
    } else {
        file.kinds.clone()
    });
    let ells = over.ells.clone().filter(|e| !e.is_empty()).unwrap_or(if file.ells.is_empty() {
        default_ells
    } else {
        file.ells.clone()
    });

    let mut line_search = file.preset.clone().unwrap_or_default();
    if let Some(p) = over.preset {
        line_search = LineSearch::Preset(p);
    }
    let h = over.h.or(file.h);
    if let Some(h) = h {
        line_search = match line_search {
            LineSearch::Preset(p) => LineSearch::Explicit(LineSearchParams { base: Some(p), h: Some(h), ..Default::default() }),
            LineSearch::Explicit(p) => LineSearch::Explicit(LineSearchParams { h: Some(h), ..p }),
        };
    }

    let default_repeats = if experiment == Experiment::Timing { DEFAULT_TIMING_REPEATS } else { DEFAULT_VALUE_REPEATS };
    let oracle_file = file.oracle.clone().unwrap_or_default();
    let master_seed = over.master_seed.or(file.master_seed).unwrap_or(0);
    let base_grid = OracleGrid::default();
    let oracle = OracleGrid {
        dims: over.dims.clone().or(oracle_file.dims).unwrap_or(base_grid.dims),
        ells: over.ells.clone().or(oracle_file.ells).unwrap_or(base_grid.ells),
        hs: h.map(|h| vec![h]).or(oracle_file.hs).unwrap_or(base_grid.hs),
        functions: oracle_file.functions.unwrap_or(base_grid.functions),
        n_samples: over.samples.or(oracle_file.n_samples).unwrap_or(DEFAULT_ORACLE_SAMPLES),
        seed: master_seed,
    };

    let out_dir = over
        .out_dir
        .clone()
        .or(file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(experiment.as_str()));

    let resolved = Resolved {
        experiment,
        dims: if experiment == Experiment::Timing && dims.is_empty() { DEFAULT_TIMING_DIMS.to_vec() } else { dims },
        problems,
        kinds,
        ells,
        line_search,
        budget: over.budget.or(file.budget).unwrap_or(DEFAULT_BUDGET),
        repeats: over.repeats.or(file.repeats).unwrap_or(default_repeats),
        trials: over.trials.or(file.trials).unwrap_or(DEFAULT_GRAD_TRIALS),
        master_seed,
        grad_h: h.unwrap_or(DEFAULT_GRAD_H),
        taus: file.taus.clone().unwrap_or_else(default_tau_grid),
        tau_fixed: file.tau_fixed.unwrap_or(DEFAULT_TAU_FIXED),
        eval_points: file.eval_points.unwrap_or(DEFAULT_EVAL_POINTS),
        profile_metric: file.profile_metric.unwrap_or_default(),
        input,
        oracle,
        out_dir,
        jobs: if experiment == Experiment::Timing { 1 } else { over.jobs.or(file.jobs).unwrap_or(1).max(1) },
    };
    check(&resolved)?;
    Ok(resolved)
}

fn check(r: &Resolved) -> Result<()> {
    ensure!(!r.kinds.is_empty(), "no direction kinds configured");
    ensure!(!r.ells.is_empty(), "no direction counts configured");
    match r.experiment {
        Experiment::Timing => {
            ensure!(!r.dims.is_empty(), "timing needs at least one dimension");
            ensure!(r.repeats >= 2, "timing needs at least 2 repeats (std undefined), got {}", r.repeats);
            for &d in &r.dims {
                r.ells_for(d)?;
            }
            return Ok(());
        }
        Experiment::Oracle => {
            ensure!(r.oracle.n_samples >= 2, "oracle needs at least 2 samples");
            for &d in &r.oracle.dims {
                for e in &r.oracle.ells {
                    e.resolve(d).with_context(|| format!("oracle direction count `{e}` at d = {d}"))?;
                }
            }
            ensure!(r.oracle.hs.iter().all(|h| *h > 0.0 && h.is_finite()), "oracle h values must be positive");
            return Ok(());
        }
        _ => {}
    }

    let registry = Registry::new();
    let mut labels = BTreeSet::new();
    for p in &r.problems {
        ensure!(registry.contains(&p.name), "unknown problem `{}`", p.name);
        ensure!(labels.insert(p.label()), "duplicate problem `{}`", p.label());
        r.ells_for(p.d)?;
    }
    if r.input.is_none() {
        ensure!(!r.problems.is_empty(), "empty problem set");
    }
    ensure!(r.grad_h > 0.0 && r.grad_h.is_finite(), "h must be positive, got {}", r.grad_h);
    match r.experiment {
        Experiment::GradError => ensure!(r.trials >= 1, "trials must be at least 1"),
        Experiment::Optimize | Experiment::Profile => {
            ensure!(r.repeats >= 1, "repeats must be at least 1");
            for p in &r.problems {
                for ell in r.ells_for(p.d)? {
                    for &kind in &r.kinds {
                        r.line_search
                            .fd_config(kind, ell, r.budget)
                            .validate()
                            .with_context(|| format!("line search for {} kind={kind} ell={ell}", p.label()))?;
                    }
                }
            }
            if r.experiment == Experiment::Profile {
                ensure!(!r.taus.is_empty(), "empty tau grid");
                ensure!(r.taus.iter().all(|t| *t >= 0.0), "tau values must be non-negative");
                ensure!(r.eval_points >= 1, "eval_points must be at least 1");
                if r.profile_metric == ProfileMetric::GradError {
                    ensure!(r.trials >= 1, "trials must be at least 1");
                }
            }
        }
        _ => {}
    }
    if r.problems.iter().any(|p| p.params != ProblemParams::default() && !matches!(p.name.as_str(), "least_squares" | "logistic")) {
        bail!("constructor parameters are only accepted by least_squares and logistic");
    }
    Ok(())
}
