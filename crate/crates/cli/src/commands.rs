//! The experiment subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use zofd_core::directions::generate;
use zofd_core::linesearch::{run, RunTrace};
use zofd_core::metrics::{fraction_solved, rel_grad_error, time_generation, value_progress, ProfileTable};
use zofd_core::objectives::{Objective, ProblemSpec, Registry};
use zofd_core::rng::stream_id_for;
use zofd_core::smoothing::{run_oracle, OracleCell, OracleGrid, Surrogate, TestFunction, UnbiasednessReport};
use zofd_core::{forward_fd, DirectionKind, EllSpec, RngStream};

use crate::config::{ProfileMetric, Resolved};
use crate::output::{field, num, OutputDir};

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub files: Vec<PathBuf>,
    /// False when a verification check failed (oracle only).
    pub ok: bool,
    pub message: String,
}

/// Order-preserving map over `items` on up to `jobs` scoped threads.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect()
}

/// Stream for one cell of the batch, keyed by its labels rather than its
/// position.
pub fn cell_stream(master_seed: u64, parts: &[&str]) -> RngStream {
    RngStream::new(master_seed, stream_id_for(parts))
}

/// A problem ready to run.
#[derive(Clone)]
pub struct Instance {
    pub label: String,
    pub objective: Arc<dyn Objective>,
}

impl Instance {
    pub fn new(label: impl Into<String>, objective: Arc<dyn Objective>) -> Self {
        Self { label: label.into(), objective }
    }

    pub fn d(&self) -> usize {
        self.objective.dim()
    }
}

pub fn instantiate(problems: &[ProblemSpec]) -> Result<Vec<Instance>> {
    let registry = Registry::new();
    problems
        .iter()
        .map(|spec| {
            let f = registry.instantiate(spec).with_context(|| format!("building problem {}", spec.label()))?;
            Ok(Instance::new(spec.label(), f))
        })
        .collect()
}

fn open_output(cfg: &Resolved) -> Result<OutputDir> {
    OutputDir::create(&cfg.out_dir, cfg.header_line())
}

/// `(EllSpec label, resolved ell)` per problem dimension.
fn ell_cells(cfg: &Resolved, d: usize) -> Result<Vec<(String, usize)>> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for spec in &cfg.ells {
        let ell = spec.resolve(d)?;
        if !out.iter().any(|(_, e)| *e == ell) {
            out.push((spec.to_string(), ell));
        }
    }
    Ok(out)
}

pub fn cmd_timing(cfg: &Resolved) -> Result<Report> {
    let out = open_output(cfg)?;
    let mut rows = Vec::new();
    for &kind in &cfg.kinds {
        for &d in &cfg.dims {
            for ell in cfg.ells_for(d)? {
                let stream = cell_stream(cfg.master_seed, &["timing", kind.as_str(), &d.to_string(), &ell.to_string()]);
                let s = time_generation(kind, d, ell, cfg.repeats, &stream)?;
                rows.push(format!("{kind},{d},{ell},{},{},{}", num(s.mean_seconds), num(s.std_seconds), s.repeats));
            }
        }
    }
    let n = rows.len();
    let path = out.write_csv("timing.csv", "kind,d,ell,mean_s,std_s,repeats", rows)?;
    Ok(Report { files: vec![path], ok: true, message: format!("{n} timing rows") })
}

/// One relative-error sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub problem: String,
    pub kind: DirectionKind,
    pub ell_label: String,
    pub ell: usize,
    pub trial: usize,
    pub rel_error: f64,
}

pub fn grad_error_samples(cfg: &Resolved, instances: &[Instance]) -> Result<Vec<GradSample>> {
    struct Cell<'a> {
        inst: &'a Instance,
        x: Vec<f64>,
        fx: f64,
        grad: Vec<f64>,
        kind: DirectionKind,
        ell_label: String,
        ell: usize,
    }
    let mut cells = Vec::new();
    for inst in instances {
        let f = inst.objective.as_ref();
        let x = f.x0();
        let grad = f
            .gradient(&x)
            .ok_or_else(|| anyhow!("problem `{}` has no analytic gradient", inst.label))?;
        if grad.iter().all(|g| *g == 0.0) {
            bail!("problem `{}`: gradient is zero at the evaluation point, relative error undefined", inst.label);
        }
        let fx = f.value(&x);
        for &kind in &cfg.kinds {
            for (ell_label, ell) in ell_cells(cfg, inst.d())? {
                cells.push(Cell { inst, x: x.clone(), fx, grad: grad.clone(), kind, ell_label, ell });
            }
        }
    }
    let results = par_map(&cells, cfg.jobs, |c| -> Result<Vec<GradSample>> {
        (0..cfg.trials)
            .map(|trial| {
                let stream = cell_stream(
                    cfg.master_seed,
                    &[&c.inst.label, c.kind.as_str(), &c.ell.to_string(), &trial.to_string()],
                );
                let p = generate(c.kind, c.x.len(), c.ell, &mut stream.rng())?;
                let g = forward_fd(c.inst.objective.as_ref(), &c.x, cfg.grad_h, &p, Some(c.fx))?.g;
                Ok(GradSample {
                    problem: c.inst.label.clone(),
                    kind: c.kind,
                    ell_label: c.ell_label.clone(),
                    ell: c.ell,
                    trial,
                    rel_error: rel_grad_error(&g, &c.grad)?,
                })
            })
            .collect()
    });
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

pub fn cmd_grad_error(cfg: &Resolved) -> Result<Report> {
    grad_error_with(cfg, &instantiate(&cfg.problems)?)
}

pub fn grad_error_with(cfg: &Resolved, instances: &[Instance]) -> Result<Report> {
    let samples = grad_error_samples(cfg, instances)?;
    let out = open_output(cfg)?;
    let rows = samples
        .iter()
        .map(|s| format!("{},{},{},{},{}", s.problem, s.kind, s.ell, s.trial, num(s.rel_error)));
    let path = out.write_csv("grad_error.csv", "problem,kind,ell,trial,rel_error", rows)?;
    Ok(Report { files: vec![path], ok: true, message: format!("{} gradient-error samples", samples.len()) })
}

/// One optimization run and its normalized progress.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub problem: String,
    pub kind: DirectionKind,
    pub ell_label: String,
    pub ell: usize,
    pub repeat: usize,
    pub result: std::result::Result<RunTrace, String>,
}

/// Reference minimum per problem: the known `f_min`, otherwise the lowest
/// value reached by any run in the batch (or the starting value).
fn reference_minima(instances: &[Instance], runs: &[RunOutcome]) -> BTreeMap<String, (f64, f64)> {
    let mut out = BTreeMap::new();
    for inst in instances {
        let f0 = inst.objective.value(&inst.objective.x0());
        let f_min = inst.objective.f_min().unwrap_or_else(|| {
            runs.iter()
                .filter(|r| r.problem == inst.label)
                .filter_map(|r| r.result.as_ref().ok().map(|t| t.best_f))
                .fold(f0, f64::min)
        });
        out.insert(inst.label.clone(), (f0, f_min));
    }
    out
}

/// `V = (f − f_min)/(f0 − f_min)`, or 1 when no progress is possible.
pub fn progress(f: f64, f0: f64, f_min: f64) -> f64 {
    if f0 <= f_min {
        return 1.0;
    }
    value_progress(f, f0, f_min).unwrap_or(1.0)
}

pub fn optimize_runs(cfg: &Resolved, instances: &[Instance]) -> Result<Vec<RunOutcome>> {
    struct Cell<'a> {
        inst: &'a Instance,
        kind: DirectionKind,
        ell_label: String,
        ell: usize,
        repeat: usize,
    }
    let mut cells = Vec::new();
    for inst in instances {
        for &kind in &cfg.kinds {
            for (ell_label, ell) in ell_cells(cfg, inst.d())? {
                for repeat in 0..cfg.repeats {
                    cells.push(Cell { inst, kind, ell_label: ell_label.clone(), ell, repeat });
                }
            }
        }
    }
    Ok(par_map(&cells, cfg.jobs, |c| {
        let fd = cfg.line_search.fd_config(c.kind, c.ell, cfg.budget);
        let stream = cell_stream(
            cfg.master_seed,
            &[&c.inst.label, c.kind.as_str(), &c.ell.to_string(), &c.repeat.to_string()],
        );
        let f = c.inst.objective.as_ref();
        RunOutcome {
            problem: c.inst.label.clone(),
            kind: c.kind,
            ell_label: c.ell_label.clone(),
            ell: c.ell,
            repeat: c.repeat,
            result: run(f, &f.x0(), &fd, &stream).map_err(|e| e.to_string()),
        }
    }))
}

pub fn cmd_optimize(cfg: &Resolved) -> Result<Report> {
    optimize_with(cfg, &instantiate(&cfg.problems)?)
}

pub fn trace_file_name(r: &RunOutcome) -> String {
    format!("traces/{}__{}__ell{}__r{}.csv", r.problem, r.kind, r.ell, r.repeat)
}

pub fn optimize_with(cfg: &Resolved, instances: &[Instance]) -> Result<Report> {
    let runs = optimize_runs(cfg, instances)?;
    let minima = reference_minima(instances, &runs);
    let out = open_output(cfg)?;
    let mut files = Vec::new();
    let mut summary = Vec::new();
    let mut errors = Vec::new();
    for r in &runs {
        match &r.result {
            Ok(trace) => {
                files.push(out.write_csv_body(&trace_file_name(r), &trace.to_csv())?);
                let (f0, f_min) = minima[&r.problem];
                summary.push(format!(
                    "{},{},{},{},{},{},{}",
                    r.problem,
                    r.kind,
                    r.ell,
                    r.repeat,
                    trace.evals_used,
                    num(trace.best_f),
                    num(progress(trace.best_f, f0, f_min))
                ));
            }
            Err(e) => errors.push(format!("{},{},{},{},{}", r.problem, r.kind, r.ell, r.repeat, field(e))),
        }
    }
    let n_ok = summary.len();
    let n_err = errors.len();
    files.insert(0, out.write_csv("optimize_summary.csv", "problem,kind,ell,repeat,evals,best_f,V", summary)?);
    files.insert(1, out.write_csv("optimize_errors.csv", "problem,kind,ell,repeat,error", errors)?);
    Ok(Report { files, ok: true, message: format!("{n_ok} runs completed, {n_err} failed") })
}

/// Per-(kind, ell) problem tables feeding the profile curves.
struct Groups {
    order: Vec<(String, String)>,
    tables: BTreeMap<(String, String), ProfileTable>,
}

impl Groups {
    fn new() -> Self {
        Self { order: Vec::new(), tables: BTreeMap::new() }
    }

    fn push(&mut self, kind: &str, ell: &str, problem: &str, samples: &[f64]) -> Result<()> {
        let key = (kind.to_string(), ell.to_string());
        if !self.tables.contains_key(&key) {
            self.order.push(key.clone());
        }
        let table = self.tables.entry(key).or_default();
        if samples.is_empty() {
            // Every repeat failed: never counts as solved.
            table.push(problem, f64::INFINITY, 1)?;
        } else {
            table.push_samples(problem, samples)?;
        }
        Ok(())
    }
}

fn group_samples<'a>(
    records: impl Iterator<Item = (&'a str, String, &'a str, Option<f64>)>,
) -> Result<Groups> {
    // (kind, ell, problem) -> samples, keeping first-seen order.
    let mut keys: Vec<(String, String, String)> = Vec::new();
    let mut samples: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for (kind, ell, problem, v) in records {
        let key = (kind.to_string(), ell, problem.to_string());
        let entry = samples.entry(key.clone()).or_insert_with(|| {
            keys.push(key);
            Vec::new()
        });
        if let Some(v) = v {
            entry.push(v);
        }
    }
    let mut groups = Groups::new();
    for key in keys {
        groups.push(&key.0, &key.1, &key.2, &samples[&key])?;
    }
    Ok(groups)
}

/// `(kind, ell, problem, value)`; `None` marks a failed run.
type Record = (String, String, String, Option<f64>);

/// Rows of an `optimize_summary.csv` (`V` column) or `grad_error.csv`
/// (`rel_error` column).
fn read_profile_input(path: &Path) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let value_col = match col("V").or(col("rel_error")) {
        Some(i) => i,
        None => bail!("{}: expected a `V` or `rel_error` column", path.display()),
    };
    let need = |name: &str| col(name).ok_or_else(|| anyhow!("{}: missing column `{name}`", path.display()));
    let (pi, ki, ei) = (need("problem")?, need("kind")?, need("ell")?);
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let v: f64 = row[value_col].parse().with_context(|| format!("bad value `{}`", &row[value_col]))?;
        records.push((row[ki].to_string(), row[ei].to_string(), row[pi].to_string(), Some(v)));
    }
    if records.is_empty() {
        bail!("{}: no rows to profile", path.display());
    }
    Ok(records)
}

pub fn cmd_profile(cfg: &Resolved) -> Result<Report> {
    let instances = if cfg.input.is_some() { Vec::new() } else { instantiate(&cfg.problems)? };
    profile_with(cfg, &instances)
}

pub fn profile_with(cfg: &Resolved, instances: &[Instance]) -> Result<Report> {
    let mut budget_rows = None;
    let groups = if let Some(path) = &cfg.input {
        let records = read_profile_input(path)?;
        group_samples(records.iter().map(|(k, e, p, v)| (k.as_str(), e.clone(), p.as_str(), *v)))?
    } else {
        if instances.is_empty() {
            bail!("empty problem set");
        }
        match cfg.profile_metric {
            ProfileMetric::GradError => {
                let samples = grad_error_samples(cfg, instances)?;
                group_samples(
                    samples.iter().map(|s| (s.kind.as_str(), s.ell_label.clone(), s.problem.as_str(), Some(s.rel_error))),
                )?
            }
            ProfileMetric::Optimize => {
                let runs = optimize_runs(cfg, instances)?;
                let minima = reference_minima(instances, &runs);
                let v = |r: &RunOutcome, within: Option<usize>| {
                    r.result.as_ref().ok().and_then(|t| {
                        let (f0, f_min) = minima[&r.problem];
                        let f = match within {
                            Some(e) => t.best_within(e)?,
                            None => t.best_f,
                        };
                        Some(progress(f, f0, f_min))
                    })
                };
                let checkpoints: Vec<usize> =
                    (1..=cfg.eval_points).map(|k| (cfg.budget * k).div_ceil(cfg.eval_points)).collect();
                let mut rows = Vec::new();
                let mut per_budget = Vec::new();
                for &e in &checkpoints {
                    per_budget.push(group_samples(
                        runs.iter().map(|r| (r.kind.as_str(), r.ell_label.clone(), r.problem.as_str(), v(r, Some(e)))),
                    )?);
                }
                let groups =
                    group_samples(runs.iter().map(|r| (r.kind.as_str(), r.ell_label.clone(), r.problem.as_str(), v(r, None))))?;
                for key in &groups.order {
                    for (e, g) in checkpoints.iter().zip(&per_budget) {
                        let frac = fraction_solved(&g.tables[key], cfg.tau_fixed)?;
                        rows.push(format!("{},{},{e},{}", key.0, key.1, num(frac)));
                    }
                }
                budget_rows = Some(rows);
                groups
            }
        }
    };

    let out = open_output(cfg)?;
    let mut curve = Vec::new();
    let mut table_rows = Vec::new();
    for key in &groups.order {
        let table = &groups.tables[key];
        for &tau in &cfg.taus {
            curve.push(format!("{},{},{},{}", key.0, key.1, num(tau), num(fraction_solved(table, tau)?)));
        }
        for r in &table.rows {
            table_rows.push(format!("{},{},{},{},{}", key.0, key.1, r.problem_id, num(r.expected_value), r.n_samples));
        }
    }
    let mut files = vec![
        out.write_csv("profile.csv", "kind,ell,tau,fraction_solved", curve)?,
        out.write_csv("profile_table.csv", "kind,ell,problem_id,expected_value,n_samples", table_rows)?,
    ];
    if let Some(rows) = budget_rows {
        files.push(out.write_csv("profile_budget.csv", "kind,ell,evals,fraction_solved", rows)?);
    }
    Ok(Report { files, ok: true, message: format!("{} (kind, ell) profiles", groups.order.len()) })
}

#[derive(Serialize)]
struct OracleFile<'a> {
    config_hash: String,
    master_seed: u64,
    grid: &'a OracleGrid,
    all_pass: bool,
    cells: &'a [OracleCell],
    unbiasedness: &'a [(TestFunction, usize, f64, UnbiasednessReport)],
}

pub fn cmd_oracle(cfg: &Resolved) -> Result<Report> {
    oracle_with(cfg, zofd_core::smoothing::production_surrogate())
}

/// [`cmd_oracle`] with a substitute surrogate, for fault injection.
pub fn oracle_with(cfg: &Resolved, surrogate: Surrogate) -> Result<Report> {
    let outcome = run_oracle(&cfg.oracle, surrogate)?;
    let out = open_output(cfg)?;
    let file = OracleFile {
        config_hash: cfg.config_hash(),
        master_seed: cfg.master_seed,
        grid: &cfg.oracle,
        all_pass: outcome.all_pass,
        cells: &outcome.cells,
        unbiasedness: &outcome.unbiasedness,
    };
    let json = serde_json::to_string_pretty(&file)? + "\n";
    let rows = outcome.cells.iter().map(|c| {
        let r = &c.report;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.function.as_str(),
            r.d,
            r.ell,
            num(r.h),
            r.n_samples,
            num(r.mse_structured),
            num(r.mse_structured_se),
            num(r.mse_unstructured),
            num(r.mse_unstructured_se),
            num(r.grad_smooth_norm_sq),
            num(r.predicted_gap),
            num(r.observed_gap),
            num(r.combined_se),
            r.inequality_holds,
            r.gap_identity_holds
        )
    });
    let files = vec![
        out.write_raw("oracle.json", &json)?,
        out.write_csv(
            "oracle.csv",
            "function,d,ell,h,n_samples,mse_structured,mse_structured_se,mse_unstructured,mse_unstructured_se,\
             grad_smooth_norm_sq,predicted_gap,observed_gap,combined_se,inequality_holds,gap_identity_holds",
            rows,
        )?,
    ];
    let failed: Vec<String> = outcome
        .failures()
        .map(|c| format!("{} d={} ell={} h={}", c.function.as_str(), c.report.d, c.report.ell, c.report.h))
        .chain(
            outcome
                .unbiasedness
                .iter()
                .filter(|(.., r)| !r.passes)
                .map(|(f, d, h, r)| format!("unbiasedness {} {} d={d} h={h}", r.kind, f.as_str())),
        )
        .collect();
    let message = if failed.is_empty() {
        format!("{} cells, all checks pass", outcome.cells.len())
    } else {
        format!("{} failing checks: {}", failed.len(), failed.join("; "))
    };
    Ok(Report { files, ok: outcome.all_pass, message })
}

/// `name<TAB>description` lines.
pub fn list_problems() -> String {
    Registry::new().list().into_iter().map(|(n, d)| format!("{n}\t{d}\n")).collect()
}

pub fn ell_spec_list(s: &str) -> Result<Vec<EllSpec>> {
    s.split(',').map(|p| p.trim().parse::<EllSpec>().map_err(anyhow::Error::from)).collect()
}
