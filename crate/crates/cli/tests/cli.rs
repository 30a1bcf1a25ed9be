use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use zofd::commands::{grad_error_with, optimize_with, profile_with, Instance};
use zofd::config::{resolve, Experiment, ExperimentConfig, LineSearch, LineSearchParams, Overrides, Resolved};
use zofd::run_experiment;
use zofd_core::linesearch::Preset;
use zofd_core::{DirectionKind, EllSpec, FnObjective};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zofd"))
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn small_optimize(out: &Path, seed: u64, jobs: usize) -> Overrides {
    Overrides {
        out_dir: Some(out.to_path_buf()),
        master_seed: Some(seed),
        jobs: Some(jobs),
        dims: Some(vec![5]),
        kinds: Some(vec![DirectionKind::QrHaar, DirectionKind::Rademacher, DirectionKind::Butterfly]),
        problems: Some(vec!["rosenbrock".into(), "least_squares".into(), "griewank".into()]),
        budget: Some(150),
        repeats: Some(2),
        ..Overrides::default()
    }
}

fn resolved(experiment: Experiment, over: Overrides) -> Resolved {
    resolve(experiment, ExperimentConfig::default(), over).unwrap()
}

#[test]
fn reruns_are_byte_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    run_experiment(Experiment::Optimize, None, small_optimize(&a, 7, 1), None).unwrap();
    run_experiment(Experiment::Optimize, None, small_optimize(&b, 7, 1), None).unwrap();
    run_experiment(Experiment::Optimize, None, small_optimize(&c, 7, 3), None).unwrap();
    let sa = snapshot(&a);
    assert!(sa.len() > 2);
    assert_eq!(sa, snapshot(&b));
    assert_eq!(sa, snapshot(&c));

    let d = dir.path().join("d");
    run_experiment(Experiment::Optimize, None, small_optimize(&d, 8, 1), None).unwrap();
    assert_ne!(sa["optimize_summary.csv"], snapshot(&d)["optimize_summary.csv"]);
}

#[test]
fn every_output_starts_with_config_comment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    run_experiment(Experiment::Optimize, None, small_optimize(&root.join("opt"), 1, 1), None).unwrap();
    let grad = Overrides { trials: Some(2), out_dir: Some(root.join("grad")), ..small_optimize(root, 1, 1) };
    run_experiment(Experiment::GradError, None, grad, None).unwrap();
    let timing = Overrides {
        out_dir: Some(root.join("timing")),
        dims: Some(vec![8]),
        repeats: Some(3),
        master_seed: Some(1),
        ..Overrides::default()
    };
    run_experiment(Experiment::Timing, None, timing, None).unwrap();
    let prof = Overrides { out_dir: Some(root.join("prof")), ..small_optimize(root, 1, 1) };
    run_experiment(Experiment::Profile, None, prof, None).unwrap();

    let all = snapshot(root);
    assert!(all.len() > 10);
    for (name, bytes) in &all {
        let text = String::from_utf8(bytes.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# config_hash=") && first.contains("master_seed=1"), "{name}: {first}");
        assert!(!text.contains('\r'));
    }
}

#[test]
fn traces_agree_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(Experiment::Optimize, None, small_optimize(dir.path(), 3, 1), None).unwrap();
    let summary = fs::read_to_string(dir.path().join("optimize_summary.csv")).unwrap();
    let mut rows = 0;
    for line in summary.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        let trace = dir.path().join(format!("traces/{}__{}__ell{}__r{}.csv", f[0], f[1], f[2], f[3]));
        let text = fs::read_to_string(trace).unwrap();
        let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
        assert_eq!(last[0], f[4], "evals");
        assert_eq!(last[1].parse::<f64>().unwrap(), f[5].parse::<f64>().unwrap(), "best_f");
        assert!(f[4].parse::<usize>().unwrap() <= 150);
        let v: f64 = f[6].parse().unwrap();
        assert!((0.0..=1.0).contains(&v), "{line}");
        rows += 1;
    }
    // 3 problems x 3 kinds x 2 ells x 2 repeats.
    assert_eq!(rows, 36);
}

#[test]
fn constant_objective_has_unit_progress() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = resolved(Experiment::Optimize, small_optimize(dir.path(), 0, 2));
    let flat = Instance::new("flat_d5", Arc::new(FnObjective::new("flat", 5, |_| 3.0)));
    let known = Instance::new("flat_known_d5", Arc::new(FnObjective::new("flat", 5, |_| 3.0).with_minimum(3.0, vec![0.0; 5])));
    optimize_with(&cfg, &[flat, known]).unwrap();
    let summary = fs::read_to_string(dir.path().join("optimize_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(2).collect();
    assert_eq!(rows.len(), 24);
    for row in rows {
        assert!(row.ends_with(",3e0,1e0"), "{row}");
    }
}

#[test]
fn failed_runs_are_logged_and_never_solve() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = resolved(Experiment::Profile, small_optimize(dir.path(), 0, 1));
    cfg.line_search = LineSearch::Explicit(LineSearchParams {
        base: Some(Preset::Synthetic),
        strict_eval: Some(true),
        ..LineSearchParams::default()
    });
    // Finite only at the starting point.
    let cliff = FnObjective::new("cliff", 5, |x: &[f64]| if x.iter().all(|v| *v == 0.0) { 1.0 } else { f64::NAN });
    let bowl = FnObjective::new("bowl", 5, |x: &[f64]| x.iter().map(|v| (v - 1.0).powi(2)).sum())
        .with_minimum(0.0, vec![1.0; 5]);
    let inst = [Instance::new("cliff_d5", Arc::new(cliff)), Instance::new("bowl_d5", Arc::new(bowl))];

    let opt_dir = dir.path().join("opt");
    let opt_cfg = Resolved { out_dir: opt_dir.clone(), experiment: Experiment::Optimize, ..cfg.clone() };
    let report = optimize_with(&opt_cfg, &inst).unwrap();
    assert!(report.message.contains("12 failed"), "{}", report.message);
    let errors = fs::read_to_string(opt_dir.join("optimize_errors.csv")).unwrap();
    assert_eq!(errors.lines().filter(|l| l.starts_with("cliff_d5,")).count(), 12);

    profile_with(&cfg, &inst).unwrap();
    let table = fs::read_to_string(dir.path().join("profile_table.csv")).unwrap();
    assert!(table.lines().filter(|l| l.contains(",cliff_d5,")).all(|l| l.ends_with(",inf,1")), "{table}");
    let curve = fs::read_to_string(dir.path().join("profile.csv")).unwrap();
    for line in curve.lines().skip(2) {
        let frac: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(frac <= 0.5, "{line}");
    }
}

#[test]
fn profile_from_results_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(
        &input,
        "# config_hash=0 master_seed=0\nproblem,kind,ell,repeat,evals,best_f,V\n\
         p1,qr_haar,2,0,10,0,0.5\np1,qr_haar,2,1,10,0,0.1\np2,qr_haar,2,0,10,0,0.001\n\
         p1,gaussian,2,0,10,0,1\np2,gaussian,2,0,10,0,1\n",
    )
    .unwrap();
    let over = Overrides { input: Some(input), out_dir: Some(dir.path().join("out")), ..Overrides::default() };
    run_experiment(Experiment::Profile, None, over, None).unwrap();
    let table = fs::read_to_string(dir.path().join("out/profile_table.csv")).unwrap();
    assert!(table.contains("qr_haar,2,p1,3e-1,2\n"), "{table}");
    let curve = fs::read_to_string(dir.path().join("out/profile.csv")).unwrap();
    let at = |kind: &str, tau: &str| -> f64 {
        curve
            .lines()
            .find(|l| l.starts_with(&format!("{kind},2,{tau},")))
            .unwrap_or_else(|| panic!("{kind} {tau} missing in {curve}"))
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(at("qr_haar", "1e-2"), 0.5);
    assert_eq!(at("qr_haar", "1e0"), 1.0);
    assert_eq!(at("gaussian", "1e-1"), 0.0);
    assert_eq!(at("gaussian", "1e0"), 1.0);
    assert!(!dir.path().join("out/profile_budget.csv").exists());
}

#[test]
fn zero_gradient_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let over = Overrides { trials: Some(1), ..small_optimize(dir.path(), 0, 1) };
    let cfg = resolved(Experiment::GradError, over);
    let flat = FnObjective::new("flat", 5, |_| 0.0).with_gradient(|_| vec![0.0; 5]);
    let err = grad_error_with(&cfg, &[Instance::new("flat_d5", Arc::new(flat))]).unwrap_err();
    assert!(format!("{err:#}").contains("flat_d5"), "{err:#}");
}

#[test]
fn grad_error_on_linear_problem_matches_projection() {
    // For F = aᵀx and one coordinate direction, g = d a_i e_i.
    let dir = tempfile::tempdir().unwrap();
    let over = Overrides {
        trials: Some(4),
        kinds: Some(vec![DirectionKind::Coordinate]),
        ells: Some(vec![EllSpec::Count(1), EllSpec::Fraction(1, 1)]),
        ..small_optimize(dir.path(), 0, 1)
    };
    let cfg = resolved(Experiment::GradError, over);
    let lin = FnObjective::new("lin", 4, |x: &[f64]| x.iter().sum()).with_gradient(|_| vec![1.0; 4]);
    grad_error_with(&cfg, &[Instance::new("lin_d4", Arc::new(lin))]).unwrap();
    let text = fs::read_to_string(dir.path().join("grad_error.csv")).unwrap();
    for line in text.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        let e: f64 = f[4].parse().unwrap();
        // ell = 1: ‖(4−1, −1, −1, −1)‖/2 = √12/2.
        let want = if f[2] == "1" { 12f64.sqrt() / 2.0 } else { 0.0 };
        assert!((e - want).abs() < 1e-6, "{line}");
    }
}

fn exit_code(args: &[&str], out: &Path) -> i32 {
    bin().args(args).arg("--out").arg(out).output().unwrap().status.code().unwrap()
}

#[test]
fn invalid_configurations_exit_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(exit_code(&["timing", "--repeats", "1", "--dim", "8"], &out), 2);
    assert_eq!(exit_code(&["grad-error", "--trials", "0", "--problem", "qing"], &out), 2);
    assert_eq!(exit_code(&["optimize", "--budget", "20", "--problem", "qing", "--dim", "50"], &out), 2);
    assert_eq!(exit_code(&["optimize", "--problem", "nope"], &out), 2);
    assert_eq!(exit_code(&["optimize", "--ell", "9", "--problem", "qing", "--dim", "4"], &out), 2);
    assert_eq!(exit_code(&["optimize", "--kind", "hexagonal"], &out), 2);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"experiment": "timing"}"#).unwrap();
    assert_eq!(exit_code(&["optimize", "--config", cfg.to_str().unwrap()], &out), 2);
    fs::write(&cfg, r#"{"unknown_field": 1}"#).unwrap();
    assert_eq!(exit_code(&["optimize", "--config", cfg.to_str().unwrap()], &out), 2);
    assert!(!out.exists());
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{
            "experiment": "optimize",
            "problems": [{"name": "least_squares", "d": 4, "seed": 5, "params": {"L": 10.0, "mu": 1.0}}],
            "kinds": ["stiefel", "spherical"],
            "ells": [1, "d"],
            "preset": {"base": "cutest", "c": 0.001},
            "budget": 80,
            "repeats": 1,
            "master_seed": 11
        }"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = bin().args(["optimize", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let summary = fs::read_to_string(out.join("optimize_summary.csv")).unwrap();
    assert!(summary.starts_with("# config_hash="));
    assert!(summary.contains("master_seed=11"));
    assert_eq!(summary.lines().count(), 2 + 4);
}

#[test]
fn oracle_exit_code_tracks_the_checks() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["oracle", "--dim", "4,5", "--ell", "1,2,d", "--samples", "20000", "--seed", "4"];
    let ok = dir.path().join("ok");
    assert_eq!(exit_code(&args, &ok), 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(ok.join("oracle.json")).unwrap()).unwrap();
    assert_eq!(json["all_pass"], true);
    assert_eq!(json["master_seed"], 4);
    assert_eq!(json["cells"].as_array().unwrap().len(), 2 * 3 * 2 * 2);
    let csv = fs::read_to_string(ok.join("oracle.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains(json["config_hash"].as_str().unwrap()));

    let broken = dir.path().join("broken");
    let mut with_fault = args.to_vec();
    with_fault.extend(["--inject-fault", "drop-scale"]);
    assert_eq!(exit_code(&with_fault, &broken), 1);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(broken.join("oracle.json")).unwrap()).unwrap();
    assert_eq!(json["all_pass"], false);
}

#[test]
fn list_problems_names_builtins() {
    let out = bin().arg("list-problems").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["least_squares", "qing", "rosenbrock", "logistic", "trid", "griewank"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{name}\t"))), "{name}");
    }
}

#[test]
fn profile_with_configured_tau_grid() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("grad.csv");
    fs::write(&input, "problem,kind,ell,trial,rel_error\nonly,coordinate,3,0,0.05\n").unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"experiment": "profile", "taus": [0.01, 0.1]}"#).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["profile", "--config"])
        .arg(&cfg)
        .arg("--input")
        .arg(&input)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let curve = fs::read_to_string(out.join("profile.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().skip(2).collect();
    assert_eq!(rows, ["coordinate,3,1e-2,0e0", "coordinate,3,1e-1,1e0"]);
}

fn grad_errors(args: &[&str], out: &Path) -> Vec<f64> {
    let status = bin().arg("grad-error").args(args).arg("--out").arg(out).output().unwrap().status;
    assert!(status.success());
    fs::read_to_string(out.join("grad_error.csv"))
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn orthogonal_full_rank_gradient_is_near_exact() {
    let dir = tempfile::tempdir().unwrap();
    for d in ["5", "50"] {
        let errs = grad_errors(
            &["--problem", "least_squares", "--dim", d, "--kind", "qr_haar", "--ell", "d", "--trials", "50"],
            &dir.path().join(d),
        );
        assert_eq!(errs.len(), 50);
        assert!(errs.iter().all(|e| *e <= 1e-3), "d={d}: {errs:?}");
    }
}

#[test]
fn coordinate_full_rank_error_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let errs = grad_errors(
        &["--problem", "qing,rosenbrock,trid", "--dim", "12", "--kind", "coordinate", "--ell", "d", "--trials", "5"],
        dir.path(),
    );
    assert_eq!(errs.len(), 15);
    for chunk in errs.chunks(5) {
        assert!(chunk.iter().all(|e| (e - chunk[0]).abs() <= 1e-12 * chunk[0].max(1e-300)), "{chunk:?}");
        assert!(chunk[0] < 1e-4);
    }
}
