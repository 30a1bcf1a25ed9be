//! Finite-difference descent with an adaptive Armijo step and a hard
//! evaluation budget.
//!
//! Each outer iteration draws a fresh direction matrix, builds the surrogate
//! gradient `g` at the current iterate (reusing the cached `F(x)`), then
//! backtracks `γ ← max(γθ, γ_min)` until
//! `F(x − γg) ≤ F(x) − cγ‖g‖²` holds or `γ` sits at `γ_min`. On success the
//! iterate moves and `γ ← min(γρ, γ_max)`; otherwise the iterate stays put.
//! `γ` carries over between iterations.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::directions::{DirectionKind, DirectionSampler};
use crate::error::{Error, Result};
use crate::estimator::{checked_eval, forward_fd};
use crate::norm_sq;
use crate::objectives::Objective;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Synthetic,
    Cutest,
    Adversarial,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Synthetic => "synthetic",
            Preset::Cutest => "cutest",
            Preset::Adversarial => "adversarial",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Preset::Synthetic),
            "cutest" => Ok(Preset::Cutest),
            "adversarial" => Ok(Preset::Adversarial),
            other => Err(Error::Parameter(format!("unknown preset `{other}`"))),
        }
    }
}

pub const DEFAULT_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    /// Finite-difference step, constant across iterations.
    pub h: f64,
    pub gamma0: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Armijo constant.
    pub c: f64,
    /// Contraction factor in (0, 1).
    pub theta: f64,
    /// Expansion factor, at least 1.
    pub rho_exp: f64,
    /// Total objective evaluations allowed, including `F(x0)`.
    pub budget: usize,
    pub ell: usize,
    pub kind: DirectionKind,
    /// Error on a non-finite trial value instead of contracting.
    #[serde(default)]
    pub strict_eval: bool,
}

impl FdConfig {
    pub fn preset(preset: Preset, kind: DirectionKind, ell: usize) -> Self {
        let base = FdConfig {
            h: 1e-7,
            gamma0: 1.0,
            gamma_min: 1e-10,
            gamma_max: 1000.0,
            c: 1e-7,
            theta: 0.5,
            rho_exp: 2.0,
            budget: DEFAULT_BUDGET,
            ell,
            kind,
            strict_eval: false,
        };
        match preset {
            Preset::Synthetic => base,
            Preset::Cutest => FdConfig { gamma0: 0.5, c: 1e-5, gamma_max: 1.0, ..base },
            Preset::Adversarial => FdConfig { theta: 0.9, rho_exp: 1.0 / 0.9, ..base },
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h must be positive, got {}", self.h));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min <= self.gamma0 && self.gamma0 <= self.gamma_max)
            || !self.gamma_max.is_finite()
        {
            return bad(format!(
                "need 0 < gamma_min <= gamma0 <= gamma_max < inf, got {} / {} / {}",
                self.gamma_min, self.gamma0, self.gamma_max
            ));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad(format!("Armijo constant c must be >= 0, got {}", self.c));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if !(self.rho_exp >= 1.0 && self.rho_exp.is_finite()) {
            return bad(format!("rho_exp must be >= 1, got {}", self.rho_exp));
        }
        if self.ell == 0 {
            return bad("ell must be at least 1".into());
        }
        if self.budget < self.ell + 2 {
            return bad(format!("budget {} is below ell + 2 = {}", self.budget, self.ell + 2));
        }
        Ok(())
    }
}

/// Outcome of one outer iteration (plus the initial point).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub evals: usize,
    pub f_best: f64,
    pub f_current: f64,
    /// Step size after this iteration's update.
    pub gamma: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// The first record is the starting point, flagged as accepted.
    pub records: Vec<TraceRecord>,
    pub final_x: Vec<f64>,
    pub best_x: Vec<f64>,
    pub best_f: f64,
    /// Objective calls actually made.
    pub evals_used: usize,
}

impl RunTrace {
    pub fn initial_value(&self) -> f64 {
        self.records[0].f_current
    }

    /// Best value among records with `evals <= budget`.
    pub fn best_within(&self, budget: usize) -> Option<f64> {
        self.records.iter().take_while(|r| r.evals <= budget).last().map(|r| r.f_best)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("evals,f_best,f_current,gamma,accepted\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:e},{:e},{:e},{}", r.evals, r.f_best, r.f_current, r.gamma, r.accepted);
        }
        out
    }
}

/// Run the line-search method from `x0` until the next objective call would
/// exceed `cfg.budget`.
///
/// The budget is checked before every call. An iteration whose `ell` probes
/// no longer fit is not started; a line search cut short by the budget leaves
/// the last accepted iterate in place and is logged as a rejected record, so
/// the final record always carries `evals_used`.
pub fn run<O: Objective + ?Sized>(f: &O, x0: &[f64], cfg: &FdConfig, rng: &RngStream) -> Result<RunTrace> {
    cfg.validate()?;
    let d = x0.len();
    if d != f.dim() {
        return Err(Error::Parameter(format!("x0 has length {d} but objective has d = {}", f.dim())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("x0 must be finite".into()));
    }
    let mut sampler = DirectionSampler::new(cfg.kind, d, cfg.ell)?;
    let mut rng = rng.rng();

    let mut x = x0.to_vec();
    let mut fx = checked_eval(f, &x)?;
    let mut evals = 1;
    let mut gamma = cfg.gamma0;
    let mut best_x = x.clone();
    let mut best_f = fx;
    let mut records = vec![TraceRecord { evals, f_best: fx, f_current: fx, gamma, accepted: true }];
    let mut trial = vec![0.0; d];

    'outer: while evals + cfg.ell <= cfg.budget {
        let p = sampler.next(&mut rng)?;
        let est = forward_fd(f, &x, cfg.h, p, Some(fx))?;
        evals += est.evals_used;
        let g = est.g;
        let g_norm_sq = norm_sq(&g);

        let accepted_value = loop {
            if evals >= cfg.budget {
                break 'outer;
            }
            trial.iter_mut().zip(&x).zip(&g).for_each(|((t, xi), gi)| *t = xi - gamma * gi);
            let ft = f.value(&trial);
            evals += 1;
            if !ft.is_finite() && cfg.strict_eval {
                return Err(Error::Evaluation { point: trial, value: ft });
            }
            // NaN compares false, so non-finite trials fail the test.
            if ft <= fx - cfg.c * gamma * g_norm_sq {
                break Some(ft);
            }
            if gamma <= cfg.gamma_min {
                break None;
            }
            gamma = (gamma * cfg.theta).max(cfg.gamma_min);
        };

        if let Some(ft) = accepted_value {
            std::mem::swap(&mut x, &mut trial);
            fx = ft;
            gamma = (gamma * cfg.rho_exp).min(cfg.gamma_max);
            if fx < best_f {
                best_f = fx;
                best_x.clone_from(&x);
            }
        }
        records.push(TraceRecord {
            evals,
            f_best: best_f,
            f_current: fx,
            gamma,
            accepted: accepted_value.is_some(),
        });
    }

    if records.last().is_some_and(|r| r.evals < evals) {
        records.push(TraceRecord { evals, f_best: best_f, f_current: fx, gamma, accepted: false });
    }
    Ok(RunTrace { records, final_x: x, best_x, best_f, evals_used: evals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::FnObjective;

    fn half_sq(d: usize) -> FnObjective {
        FnObjective::new("half_sq", d, |x: &[f64]| 0.5 * norm_sq(x))
    }

    #[test]
    fn presets_carry_published_values() {
        let s = FdConfig::preset(Preset::Synthetic, DirectionKind::QrHaar, 4);
        assert_eq!((s.gamma0, s.c, s.gamma_min, s.gamma_max, s.theta, s.rho_exp, s.h), (1.0, 1e-7, 1e-10, 1000.0, 0.5, 2.0, 1e-7));
        let c = FdConfig::preset(Preset::Cutest, DirectionKind::QrHaar, 4);
        assert_eq!((c.gamma0, c.c, c.gamma_min, c.gamma_max, c.theta, c.rho_exp), (0.5, 1e-5, 1e-10, 1.0, 0.5, 2.0));
        let a = FdConfig::preset(Preset::Adversarial, DirectionKind::QrHaar, 4);
        assert_eq!((a.theta, a.rho_exp), (0.9, 1.0 / 0.9));
        for p in [s, c, a] {
            p.validate().unwrap();
        }
        assert_eq!("cutest".parse::<Preset>().unwrap(), Preset::Cutest);
    }

    #[test]
    fn config_validation() {
        let ok = FdConfig::preset(Preset::Synthetic, DirectionKind::Gaussian, 3);
        assert!(FdConfig { budget: 4, ..ok.clone() }.validate().is_err());
        assert!(FdConfig { budget: 5, ..ok.clone() }.validate().is_ok());
        assert!(FdConfig { theta: 1.0, ..ok.clone() }.validate().is_err());
        assert!(FdConfig { rho_exp: 0.5, ..ok.clone() }.validate().is_err());
        assert!(FdConfig { gamma0: 2000.0, ..ok.clone() }.validate().is_err());
        assert!(FdConfig { gamma_min: 0.0, ..ok.clone() }.validate().is_err());
        assert!(FdConfig { c: -1.0, ..ok.clone() }.validate().is_err());
        assert!(FdConfig { h: 0.0, ..ok }.validate().is_err());
    }

    #[test]
    fn first_iteration_by_hand() {
        let f = half_sq(2);
        let cfg = FdConfig::preset(Preset::Synthetic, DirectionKind::Coordinate, 2).with_budget(4);
        let trace = run(&f, &[1.0, 1.0], &cfg, &RngStream::new(0, 0)).unwrap();
        // F(x0), two probes, one trial.
        assert_eq!(trace.evals_used, 4);
        let r = trace.records[1];
        assert!(r.accepted);
        assert_eq!(r.gamma, 2.0);
        assert!(r.f_current < 1e-13);
        assert!(trace.final_x.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn zero_gradient_accepts_and_expands() {
        let f = FnObjective::new("flat", 3, |_: &[f64]| 5.0);
        let cfg = FdConfig::preset(Preset::Synthetic, DirectionKind::QrHaar, 2).with_budget(4 + 3 * 10);
        let trace = run(&f, &[0.3, 0.1, -0.2], &cfg, &RngStream::new(1, 0)).unwrap();
        assert_eq!(trace.final_x, vec![0.3, 0.1, -0.2]);
        let gammas: Vec<f64> = trace.records[1..].iter().map(|r| r.gamma).collect();
        assert_eq!(gammas[0], 2.0);
        assert_eq!(gammas[1], 4.0);
        assert!(gammas.iter().all(|&g| g <= 1000.0));
        assert!(trace.records.iter().all(|r| r.accepted && r.f_current == 5.0));
    }

    #[test]
    fn rejection_at_gamma_min_leaves_iterate() {
        // |x| at its kink: the forward difference says g = 1, and every step
        // to the left increases F.
        let f = FnObjective::new("abs", 1, |x: &[f64]| x[0].abs());
        let cfg = FdConfig {
            gamma0: 1.0,
            gamma_min: 0.25,
            ..FdConfig::preset(Preset::Synthetic, DirectionKind::Coordinate, 1)
        }
        .with_budget(8);
        let trace = run(&f, &[0.0], &cfg, &RngStream::new(0, 0)).unwrap();
        // F(x0) + probe + trials at γ = 1, 0.5, 0.25.
        let r = trace.records[1];
        assert!(!r.accepted);
        assert_eq!(r.evals, 5);
        assert_eq!(r.gamma, 0.25);
        assert_eq!(trace.final_x, vec![0.0]);
        assert_eq!(trace.evals_used, 8);
        assert!(trace.records[1..].iter().all(|r| !r.accepted && r.f_current == 0.0));
    }

    #[test]
    fn non_finite_trials_contract_unless_strict() {
        let f = FnObjective::new("wall", 1, |x: &[f64]| if x[0] < -1.0 { f64::INFINITY } else { x[0] * x[0] });
        let cfg = FdConfig { gamma0: 100.0, ..FdConfig::preset(Preset::Synthetic, DirectionKind::Coordinate, 1) }.with_budget(40);
        let trace = run(&f, &[1.0], &cfg, &RngStream::new(0, 0)).unwrap();
        assert!(trace.best_f < 1.0);
        let strict = FdConfig { strict_eval: true, ..cfg };
        assert!(matches!(run(&f, &[1.0], &strict, &RngStream::new(0, 0)), Err(Error::Evaluation { .. })));
    }

    #[test]
    fn trace_csv_header() {
        let f = half_sq(2);
        let cfg = FdConfig::preset(Preset::Synthetic, DirectionKind::Gaussian, 1).with_budget(10);
        let trace = run(&f, &[1.0, 1.0], &cfg, &RngStream::new(0, 0)).unwrap();
        let csv = trace.to_csv();
        assert!(csv.starts_with("evals,f_best,f_current,gamma,accepted\n1,"));
        assert_eq!(csv.lines().count(), trace.records.len() + 1);
    }

    #[test]
    fn rejects_mismatched_start() {
        let f = half_sq(2);
        let cfg = FdConfig::preset(Preset::Synthetic, DirectionKind::Gaussian, 1);
        assert!(run(&f, &[1.0], &cfg, &RngStream::new(0, 0)).is_err());
        assert!(run(&f, &[f64::NAN, 0.0], &cfg, &RngStream::new(0, 0)).is_err());
        let too_many = FdConfig::preset(Preset::Synthetic, DirectionKind::Gaussian, 3);
        assert!(matches!(run(&f, &[1.0, 1.0], &too_many, &RngStream::new(0, 0)), Err(Error::Dimension { .. })));
    }
}
