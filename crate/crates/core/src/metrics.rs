//! Gradient-error and progress metrics, fraction-solved profiles, and
//! generation timing.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::directions::{DirectionKind, DirectionSampler};
use crate::error::{Error, Result};
use crate::norm_sq;
use crate::rng::RngStream;

/// Direction draws per problem when estimating the expected gradient error.
pub const DEFAULT_GRAD_TRIALS: usize = 50;
/// Repetitions per problem when estimating the expected progress.
pub const DEFAULT_VALUE_REPEATS: usize = 10;
pub const DEFAULT_TIMING_REPEATS: usize = 500;
const TIMING_WARMUP: usize = 5;

/// `‖g − ∇F‖ / ‖∇F‖`.
pub fn rel_grad_error(g: &[f64], grad: &[f64]) -> Result<f64> {
    if g.len() != grad.len() {
        return Err(Error::Parameter(format!("length mismatch: {} vs {}", g.len(), grad.len())));
    }
    let denom = norm_sq(grad).sqrt();
    if !(denom > 0.0) {
        return Err(Error::Domain("relative gradient error undefined at a zero gradient".into()));
    }
    let diff: f64 = g.iter().zip(grad).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(diff.sqrt() / denom)
}

/// `(f_k − f_min) / (f_0 − f_min)`.
pub fn value_progress(f_k: f64, f_0: f64, f_min: f64) -> Result<f64> {
    if !(f_0 > f_min) {
        return Err(Error::Domain(format!("progress undefined: f_0 = {f_0} is not above f_min = {f_min}")));
    }
    Ok((f_k - f_min) / (f_0 - f_min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub problem_id: String,
    pub expected_value: f64,
    pub n_samples: usize,
}

/// Per-problem expected metric values feeding a fraction-solved curve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    pub rows: Vec<ProfileRow>,
}

impl ProfileTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, problem_id: impl Into<String>, expected_value: f64, n_samples: usize) -> Result<()> {
        if !(expected_value >= 0.0) || n_samples == 0 {
            return Err(Error::Domain(format!(
                "profile rows need expected_value >= 0 and n_samples >= 1, got {expected_value} / {n_samples}"
            )));
        }
        self.rows.push(ProfileRow { problem_id: problem_id.into(), expected_value, n_samples });
        Ok(())
    }

    /// Add a problem from its individual samples, averaging them.
    pub fn push_samples(&mut self, problem_id: impl Into<String>, samples: &[f64]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Domain("no samples".into()));
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        self.push(problem_id, mean, samples.len())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("problem_id,expected_value,n_samples\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:e},{}", r.problem_id, r.expected_value, r.n_samples);
        }
        out
    }
}

/// Share of problems whose expected value is at most `tau`.
pub fn fraction_solved(table: &ProfileTable, tau: f64) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::Domain("fraction solved over an empty problem set".into()));
    }
    let solved = table.rows.iter().filter(|r| r.expected_value <= tau).count();
    Ok(solved as f64 / table.len() as f64)
}

/// `(tau, fraction_solved)` pairs over a threshold grid.
pub fn profile_curve(table: &ProfileTable, taus: &[f64]) -> Result<Vec<(f64, f64)>> {
    taus.iter().map(|&t| fraction_solved(table, t).map(|f| (t, f))).collect()
}

/// `n` log-spaced thresholds from `lo` to `hi` inclusive.
pub fn tau_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![hi],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
        }
    }
}

/// The default grid: 25 points from 1e-6 to 1.
pub fn default_tau_grid() -> Vec<f64> {
    tau_grid(1e-6, 1.0, 25)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub repeats: usize,
}

/// Wall-clock statistics of `repeats` generations through a fresh sampler,
/// after five discarded warm-up draws. Coordinate directions with `ell = d`
/// hit the sampler's identity cache.
pub fn time_generation(
    kind: DirectionKind,
    d: usize,
    ell: usize,
    repeats: usize,
    rng: &RngStream,
) -> Result<TimingStats> {
    time_sampler(DirectionSampler::new(kind, d, ell)?, repeats, rng)
}

pub fn time_sampler(mut sampler: DirectionSampler, repeats: usize, rng: &RngStream) -> Result<TimingStats> {
    if repeats < 2 {
        return Err(Error::Parameter(format!("timing needs at least 2 repeats, got {repeats}")));
    }
    let mut rng = rng.rng();
    for _ in 0..TIMING_WARMUP {
        std::hint::black_box(sampler.next(&mut rng)?);
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(sampler.next(&mut rng)?);
        samples.push(start.elapsed().as_secs_f64());
    }
    let (mean, var) = mean_var(&samples);
    Ok(TimingStats { mean_seconds: mean, std_seconds: var.sqrt(), repeats })
}

/// Sample mean and unbiased variance.
pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}
