//! Forward finite-difference gradient surrogate.

use crate::directions::DirectionMatrix;
use crate::error::{Error, Result};
use crate::objectives::Objective;

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub g: Vec<f64>,
    /// Objective evaluations consumed: `ell + 1`, or `ell` when `F(x)` was
    /// supplied by the caller.
    pub evals_used: usize,
    pub base_value: f64,
}

/// `g = (d/ℓ) Σᵢ (F(x + h pᵢ) − F(x))/h · pᵢ`.
///
/// `cached_fx` skips the base evaluation when the caller already knows
/// `F(x)`.
pub fn forward_fd<O: Objective + ?Sized>(
    f: &O,
    x: &[f64],
    h: f64,
    p: &DirectionMatrix,
    cached_fx: Option<f64>,
) -> Result<GradEstimate> {
    forward_fd_threaded(f, x, h, p, cached_fx, 1)
}

/// [`forward_fd`] with the probes spread over up to `threads` scoped threads
/// when the objective is pure. The summation order is fixed, so the result is
/// bit-identical to the sequential path.
pub fn forward_fd_threaded<O: Objective + ?Sized>(
    f: &O,
    x: &[f64],
    h: f64,
    p: &DirectionMatrix,
    cached_fx: Option<f64>,
    threads: usize,
) -> Result<GradEstimate> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Parameter(format!("discretization h must be positive, got {h}")));
    }
    let d = x.len();
    if p.d() != d {
        return Err(Error::Parameter(format!(
            "direction matrix has {} rows but x has dimension {d}",
            p.d()
        )));
    }
    let (fx, base_evals) = match cached_fx {
        Some(v) => (v, 0),
        None => (checked_eval(f, x)?, 1),
    };

    let values = if threads > 1 && f.is_pure() && p.ell() > 1 {
        probe_parallel(f, x, h, p, threads)?
    } else {
        p.columns().map(|col| probe(f, x, h, col)).collect::<Result<Vec<_>>>()?
    };

    let scale = d as f64 / p.ell() as f64;
    let mut g = vec![0.0; d];
    for (fp, col) in values.iter().zip(p.columns()) {
        let coef = scale * (fp - fx) / h;
        g.iter_mut().zip(col).for_each(|(gi, pi)| *gi += coef * pi);
    }
    Ok(GradEstimate { g, evals_used: p.ell() + base_evals, base_value: fx })
}

fn probe<O: Objective + ?Sized>(f: &O, x: &[f64], h: f64, dir: &[f64]) -> Result<f64> {
    let point: Vec<f64> = x.iter().zip(dir).map(|(xi, pi)| xi + h * pi).collect();
    checked_eval(f, &point)
}

fn probe_parallel<O: Objective + ?Sized>(
    f: &O,
    x: &[f64],
    h: f64,
    p: &DirectionMatrix,
    threads: usize,
) -> Result<Vec<f64>> {
    let ell = p.ell();
    let chunk = ell.div_ceil(threads.min(ell));
    let cols: Vec<&[f64]> = p.columns().collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = cols
            .chunks(chunk)
            .map(|batch| {
                scope.spawn(move || batch.iter().map(|c| probe(f, x, h, c)).collect::<Result<Vec<_>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(ell);
        for handle in handles {
            out.extend(handle.join().expect("probe thread panicked")?);
        }
        Ok(out)
    })
}

pub(crate) fn checked_eval<O: Objective + ?Sized>(f: &O, x: &[f64]) -> Result<f64> {
    let v = f.value(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation { point: x.to_vec(), value: v })
    }
}
