//! Monte-Carlo checks on the ball-smoothed surrogate
//! `F_h(x) = E_{u ~ U(B^d)} F(x + h u)`.
//!
//! Both i.i.d. spherical directions and Haar-orthogonal directions give
//! unbiased estimates of `∇F_h`. Expanding `E‖g − ∇F‖²` for the two
//! ensembles, the diagonal terms agree and only the cross terms differ: they
//! vanish for orthogonal columns, while for independent columns each of the
//! `ℓ(ℓ−1)` pairs contributes `⟨E[δp], E[δp]⟩ = (h/d)²‖∇F_h‖²`. After the
//! `d²/(ℓ²h²)` prefactor the exact gap is
//!
//! ```text
//! E‖g(P_iid) − ∇F‖² − E‖g(P_orth) − ∇F‖² = (ℓ − 1)/ℓ · ‖∇F_h(x)‖²
//! ```
//!
//! [`mse_compare`] estimates both sides independently and checks the
//! identity within three combined standard errors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::directions::{gen_qr_haar, gen_spherical, sample_sphere, DirectionKind, DirectionMatrix, EllSpec};
use crate::error::{Error, Result};
use crate::estimator::{checked_eval, forward_fd, GradEstimate};
use crate::objectives::{FnObjective, Objective};
use crate::rng::RngStream;
use crate::{dot, norm_sq};

/// Scalar Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl Estimate {
    pub fn within(&self, target: f64, sigmas: f64) -> bool {
        (self.mean - target).abs() <= sigmas * self.std_err
    }
}

/// Coordinate-wise Monte-Carlo mean with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub n: usize,
}

impl VectorEstimate {
    pub fn within(&self, target: &[f64], sigmas: f64) -> bool {
        self.mean.iter().zip(&self.std_err).zip(target).all(|((m, s), t)| (m - t).abs() <= sigmas * s)
    }
}

#[derive(Debug, Clone, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        }
    }

    fn estimate(&self) -> Estimate {
        Estimate { mean: self.mean, std_err: (self.variance() / self.n as f64).sqrt(), n: self.n }
    }
}

struct VecWelford(Vec<Welford>);

impl VecWelford {
    fn new(d: usize) -> Self {
        Self(vec![Welford::default(); d])
    }

    fn push(&mut self, x: &[f64]) {
        self.0.iter_mut().zip(x).for_each(|(w, v)| w.push(*v));
    }

    fn estimate(&self) -> VectorEstimate {
        let parts: Vec<Estimate> = self.0.iter().map(Welford::estimate).collect();
        VectorEstimate {
            mean: parts.iter().map(|e| e.mean).collect(),
            std_err: parts.iter().map(|e| e.std_err).collect(),
            n: parts.first().map_or(0, |e| e.n),
        }
    }
}

/// Uniform point in the unit ball: sphere direction scaled by `U^{1/d}`.
pub fn sample_ball<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let mut u = sample_sphere(d, rng);
    let radius = rng.random::<f64>().powf(1.0 / d as f64);
    u.iter_mut().for_each(|v| *v *= radius);
    u
}

fn check_args(h: f64, n: usize) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Parameter(format!("smoothing radius must be positive, got {h}")));
    }
    if n == 0 {
        return Err(Error::Parameter("need at least one sample".into()));
    }
    Ok(())
}

fn shifted(x: &[f64], h: f64, u: &[f64]) -> Vec<f64> {
    x.iter().zip(u).map(|(xi, ui)| xi + h * ui).collect()
}

/// Monte-Carlo estimate of `F_h(x)`.
pub fn smoothed_value_mc<O: Objective + ?Sized>(
    f: &O,
    x: &[f64],
    h: f64,
    n_samples: usize,
    rng: &RngStream,
) -> Result<Estimate> {
    check_args(h, n_samples)?;
    let mut rng = rng.rng();
    let mut acc = Welford::default();
    for _ in 0..n_samples {
        let u = sample_ball(x.len(), &mut rng);
        acc.push(checked_eval(f, &shifted(x, h, &u))?);
    }
    Ok(acc.estimate())
}

fn smoothed_grad_sample<O: Objective + ?Sized>(
    f: &O,
    x: &[f64],
    h: f64,
    fx: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let d = x.len();
    let p = sample_sphere(d, rng);
    let coef = d as f64 * (checked_eval(f, &shifted(x, h, &p))? - fx) / h;
    Ok(p.iter().map(|pi| coef * pi).collect())
}

/// Monte-Carlo estimate of `∇F_h(x)` as the mean of
/// `(d/h)(F(x + hp) − F(x)) p` over `p ~ U(S^{d−1})`.
pub fn smoothed_grad_mc<O: Objective + ?Sized>(
    f: &O,
    x: &[f64],
    h: f64,
    n_samples: usize,
    rng: &RngStream,
) -> Result<VectorEstimate> {
    check_args(h, n_samples)?;
    let fx = checked_eval(f, x)?;
    let mut rng = rng.rng();
    let mut acc = VecWelford::new(x.len());
    for _ in 0..n_samples {
        acc.push(&smoothed_grad_sample(f, x, h, fx, &mut rng)?);
    }
    Ok(acc.estimate())
}

/// Unbiased Monte-Carlo estimate of `‖∇F_h(x)‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedGradNorm {
    pub value: f64,
    pub std_err: f64,
    pub grad: VectorEstimate,
}

/// `‖m‖² − tr(Σ̂)/n` from [`smoothed_grad_mc`], with a delta-method standard
/// error `2·sd(mᵀy)/√n` obtained by replaying the same stream.
pub fn smoothed_grad_norm_sq<O: Objective + ?Sized>(
    f: &O,
    x: &[f64],
    h: f64,
    n_samples: usize,
    rng: &RngStream,
) -> Result<SmoothedGradNorm> {
    let grad = smoothed_grad_mc(f, x, h, n_samples, rng)?;
    let n = n_samples as f64;
    // se_j² = var_j / n, so tr(Σ̂)/n = Σ se_j².
    let bias: f64 = grad.std_err.iter().map(|s| s * s).sum();
    let value = norm_sq(&grad.mean) - bias;

    let fx = checked_eval(f, x)?;
    let mut replay = rng.rng();
    let mut proj = Welford::default();
    for _ in 0..n_samples {
        proj.push(dot(&grad.mean, &smoothed_grad_sample(f, x, h, fx, &mut replay)?));
    }
    let std_err = 2.0 * (proj.variance() / n).sqrt();
    Ok(SmoothedGradNorm { value, std_err, grad })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbiasednessReport {
    pub kind: DirectionKind,
    pub ell: usize,
    /// Mean of `g(x, h, P)` over direction draws.
    pub estimator_mean: VectorEstimate,
    /// Independent [`smoothed_grad_mc`] estimate of `∇F_h(x)`.
    pub reference: VectorEstimate,
    pub max_deviation: f64,
    /// Combined standard error at the coordinate of maximum deviation.
    pub deviation_std_err: f64,
    /// Largest coordinate-wise `|deviation| / combined SE`.
    pub max_z: f64,
    /// Per-coordinate z bound: the two-sided 3σ level split over the `d`
    /// coordinates (Bonferroni). Equals 3 when `d = 1`.
    pub z_threshold: f64,
    pub passes: bool,
}

/// Two-sided 3σ tail mass.
const THREE_SIGMA_ALPHA: f64 = 0.002_699_796_063_260_207;

/// z such that `d` two-sided tests at this level jointly keep the 3σ
/// family-wise error rate.
pub fn bonferroni_z(d: usize) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let alpha = THREE_SIGMA_ALPHA / d.max(1) as f64;
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Compare the average surrogate over `n_samples` draws of `P` against an
/// independent estimate of `∇F_h(x)`.
pub fn unbiasedness_check<O: Objective + ?Sized>(
    kind: DirectionKind,
    f: &O,
    x: &[f64],
    h: f64,
    ell: usize,
    n_samples: usize,
    rng: &RngStream,
) -> Result<UnbiasednessReport> {
    if !matches!(kind, DirectionKind::Spherical | DirectionKind::QrHaar) {
        return Err(Error::Parameter(format!("unbiasedness check supports spherical and qr_haar, not {kind}")));
    }
    check_args(h, n_samples)?;
    let d = x.len();
    let fx = checked_eval(f, x)?;
    let mut draw = rng.derive("directions").rng();
    let mut acc = VecWelford::new(d);
    for _ in 0..n_samples {
        let p = match kind {
            DirectionKind::Spherical => gen_spherical(d, ell, &mut draw)?,
            _ => gen_qr_haar(d, ell, &mut draw)?,
        };
        acc.push(&forward_fd(f, x, h, &p, Some(fx))?.g);
    }
    let estimator_mean = acc.estimate();
    let reference = smoothed_grad_mc(f, x, h, n_samples, &rng.derive("reference"))?;

    let mut max_deviation = 0.0_f64;
    let mut deviation_std_err = 0.0;
    let mut max_z = 0.0_f64;
    for j in 0..d {
        let dev = (estimator_mean.mean[j] - reference.mean[j]).abs();
        let se = estimator_mean.std_err[j].hypot(reference.std_err[j]);
        if dev >= max_deviation {
            max_deviation = dev;
            deviation_std_err = se;
        }
        max_z = max_z.max(if se > 0.0 { dev / se } else if dev > 0.0 { f64::INFINITY } else { 0.0 });
    }
    Ok(UnbiasednessReport {
        kind,
        ell,
        estimator_mean,
        reference,
        max_deviation,
        deviation_std_err,
        max_z,
        z_threshold: bonferroni_z(d),
        passes: max_z <= bonferroni_z(d),
    })
}

/// Gradient surrogate used by [`mse_compare_with`]; [`forward_fd`] in
/// production, swappable for mutation tests.
pub type Surrogate = fn(&dyn Objective, &[f64], f64, &DirectionMatrix, Option<f64>) -> Result<GradEstimate>;

fn default_surrogate(
    f: &dyn Objective,
    x: &[f64],
    h: f64,
    p: &DirectionMatrix,
    fx: Option<f64>,
) -> Result<GradEstimate> {
    forward_fd(f, x, h, p, fx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub d: usize,
    pub ell: usize,
    pub h: f64,
    pub n_samples: usize,
    /// `E‖g(x,h,P₁) − ∇F(x)‖²`, `P₁` Haar-orthogonal columns.
    pub mse_structured: f64,
    pub mse_structured_se: f64,
    /// `E‖g(x,h,P₂) − ∇F(x)‖²`, `P₂` i.i.d. spherical columns.
    pub mse_unstructured: f64,
    pub mse_unstructured_se: f64,
    pub grad_smooth_norm_sq: f64,
    pub grad_smooth_norm_sq_se: f64,
    /// `(ℓ − 1)/ℓ · ‖∇F_h(x)‖²`.
    pub predicted_gap: f64,
    pub observed_gap: f64,
    pub combined_se: f64,
    pub inequality_holds: bool,
    pub gap_identity_holds: bool,
    /// The gap with coefficient `d²(ℓ−1)/(ℓh²)`, which omits the `(h/d)²`
    /// carried by each cross term. Reported so that the data can reject it.
    pub unscaled_gap: f64,
    pub unscaled_gap_consistent: bool,
    pub notes: Vec<String>,
}

/// Monte-Carlo comparison of structured and unstructured mean-squared errors
/// against the exact gap identity. Requires an analytic gradient.
pub fn mse_compare<O: Objective>(
    f: &O,
    x: &[f64],
    h: f64,
    ell: usize,
    n_samples: usize,
    rng: &RngStream,
) -> Result<SmoothingReport> {
    let reference = smoothed_grad_norm_sq(f, x, h, n_samples, &rng.derive("smoothed_grad"))?;
    mse_compare_with(f, x, h, ell, n_samples, rng, default_surrogate, &reference)
}

/// [`mse_compare`] with an explicit surrogate and a precomputed
/// `‖∇F_h(x)‖²` estimate (shared across `ell` values on a grid).
#[allow(clippy::too_many_arguments)]
pub fn mse_compare_with(
    f: &dyn Objective,
    x: &[f64],
    h: f64,
    ell: usize,
    n_samples: usize,
    rng: &RngStream,
    surrogate: Surrogate,
    reference: &SmoothedGradNorm,
) -> Result<SmoothingReport> {
    check_args(h, n_samples)?;
    let d = x.len();
    if ell == 0 || ell > d {
        return Err(Error::Dimension { d, ell });
    }
    let grad = f
        .gradient(x)
        .ok_or_else(|| Error::Parameter(format!("`{}` has no analytic gradient", f.name())))?;
    let fx = checked_eval(f, x)?;

    let run = |label: &str, structured: bool| -> Result<Estimate> {
        let mut draw = rng.derive(label).rng();
        let mut acc = Welford::default();
        for _ in 0..n_samples {
            let p = if structured { gen_qr_haar(d, ell, &mut draw)? } else { gen_spherical(d, ell, &mut draw)? };
            let g = surrogate(f, x, h, &p, Some(fx))?.g;
            acc.push(g.iter().zip(&grad).map(|(a, b)| (a - b) * (a - b)).sum());
        }
        Ok(acc.estimate())
    };
    let structured = run("structured", true)?;
    let unstructured = run("unstructured", false)?;

    let ell_f = ell as f64;
    let coef = (ell_f - 1.0) / ell_f;
    let predicted_gap = coef * reference.value;
    let observed_gap = unstructured.mean - structured.mean;
    let mse_se = structured.std_err.hypot(unstructured.std_err);
    let combined_se = mse_se.hypot(coef * reference.std_err);

    let unscaled_coef = (d * d) as f64 * (ell_f - 1.0) / (ell_f * h * h);
    let unscaled_gap = unscaled_coef * reference.value;
    let unscaled_se = mse_se.hypot(unscaled_coef * reference.std_err);
    let unscaled_gap_consistent = (observed_gap - unscaled_gap).abs() <= 3.0 * unscaled_se;

    let mut notes = Vec::new();
    if ell > 1 && !unscaled_gap_consistent {
        notes.push(format!(
            "gap coefficient d^2(l-1)/(l h^2) rejected: observed {observed_gap:.6e} vs {unscaled_gap:.6e}"
        ));
    }
    notes.push("gap uses the squared norm |grad F_h|^2; the unsquared form is not dimensionally consistent".into());

    Ok(SmoothingReport {
        d,
        ell,
        h,
        n_samples,
        mse_structured: structured.mean,
        mse_structured_se: structured.std_err,
        mse_unstructured: unstructured.mean,
        mse_unstructured_se: unstructured.std_err,
        grad_smooth_norm_sq: reference.value,
        grad_smooth_norm_sq_se: reference.std_err,
        predicted_gap,
        observed_gap,
        combined_se,
        inequality_holds: structured.mean <= unstructured.mean + 3.0 * mse_se,
        gap_identity_holds: (observed_gap - predicted_gap).abs() <= 3.0 * combined_se,
        unscaled_gap,
        unscaled_gap_consistent,
        notes,
    })
}

/// Smooth test functions with closed-form gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    /// `⟨a, x⟩` with `a_i = (−1)^i (1 + i/2)`.
    Linear,
    /// `½ Σ w_i x_i²` with `w_i = 1 + i/d`.
    Quadratic,
}

impl TestFunction {
    pub fn as_str(self) -> &'static str {
        match self {
            TestFunction::Linear => "linear",
            TestFunction::Quadratic => "quadratic",
        }
    }

    pub fn objective(self, d: usize) -> FnObjective {
        match self {
            TestFunction::Linear => {
                let a: Vec<f64> =
                    (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + i as f64 / 2.0)).collect();
                let grad = a.clone();
                FnObjective::new("linear", d, move |x: &[f64]| dot(&a, x)).with_gradient(move |_| grad.clone())
            }
            TestFunction::Quadratic => {
                let w: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 / d as f64).collect();
                let wg = w.clone();
                FnObjective::new("quadratic", d, move |x: &[f64]| {
                    0.5 * x.iter().zip(&w).map(|(xi, wi)| wi * xi * xi).sum::<f64>()
                })
                .with_gradient(move |x: &[f64]| x.iter().zip(&wg).map(|(xi, wi)| wi * xi).collect())
                .with_minimum(0.0, vec![0.0; d])
            }
        }
    }

    /// Evaluation point: all ones.
    pub fn point(self, d: usize) -> Vec<f64> {
        vec![1.0; d]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    pub dims: Vec<usize>,
    pub ells: Vec<EllSpec>,
    pub hs: Vec<f64>,
    pub functions: Vec<TestFunction>,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self {
            dims: vec![4, 6, 8],
            ells: vec![EllSpec::Count(1), EllSpec::Count(2), EllSpec::Fraction(1, 2), EllSpec::Fraction(1, 1)],
            hs: vec![0.1, 0.01],
            functions: vec![TestFunction::Linear, TestFunction::Quadratic],
            n_samples: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCell {
    pub function: TestFunction,
    pub report: SmoothingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub cells: Vec<OracleCell>,
    pub unbiasedness: Vec<(TestFunction, usize, f64, UnbiasednessReport)>,
    pub all_pass: bool,
}

impl OracleOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &OracleCell> {
        self.cells.iter().filter(|c| !(c.report.inequality_holds && c.report.gap_identity_holds))
    }
}

/// Run [`mse_compare_with`] over the grid (one shared `‖∇F_h‖²` estimate per
/// `(function, d, h)`), plus spherical (`ℓ = 1`) and Haar (`ℓ = ⌈d/2⌉`)
/// unbiasedness checks.
pub fn run_oracle(grid: &OracleGrid, surrogate: Surrogate) -> Result<OracleOutcome> {
    let mut cells = Vec::new();
    let mut unbiasedness = Vec::new();
    let root = RngStream::new(grid.seed, 0);
    for &function in &grid.functions {
        for &d in &grid.dims {
            let f = function.objective(d);
            let x = function.point(d);
            let mut ells: Vec<usize> = grid.ells.iter().map(|e| e.resolve(d)).collect::<Result<_>>()?;
            ells.sort_unstable();
            ells.dedup();
            for &h in &grid.hs {
                let cell_root = root.derive(&format!("{}/{d}/{h:e}", function.as_str()));
                let reference = smoothed_grad_norm_sq(&f, &x, h, grid.n_samples, &cell_root.derive("smoothed_grad"))?;
                for &ell in &ells {
                    let report = mse_compare_with(
                        &f,
                        &x,
                        h,
                        ell,
                        grid.n_samples,
                        &cell_root.derive(&format!("ell{ell}")),
                        surrogate,
                        &reference,
                    )?;
                    cells.push(OracleCell { function, report });
                }
                for (kind, ell) in [(DirectionKind::Spherical, 1), (DirectionKind::QrHaar, d.div_ceil(2))] {
                    let rep = unbiasedness_check(kind, &f, &x, h, ell, grid.n_samples, &cell_root.derive(kind.as_str()))?;
                    unbiasedness.push((function, d, h, rep));
                }
            }
        }
    }
    let all_pass = cells.iter().all(|c| c.report.inequality_holds && c.report.gap_identity_holds)
        && unbiasedness.iter().all(|(.., r)| r.passes);
    Ok(OracleOutcome { cells, unbiasedness, all_pass })
}

/// The default grid with the production surrogate.
pub fn run_default_oracle(n_samples: usize, seed: u64) -> Result<OracleOutcome> {
    run_oracle(&OracleGrid { n_samples, seed, ..OracleGrid::default() }, default_surrogate)
}

pub fn production_surrogate() -> Surrogate {
    default_surrogate
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: usize = 20_000;

    #[test]
    fn ball_radius_second_moment() {
        // E‖u‖² = d/(d+2) for u uniform in the unit ball.
        for d in [1, 3, 7] {
            let mut rng = RngStream::new(d as u64, 0).rng();
            let mut acc = Welford::default();
            for _ in 0..100_000 {
                let u = sample_ball(d, &mut rng);
                assert!(norm_sq(&u) <= 1.0);
                acc.push(norm_sq(&u));
            }
            let target = d as f64 / (d as f64 + 2.0);
            assert!(acc.estimate().within(target, 3.0), "d={d}: {:?} vs {target}", acc.estimate());
        }
    }

    #[test]
    fn smoothed_value_cases() {
        let s = RngStream::new(1, 0);
        let lin = TestFunction::Linear.objective(3);
        let x = [0.3, -0.2, 1.0];
        let est = smoothed_value_mc(&lin, &x, 0.5, N, &s).unwrap();
        assert!(est.within(lin.value(&x), 3.0));

        let constant = FnObjective::new("c", 3, |_: &[f64]| 2.5);
        let est = smoothed_value_mc(&constant, &x, 0.5, 100, &s).unwrap();
        assert_eq!(est.mean, 2.5);
        assert_eq!(est.std_err, 0.0);

        // ½‖x‖² at 0, d = 3: h² d / (2(d + 2)) = 0.3 h².
        let sq = FnObjective::new("sq", 3, |x: &[f64]| 0.5 * norm_sq(x));
        let h = 0.7;
        let est = smoothed_value_mc(&sq, &[0.0; 3], h, N, &s).unwrap();
        assert!(est.within(0.3 * h * h, 3.0), "{est:?}");
    }

    #[test]
    fn radial_quadrature_agrees_with_closed_form() {
        // E‖u‖² = ∫₀¹ r² · d r^{d−1} dr, midpoint rule.
        let d = 3.0;
        let m = 100_000;
        let integral: f64 =
            (0..m).map(|k| (k as f64 + 0.5) / m as f64).map(|r| r * r * d * r.powf(d - 1.0)).sum::<f64>() / m as f64;
        assert!((integral - 0.6).abs() < 1e-9);
    }

    #[test]
    fn smoothed_grad_cases() {
        let s = RngStream::new(2, 0);
        let lin = FnObjective::new("lin", 2, |x: &[f64]| x[0] - x[1]);
        assert!(smoothed_grad_mc(&lin, &[0.0, 0.0], 0.1, N, &s).unwrap().within(&[1.0, -1.0], 3.0));

        let sq = FnObjective::new("sq", 2, |x: &[f64]| 0.5 * norm_sq(x));
        assert!(smoothed_grad_mc(&sq, &[1.0, 2.0], 0.1, N, &s).unwrap().within(&[1.0, 2.0], 3.0));

        let constant = FnObjective::new("c", 2, |_: &[f64]| 1.0);
        let est = smoothed_grad_mc(&constant, &[1.0, 2.0], 0.1, 100, &s).unwrap();
        assert_eq!(est.mean, vec![0.0, 0.0]);
    }

    #[test]
    fn unbiasedness_cases() {
        let quad = TestFunction::Quadratic.objective(4);
        let x = vec![1.0; 4];
        let rep = unbiasedness_check(DirectionKind::Spherical, &quad, &x, 0.1, 1, N, &RngStream::new(3, 0)).unwrap();
        assert!(rep.passes, "{rep:?}");
        let rep = unbiasedness_check(DirectionKind::QrHaar, &quad, &x, 0.1, 2, N, &RngStream::new(4, 0)).unwrap();
        assert!(rep.passes, "{rep:?}");

        let lin = TestFunction::Linear.objective(4);
        let rep = unbiasedness_check(DirectionKind::QrHaar, &lin, &x, 0.1, 4, 500, &RngStream::new(5, 0)).unwrap();
        let a = lin.gradient(&x).unwrap();
        for (m, ai) in rep.estimator_mean.mean.iter().zip(&a) {
            assert!((m - ai).abs() < 1e-9);
        }
        assert!(rep.estimator_mean.std_err.iter().all(|s| *s < 1e-9));

        assert!(unbiasedness_check(DirectionKind::Gaussian, &lin, &x, 0.1, 1, 10, &RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn bonferroni_threshold() {
        assert!((bonferroni_z(1) - 3.0).abs() < 1e-9);
        assert!(bonferroni_z(8) > 3.5 && bonferroni_z(8) < 3.7);
    }

    #[test]
    fn ell_one_has_zero_predicted_gap() {
        let quad = TestFunction::Quadratic.objective(5);
        let rep = mse_compare(&quad, &[1.0; 5], 0.1, 1, N, &RngStream::new(6, 0)).unwrap();
        assert_eq!(rep.predicted_gap, 0.0);
        assert!(rep.observed_gap.abs() <= 3.0 * rep.combined_se, "{rep:?}");
    }

    #[test]
    fn full_rank_linear_structured_is_exact() {
        let lin = TestFunction::Linear.objective(4);
        let rep = mse_compare(&lin, &[1.0; 4], 0.05, 4, 2_000, &RngStream::new(7, 0)).unwrap();
        assert!(rep.mse_structured < 1e-18, "{}", rep.mse_structured);
        assert!(rep.mse_unstructured > 0.1);
        assert!(rep.mse_structured < rep.mse_unstructured);
    }

    #[test]
    fn gap_identity_on_isotropic_quadratic() {
        // ∇F_h = x for ½‖x‖², so the gap is (2/3)·6 = 4 at d = 6, ℓ = 3.
        let sq = FnObjective::new("sq", 6, |x: &[f64]| 0.5 * norm_sq(x)).with_gradient(|x: &[f64]| x.to_vec());
        let rep = mse_compare(&sq, &[1.0; 6], 0.1, 3, 100_000, &RngStream::new(8, 0)).unwrap();
        assert!(rep.gap_identity_holds, "{rep:?}");
        assert!((rep.observed_gap - 4.0).abs() <= 3.0 * rep.combined_se, "{rep:?}");
        assert!(!rep.unscaled_gap_consistent);
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["mse_structured", "mse_unstructured", "grad_smooth_norm_sq", "predicted_gap", "observed_gap", "n_samples"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn requires_analytic_gradient() {
        let f = FnObjective::new("nograd", 2, |x: &[f64]| norm_sq(x));
        assert!(matches!(mse_compare(&f, &[1.0; 2], 0.1, 1, 10, &RngStream::new(0, 0)), Err(Error::Parameter(_))));
    }
}
