//! Benchmark objectives and the name-addressable problem registry.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::{dot, norm_sq};

/// A scalar function of `R^d`.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Analytic gradient, when available.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Analytic minimum value, when known.
    fn f_min(&self) -> Option<f64> {
        None
    }

    /// A known minimizer. Used by tests only, never by the optimizer.
    fn minimizer(&self) -> Option<Vec<f64>> {
        None
    }

    fn x0(&self) -> Vec<f64>;

    /// Safe to evaluate from several threads at once.
    fn is_pure(&self) -> bool {
        true
    }
}

impl fmt::Debug for dyn Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective").field("name", &self.name()).field("d", &self.dim()).finish()
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Objective assembled from closures.
pub struct FnObjective {
    name: String,
    d: usize,
    value: Box<ValueFn>,
    grad: Option<Box<GradFn>>,
    f_min: Option<f64>,
    minimizer: Option<Vec<f64>>,
    x0: Vec<f64>,
    pure: bool,
}

impl FnObjective {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            d,
            value: Box::new(value),
            grad: None,
            f_min: None,
            minimizer: None,
            x0: vec![0.0; d],
            pure: true,
        }
    }

    pub fn with_gradient(mut self, grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Box::new(grad));
        self
    }

    pub fn with_minimum(mut self, f_min: f64, minimizer: Vec<f64>) -> Self {
        self.f_min = Some(f_min);
        self.minimizer = Some(minimizer);
        self
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = x0;
        self
    }

    pub fn impure(mut self) -> Self {
        self.pure = false;
        self
    }
}

impl Objective for FnObjective {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.grad.as_ref().map(|g| g(x))
    }
    fn f_min(&self) -> Option<f64> {
        self.f_min
    }
    fn minimizer(&self) -> Option<Vec<f64>> {
        self.minimizer.clone()
    }
    fn x0(&self) -> Vec<f64> {
        self.x0.clone()
    }
    fn is_pure(&self) -> bool {
        self.pure
    }
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn check_dim(name: &str, d: usize, min: usize) -> Result<()> {
    if d < min {
        return Err(Error::Parameter(format!("{name} needs d >= {min}, got {d}")));
    }
    Ok(())
}

/// `½‖Ax − y‖²` with `A = Q S Qᵀ`, `S` linearly spaced in `[√μ, √L]`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    d: usize,
    /// Row-major `A` (symmetric).
    a: Vec<f64>,
    y: Vec<f64>,
    x_star: Vec<f64>,
}

impl LeastSquares {
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, &self.a)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.a.chunks_exact(self.d).zip(&self.y).map(|(row, yi)| dot(row, x) - yi).collect()
    }
}

/// Draws `Ā` (column-major, `d²` normals) then `x*` (`d` normals) from `rng`.
pub fn make_least_squares(d: usize, l: f64, mu: f64, rng: &RngStream) -> Result<LeastSquares> {
    check_dim("least_squares", d, 1)?;
    if !(mu > 0.0) || !(l >= mu) || !l.is_finite() {
        return Err(Error::Parameter(format!("least_squares needs L >= mu > 0, got L={l}, mu={mu}")));
    }
    let mut rng = rng.rng();
    let a_bar = DMatrix::from_vec(d, d, gaussian_vec(d * d, &mut rng));
    let q = a_bar.qr().q();
    let (lo, hi) = (mu.sqrt(), l.sqrt());
    let s: Vec<f64> = (0..d)
        .map(|i| if d == 1 { lo } else { lo + (hi - lo) * i as f64 / (d - 1) as f64 })
        .collect();
    let a = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s)) * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let x_star = gaussian_vec(d, &mut rng);
    let mut a_rows = Vec::with_capacity(d * d);
    for i in 0..d {
        a_rows.extend(a.row(i).iter());
    }
    let y = a_rows.chunks_exact(d).map(|row| dot(row, &x_star)).collect();
    Ok(LeastSquares { d, a: a_rows, y, x_star })
}

impl Objective for LeastSquares {
    fn name(&self) -> &str {
        "least_squares"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * norm_sq(&self.residual(x))
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        // A is symmetric, so Aᵀr = Ar.
        let r = self.residual(x);
        Some(self.a.chunks_exact(self.d).map(|row| dot(row, &r)).collect())
    }
    fn f_min(&self) -> Option<f64> {
        Some(0.0)
    }
    fn minimizer(&self) -> Option<Vec<f64>> {
        Some(self.x_star.clone())
    }
    fn x0(&self) -> Vec<f64> {
        vec![1.0; self.d]
    }
}

/// `Σ (x_i² − i)²`.
#[derive(Debug, Clone)]
pub struct Qing {
    d: usize,
}

pub fn make_qing(d: usize) -> Result<Qing> {
    check_dim("qing", d, 1)?;
    Ok(Qing { d })
}

impl Objective for Qing {
    fn name(&self) -> &str {
        "qing"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(i, xi)| (xi * xi - (i + 1) as f64).powi(2)).sum()
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(x.iter().enumerate().map(|(i, xi)| 4.0 * xi * (xi * xi - (i + 1) as f64)).collect())
    }
    fn f_min(&self) -> Option<f64> {
        Some(0.0)
    }
    fn minimizer(&self) -> Option<Vec<f64>> {
        Some((1..=self.d).map(|i| (i as f64).sqrt()).collect())
    }
    fn x0(&self) -> Vec<f64> {
        vec![1.0; self.d]
    }
}

/// `Σ 100(x_{i+1} − x_i²)² + (x_i − 1)²`.
#[derive(Debug, Clone)]
pub struct Rosenbrock {
    d: usize,
}

pub fn make_rosenbrock(d: usize) -> Result<Rosenbrock> {
    check_dim("rosenbrock", d, 2)?;
    Ok(Rosenbrock { d })
}

impl Objective for Rosenbrock {
    fn name(&self) -> &str {
        "rosenbrock"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (w[0] - 1.0).powi(2)).sum()
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; self.d];
        for i in 0..self.d - 1 {
            let t = x[i + 1] - x[i] * x[i];
            g[i] += -400.0 * x[i] * t + 2.0 * (x[i] - 1.0);
            g[i + 1] += 200.0 * t;
        }
        Some(g)
    }
    fn f_min(&self) -> Option<f64> {
        Some(0.0)
    }
    fn minimizer(&self) -> Option<Vec<f64>> {
        Some(vec![1.0; self.d])
    }
    fn x0(&self) -> Vec<f64> {
        vec![0.5; self.d]
    }
}

/// `(1/n) Σ log(1 + exp(−y_i⟨x, z_i⟩)) + λ‖x‖²` on synthetic separable data.
#[derive(Debug, Clone)]
pub struct Logistic {
    d: usize,
    /// Row-major `n × d` features.
    z: Vec<f64>,
    y: Vec<f64>,
    lambda: f64,
}

impl Logistic {
    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn features(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.z.chunks_exact(self.d)
    }
}

/// Draws the `n × d` features row by row, then `x*`. Labels are
/// `sign(⟨x*, z_i⟩)` with `sign(0) = +1`.
pub fn make_logistic(d: usize, n: usize, lambda: f64, rng: &RngStream) -> Result<Logistic> {
    check_dim("logistic", d, 1)?;
    if n == 0 || !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("logistic needs n >= 1 and lambda >= 0, got n={n}, lambda={lambda}")));
    }
    let mut rng = rng.rng();
    let z = gaussian_vec(n * d, &mut rng);
    let x_star = gaussian_vec(d, &mut rng);
    let y = z.chunks_exact(d).map(|zi| if dot(zi, &x_star) >= 0.0 { 1.0 } else { -1.0 }).collect();
    Ok(Logistic { d, z, y, lambda })
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Objective for Logistic {
    fn name(&self) -> &str {
        "logistic"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, x: &[f64]) -> f64 {
        let n = self.y.len() as f64;
        let loss: f64 = self.features().zip(&self.y).map(|(zi, yi)| softplus(-yi * dot(zi, x))).sum();
        loss / n + self.lambda * norm_sq(x)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = self.y.len() as f64;
        let mut g: Vec<f64> = x.iter().map(|xi| 2.0 * self.lambda * xi).collect();
        for (zi, yi) in self.features().zip(&self.y) {
            let w = -yi * sigmoid(-yi * dot(zi, x)) / n;
            g.iter_mut().zip(zi).for_each(|(gj, zij)| *gj += w * zij);
        }
        Some(g)
    }
    fn x0(&self) -> Vec<f64> {
        vec![0.0; self.d]
    }
}

/// `Σ (x_i − 1)² − Σ_{i≥2} x_i x_{i−1}`.
#[derive(Debug, Clone)]
pub struct Trid {
    d: usize,
}

pub fn make_trid(d: usize) -> Result<Trid> {
    check_dim("trid", d, 1)?;
    Ok(Trid { d })
}

impl Objective for Trid {
    fn name(&self) -> &str {
        "trid"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|xi| (xi - 1.0).powi(2)).sum::<f64>() - x.windows(2).map(|w| w[0] * w[1]).sum::<f64>()
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(
            (0..self.d)
                .map(|i| {
                    let left = if i > 0 { x[i - 1] } else { 0.0 };
                    let right = if i + 1 < self.d { x[i + 1] } else { 0.0 };
                    2.0 * (x[i] - 1.0) - left - right
                })
                .collect(),
        )
    }
    fn f_min(&self) -> Option<f64> {
        let d = self.d as f64;
        Some(-d * (d + 4.0) * (d - 1.0) / 6.0)
    }
    fn minimizer(&self) -> Option<Vec<f64>> {
        let d = self.d as f64;
        Some((1..=self.d).map(|i| i as f64 * (d + 1.0 - i as f64)).collect())
    }
    fn x0(&self) -> Vec<f64> {
        vec![0.0; self.d]
    }
}

/// `1 + Σ x_i²/4000 − Π cos(x_i/√i)`.
#[derive(Debug, Clone)]
pub struct Griewank {
    d: usize,
}

pub fn make_griewank(d: usize) -> Result<Griewank> {
    check_dim("griewank", d, 1)?;
    Ok(Griewank { d })
}

impl Objective for Griewank {
    fn name(&self) -> &str {
        "griewank"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, x: &[f64]) -> f64 {
        let sum: f64 = x.iter().map(|xi| xi * xi / 4000.0).sum();
        let prod: f64 = x.iter().enumerate().map(|(i, xi)| (xi / ((i + 1) as f64).sqrt()).cos()).product();
        1.0 + sum - prod
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let roots: Vec<f64> = (1..=self.d).map(|i| (i as f64).sqrt()).collect();
        let cos: Vec<f64> = x.iter().zip(&roots).map(|(xi, r)| (xi / r).cos()).collect();
        // Products of all cosines except the i-th, without dividing.
        let mut prefix = vec![1.0; self.d + 1];
        for i in 0..self.d {
            prefix[i + 1] = prefix[i] * cos[i];
        }
        let mut suffix = 1.0;
        let mut g = vec![0.0; self.d];
        for i in (0..self.d).rev() {
            let others = prefix[i] * suffix;
            g[i] = x[i] / 2000.0 + (x[i] / roots[i]).sin() / roots[i] * others;
            suffix *= cos[i];
        }
        Some(g)
    }
    fn f_min(&self) -> Option<f64> {
        Some(0.0)
    }
    fn minimizer(&self) -> Option<Vec<f64>> {
        Some(vec![0.0; self.d])
    }
    fn x0(&self) -> Vec<f64> {
        vec![1.0; self.d]
    }
}

/// Constructor parameters; absent fields take the defaults of the named
/// problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

/// A reproducible problem instance: name, dimension, parameters and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: ProblemParams,
}

impl ProblemSpec {
    pub fn new(name: impl Into<String>, d: usize) -> Self {
        Self { name: name.into(), d, seed: 0, params: ProblemParams::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_params(mut self, params: ProblemParams) -> Self {
        self.params = params;
        self
    }

    /// Short label used in output files, e.g. `least_squares_d50`.
    pub fn label(&self) -> String {
        format!("{}_d{}", self.name, self.d)
    }
}

pub const DEFAULT_LS_L: f64 = 1e4;
pub const DEFAULT_LS_MU: f64 = 1.0;
pub const DEFAULT_LOGISTIC_N: usize = 1000;
pub const DEFAULT_LOGISTIC_LAMBDA: f64 = 1e-5;

const BUILTIN: [(&str, &str); 6] = [
    ("least_squares", "1/2 |Ax - y|^2, spectrum of A^T A in [mu, L] (params: L, mu)"),
    ("qing", "sum (x_i^2 - i)^2"),
    ("rosenbrock", "sum 100 (x_{i+1} - x_i^2)^2 + (x_i - 1)^2, d >= 2"),
    ("logistic", "regularized logistic regression on Gaussian data (params: n, lambda)"),
    ("trid", "sum (x_i - 1)^2 - sum x_i x_{i-1}"),
    ("griewank", "1 + sum x_i^2 / 4000 - prod cos(x_i / sqrt(i))"),
];

fn build_builtin(spec: &ProblemSpec) -> Result<Arc<dyn Objective>> {
    let stream = RngStream::new(spec.seed, 0);
    let p = &spec.params;
    Ok(match spec.name.as_str() {
        "least_squares" => Arc::new(make_least_squares(
            spec.d,
            p.l.unwrap_or(DEFAULT_LS_L),
            p.mu.unwrap_or(DEFAULT_LS_MU),
            &stream,
        )?),
        "qing" => Arc::new(make_qing(spec.d)?),
        "rosenbrock" => Arc::new(make_rosenbrock(spec.d)?),
        "logistic" => Arc::new(make_logistic(
            spec.d,
            p.n.unwrap_or(DEFAULT_LOGISTIC_N),
            p.lambda.unwrap_or(DEFAULT_LOGISTIC_LAMBDA),
            &stream,
        )?),
        "trid" => Arc::new(make_trid(spec.d)?),
        "griewank" => Arc::new(make_griewank(spec.d)?),
        other => return Err(Error::UnknownName(other.to_string())),
    })
}

/// Relative gradient mismatch `‖∇F − ∇_cd F‖ / max(1, ‖∇F‖)` against central
/// differences with step `step`, maximized over `points`.
pub fn gradient_check(f: &dyn Objective, points: &[Vec<f64>], step: f64) -> Option<f64> {
    let mut worst = 0.0_f64;
    for x in points {
        let g = f.gradient(x)?;
        let mut probe = x.clone();
        let mut err_sq = 0.0;
        for i in 0..x.len() {
            probe[i] = x[i] + step;
            let up = f.value(&probe);
            probe[i] = x[i] - step;
            let down = f.value(&probe);
            probe[i] = x[i];
            err_sq += (g[i] - (up - down) / (2.0 * step)).powi(2);
        }
        worst = worst.max(err_sq.sqrt() / norm_sq(&g).sqrt().max(1.0));
    }
    Some(worst)
}

/// Five seeded points `x0 + U[-1, 1]^d` used for gradient validation.
pub fn validation_points(f: &dyn Objective, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(seed, 0).derive(f.name()).rng();
    let x0 = f.x0();
    (0..5)
        .map(|_| x0.iter().map(|xi| xi + rng.random_range(-1.0..=1.0)).collect())
        .collect()
}

/// Check the invariants an objective must satisfy before registration.
pub fn validate(f: &dyn Objective) -> Result<()> {
    let fail = |reason: String| Error::Validation { name: f.name().to_string(), reason };
    if f.dim() == 0 || f.x0().len() != f.dim() {
        return Err(fail(format!("x0 has length {} for d = {}", f.x0().len(), f.dim())));
    }
    if let Some(err) = gradient_check(f, &validation_points(f, 0), 1e-6) {
        if !(err <= 1e-5) {
            return Err(fail(format!("gradient disagrees with central differences (rel. error {err:.3e})")));
        }
    }
    if let (Some(f_min), Some(x_star)) = (f.f_min(), f.minimizer()) {
        let at = f.value(&x_star);
        if !((at - f_min).abs() <= 1e-8 * f_min.abs().max(1.0)) {
            return Err(fail(format!("F(minimizer) = {at} but f_min = {f_min}")));
        }
    }
    Ok(())
}

/// Built-in benchmark constructors plus externally registered objectives.
#[derive(Default)]
pub struct Registry {
    external: BTreeMap<String, Arc<dyn Objective>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> impl Iterator<Item = (&'static str, &'static str)> {
        BUILTIN.into_iter()
    }

    pub fn contains(&self, name: &str) -> bool {
        BUILTIN.iter().any(|(n, _)| *n == name) || self.external.contains_key(name)
    }

    /// `(name, description)` for every addressable problem.
    pub fn list(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> =
            BUILTIN.iter().map(|(n, d)| (n.to_string(), d.to_string())).collect();
        for (name, f) in &self.external {
            out.push((name.clone(), format!("external, d = {}", f.dim())));
        }
        out
    }

    /// Plug in an externally defined problem after validating it.
    pub fn register_external(&mut self, problem: Arc<dyn Objective>) -> Result<()> {
        let name = problem.name().to_string();
        if self.contains(&name) {
            return Err(Error::DuplicateName(name));
        }
        validate(problem.as_ref())?;
        self.external.insert(name, problem);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Objective>> {
        self.external.get(name).cloned()
    }

    pub fn instantiate(&self, spec: &ProblemSpec) -> Result<Arc<dyn Objective>> {
        if let Some(f) = self.external.get(&spec.name) {
            if f.dim() != spec.d {
                return Err(Error::Parameter(format!(
                    "external problem `{}` has d = {}, requested {}",
                    spec.name,
                    f.dim(),
                    spec.d
                )));
            }
            return Ok(f.clone());
        }
        build_builtin(spec)
    }
}
