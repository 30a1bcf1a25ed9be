//! Direction matrices `P ∈ R^{d×ℓ}` for finite-difference surrogates.
//!
//! Three unstructured ensembles (i.i.d. columns) and six structured ones
//! (orthonormal columns). All generators draw exclusively from the caller's
//! RNG, so a given [`RngStream`](crate::rng::RngStream) reproduces the same
//! matrix bit-for-bit.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    Gaussian,
    Spherical,
    Rademacher,
    Coordinate,
    QrHaar,
    Butterfly,
    Householder,
    PermHouseholder,
    Stiefel,
}

impl DirectionKind {
    pub const ALL: [DirectionKind; 9] = [
        DirectionKind::Gaussian,
        DirectionKind::Spherical,
        DirectionKind::Rademacher,
        DirectionKind::Coordinate,
        DirectionKind::QrHaar,
        DirectionKind::Butterfly,
        DirectionKind::Householder,
        DirectionKind::PermHouseholder,
        DirectionKind::Stiefel,
    ];

    pub const STRUCTURED: [DirectionKind; 6] = [
        DirectionKind::Coordinate,
        DirectionKind::QrHaar,
        DirectionKind::Butterfly,
        DirectionKind::Householder,
        DirectionKind::PermHouseholder,
        DirectionKind::Stiefel,
    ];

    pub const UNSTRUCTURED: [DirectionKind; 3] =
        [DirectionKind::Gaussian, DirectionKind::Spherical, DirectionKind::Rademacher];

    pub fn as_str(self) -> &'static str {
        match self {
            DirectionKind::Gaussian => "gaussian",
            DirectionKind::Spherical => "spherical",
            DirectionKind::Rademacher => "rademacher",
            DirectionKind::Coordinate => "coordinate",
            DirectionKind::QrHaar => "qr_haar",
            DirectionKind::Butterfly => "butterfly",
            DirectionKind::Householder => "householder",
            DirectionKind::PermHouseholder => "perm_householder",
            DirectionKind::Stiefel => "stiefel",
        }
    }

    /// Columns are orthonormal by construction.
    pub fn is_structured(self) -> bool {
        !matches!(
            self,
            DirectionKind::Gaussian | DirectionKind::Spherical | DirectionKind::Rademacher
        )
    }

    /// One-letter legend label used in figures.
    pub fn letter(self) -> char {
        match self {
            DirectionKind::Spherical => 'S',
            DirectionKind::Gaussian => 'G',
            DirectionKind::Rademacher => 'R',
            DirectionKind::Coordinate => 'C',
            DirectionKind::Householder => 'H',
            DirectionKind::Butterfly => 'B',
            DirectionKind::PermHouseholder => 'P',
            DirectionKind::QrHaar => 'Q',
            DirectionKind::Stiefel => 'T',
        }
    }
}

impl fmt::Display for DirectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DirectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DirectionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown direction kind `{s}`")))
    }
}

/// A `d × ell` matrix stored column-major; column `i` is the direction `p⁽ⁱ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMatrix {
    d: usize,
    ell: usize,
    kind: DirectionKind,
    data: Vec<f64>,
}

impl DirectionMatrix {
    /// Wrap column-major data. Fails if the length is not `d * ell` or the
    /// shape is invalid.
    pub fn from_column_major(
        kind: DirectionKind,
        d: usize,
        ell: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        check_dims(d, ell)?;
        if data.len() != d * ell {
            return Err(Error::Parameter(format!(
                "expected {} entries for a {d}x{ell} matrix, got {}",
                d * ell,
                data.len()
            )));
        }
        Ok(Self { d, ell, kind, data })
    }

    pub fn from_columns(kind: DirectionKind, columns: &[Vec<f64>]) -> Result<Self> {
        let ell = columns.len();
        let d = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != d) {
            return Err(Error::Parameter("columns have unequal lengths".into()));
        }
        Self::from_column_major(kind, d, ell, columns.concat())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn kind(&self) -> DirectionKind {
        self.kind
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.d + row]
    }

    /// `max_{ij} |(PᵀP − I)_{ij}|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let p = DMatrix::from_column_slice(self.d, self.ell, &self.data);
        let gram = p.transpose() * &p;
        let mut worst = 0.0_f64;
        for ((i, j), v) in gram.iter().enumerate().map(|(k, v)| ((k % self.ell, k / self.ell), v)) {
            let err = (v - if i == j { 1.0 } else { 0.0 }).abs();
            if !(err <= worst) {
                worst = err;
            }
        }
        worst
    }

    /// Debug dump: a `d,ell,kind,seed` header, one metadata line, then one
    /// line per column.
    pub fn to_csv(&self, seed: u64) -> String {
        let mut out = format!("d,ell,kind,seed\n{},{},{},{}\n", self.d, self.ell, self.kind, seed);
        for col in self.columns() {
            let line: Vec<String> = col.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Inverse of [`to_csv`](Self::to_csv); returns the matrix and its seed.
    pub fn from_csv(text: &str) -> Result<(Self, u64)> {
        let bad = |msg: &str| Error::Parameter(format!("matrix dump: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some("d,ell,kind,seed") {
            return Err(bad("missing header"));
        }
        let meta: Vec<&str> = lines.next().ok_or_else(|| bad("missing metadata"))?.split(',').collect();
        if meta.len() != 4 {
            return Err(bad("metadata must have 4 fields"));
        }
        let d: usize = meta[0].parse().map_err(|_| bad("bad d"))?;
        let ell: usize = meta[1].parse().map_err(|_| bad("bad ell"))?;
        let kind: DirectionKind = meta[2].parse()?;
        let seed: u64 = meta[3].parse().map_err(|_| bad("bad seed"))?;
        let mut data = Vec::with_capacity(d * ell);
        for line in lines.filter(|l| !l.is_empty()) {
            for field in line.split(',') {
                data.push(field.parse::<f64>().map_err(|_| bad("bad entry"))?);
            }
        }
        Ok((Self::from_column_major(kind, d, ell, data)?, seed))
    }
}

fn check_dims(d: usize, ell: usize) -> Result<()> {
    if d == 0 || ell == 0 || ell > d {
        return Err(Error::Dimension { d, ell });
    }
    Ok(())
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// A point uniform on `S^{d−1}` (normalized Gaussian).
pub fn sample_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// `ell` distinct indices from `0..d`, uniform over subsets and orders.
fn sample_indices<R: Rng + ?Sized>(d: usize, ell: usize, rng: &mut R) -> Vec<usize> {
    index::sample(rng, d, ell).into_vec()
}

pub fn gen_gaussian<R: Rng + ?Sized>(d: usize, ell: usize, rng: &mut R) -> Result<DirectionMatrix> {
    check_dims(d, ell)?;
    let data = (0..d * ell).map(|_| normal(rng)).collect();
    DirectionMatrix::from_column_major(DirectionKind::Gaussian, d, ell, data)
}

pub fn gen_spherical<R: Rng + ?Sized>(d: usize, ell: usize, rng: &mut R) -> Result<DirectionMatrix> {
    check_dims(d, ell)?;
    let mut data = Vec::with_capacity(d * ell);
    for _ in 0..ell {
        data.extend(sample_sphere(d, rng));
    }
    DirectionMatrix::from_column_major(DirectionKind::Spherical, d, ell, data)
}

pub fn gen_rademacher<R: Rng + ?Sized>(d: usize, ell: usize, rng: &mut R) -> Result<DirectionMatrix> {
    check_dims(d, ell)?;
    let data = (0..d * ell).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    DirectionMatrix::from_column_major(DirectionKind::Rademacher, d, ell, data)
}

pub fn gen_coordinate<R: Rng + ?Sized>(d: usize, ell: usize, rng: &mut R) -> Result<DirectionMatrix> {
    check_dims(d, ell)?;
    Ok(basis_columns(DirectionKind::Coordinate, d, &sample_indices(d, ell, rng)))
}

fn basis_columns(kind: DirectionKind, d: usize, indices: &[usize]) -> DirectionMatrix {
    let mut data = vec![0.0; d * indices.len()];
    for (c, &j) in indices.iter().enumerate() {
        data[c * d + j] = 1.0;
    }
    DirectionMatrix { d, ell: indices.len(), kind, data }
}

/// Thin QR of a Gaussian matrix with the column signs of `Q` fixed by
/// `sign(R_jj)`, which makes `Q` Haar-distributed on the Stiefel manifold.
pub fn gen_qr_haar<R: Rng + ?Sized>(d: usize, ell: usize, rng: &mut R) -> Result<DirectionMatrix> {
    check_dims(d, ell)?;
    for _attempt in 0..2 {
        let a = DMatrix::from_vec(d, ell, (0..d * ell).map(|_| normal(rng)).collect());
        let qr = a.qr();
        let r = qr.r();
        if (0..ell).any(|j| r[(j, j)] == 0.0) {
            continue;
        }
        let mut q = qr.q();
        for j in 0..ell {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        return DirectionMatrix::from_column_major(DirectionKind::QrHaar, d, ell, q.as_slice().to_vec());
    }
    Err(Error::DegenerateSample("qr_haar"))
}

/// Random butterfly `G⁽ⁿ⁾ = R(θₙ) ⊗ … ⊗ R(θ₁)` on the leading `2ⁿ`
/// coordinates, padded with the identity up to `d`.
///
/// Never materialized: columns cost `2(2ⁿ − 1)` multiplications and a
/// matrix-vector product costs `2ⁿ⁺¹ n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterfly {
    d: usize,
    /// `(cos θ_m, sin θ_m)` for levels `m = 1..=n`.
    rotations: Vec<(f64, f64)>,
}

impl Butterfly {
    pub fn sample<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Self> {
        check_dims(d, 1)?;
        let levels = usize::BITS - 1 - d.leading_zeros();
        let rotations = (0..levels)
            .map(|_| {
                let theta = rng.random::<f64>() * TAU;
                (theta.cos(), theta.sin())
            })
            .collect();
        Ok(Self { d, rotations })
    }

    pub fn from_angles(d: usize, angles: &[f64]) -> Result<Self> {
        check_dims(d, 1)?;
        let levels = (usize::BITS - 1 - d.leading_zeros()) as usize;
        if angles.len() != levels {
            return Err(Error::Parameter(format!("need {levels} angles for d = {d}")));
        }
        Ok(Self { d, rotations: angles.iter().map(|t| (t.cos(), t.sin())).collect() })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Size `2ⁿ` of the butterfly block.
    pub fn block(&self) -> usize {
        1 << self.rotations.len()
    }

    /// Writes column `j` into `out` and returns the multiplications spent.
    pub fn column_into(&self, j: usize, out: &mut [f64]) -> u64 {
        debug_assert_eq!(out.len(), self.d);
        out.fill(0.0);
        let block = self.block();
        if j >= block {
            out[j] = 1.0;
            return 0;
        }
        // Kronecker build: after level m the leading 2^m entries hold the
        // column of G^(m) selected by the low m bits of j.
        out[0] = 1.0;
        let mut len = 1;
        let mut mults = 0;
        for (level, &(c, s)) in self.rotations.iter().enumerate() {
            let (top, bottom) = if (j >> level) & 1 == 0 { (c, -s) } else { (s, c) };
            for i in 0..len {
                let w = out[i];
                out[i] = top * w;
                out[len + i] = bottom * w;
            }
            mults += 2 * len as u64;
            len *= 2;
        }
        mults
    }

    /// In-place `x ← G x`; returns the multiplications spent.
    pub fn apply(&self, x: &mut [f64]) -> u64 {
        debug_assert_eq!(x.len(), self.d);
        let block = self.block();
        let mut mults = 0;
        // Level m acts on bit (m − 1) of the index.
        for (level, &(c, s)) in self.rotations.iter().enumerate() {
            let stride = 1 << level;
            for base in (0..block).step_by(2 * stride) {
                for i in base..base + stride {
                    let (a, b) = (x[i], x[i + stride]);
                    x[i] = c * a + s * b;
                    x[i + stride] = -s * a + c * b;
                }
            }
            mults += 2 * block as u64;
        }
        mults
    }
}

/// Butterfly directions: `ell` columns sampled without replacement from the
/// (padded) butterfly.
pub fn gen_butterfly<R: Rng + ?Sized>(d: usize, ell: usize, rng: &mut R) -> Result<DirectionMatrix> {
    gen_butterfly_counted(d, ell, rng).map(|(p, _)| p)
}

/// [`gen_butterfly`] that also reports the scalar multiplications spent.
pub fn gen_butterfly_counted<R: Rng + ?Sized>(
    d: usize,
    ell: usize,
    rng: &mut R,
) -> Result<(DirectionMatrix, u64)> {
    check_dims(d, ell)?;
    let butterfly = Butterfly::sample(d, rng)?;
    let picks = sample_indices(d, ell, rng);
    let mut data = vec![0.0; d * ell];
    let mut mults = 0;
    for (col, &j) in data.chunks_exact_mut(d).zip(&picks) {
        mults += butterfly.column_into(j, col);
    }
    Ok((DirectionMatrix { d, ell, kind: DirectionKind::Butterfly, data }, mults))
}

/// Columns `indices` of the reflector `I − 2vvᵀ`, each computed as
/// `e_j − 2 v_j v` without forming the reflector. `v` must be a unit vector.
pub fn reflector_columns(kind: DirectionKind, v: &[f64], indices: &[usize]) -> Result<DirectionMatrix> {
    reflector_columns_counted(kind, v, indices).map(|(p, _)| p)
}

fn reflector_columns_counted(
    kind: DirectionKind,
    v: &[f64],
    indices: &[usize],
) -> Result<(DirectionMatrix, u64)> {
    let d = v.len();
    check_dims(d, indices.len())?;
    if let Some(&bad) = indices.iter().find(|&&j| j >= d) {
        return Err(Error::Parameter(format!("column index {bad} out of range for d = {d}")));
    }
    let mut data = Vec::with_capacity(d * indices.len());
    let mut mults = 0;
    for &j in indices {
        let scale = -2.0 * v[j];
        let start = data.len();
        data.extend(v.iter().map(|vi| scale * vi));
        data[start + j] += 1.0;
        mults += d as u64 + 1;
    }
    Ok((DirectionMatrix { d, ell: indices.len(), kind, data }, mults))
}

/// First `ell` columns of a random Householder reflector.
pub fn gen_householder<R: Rng + ?Sized>(d: usize, ell: usize, rng: &mut R) -> Result<DirectionMatrix> {
    gen_householder_counted(d, ell, rng).map(|(p, _)| p)
}

pub fn gen_householder_counted<R: Rng + ?Sized>(
    d: usize,
    ell: usize,
    rng: &mut R,
) -> Result<(DirectionMatrix, u64)> {
    check_dims(d, ell)?;
    let v = sample_sphere(d, rng);
    let indices: Vec<usize> = (0..ell).collect();
    reflector_columns_counted(DirectionKind::Householder, &v, &indices)
}

/// `ell` columns of a random Householder reflector chosen by a random
/// truncated permutation.
pub fn gen_perm_householder<R: Rng + ?Sized>(
    d: usize,
    ell: usize,
    rng: &mut R,
) -> Result<DirectionMatrix> {
    gen_perm_householder_counted(d, ell, rng).map(|(p, _)| p)
}

pub fn gen_perm_householder_counted<R: Rng + ?Sized>(
    d: usize,
    ell: usize,
    rng: &mut R,
) -> Result<(DirectionMatrix, u64)> {
    check_dims(d, ell)?;
    let v = sample_sphere(d, rng);
    let indices = sample_indices(d, ell, rng);
    reflector_columns_counted(DirectionKind::PermHouseholder, &v, &indices)
}

/// Polar factor `A (AᵀA)^{-1/2}` of a Gaussian `A`.
pub fn gen_stiefel<R: Rng + ?Sized>(d: usize, ell: usize, rng: &mut R) -> Result<DirectionMatrix> {
    check_dims(d, ell)?;
    for _attempt in 0..2 {
        let a = DMatrix::from_vec(d, ell, (0..d * ell).map(|_| normal(rng)).collect());
        if let Some(p) = polar_factor(&a) {
            return DirectionMatrix::from_column_major(DirectionKind::Stiefel, d, ell, p.as_slice().to_vec());
        }
    }
    Err(Error::DegenerateSample("stiefel"))
}

/// `A (AᵀA)^{-1/2}`, or `None` when `AᵀA` is numerically singular.
pub(crate) fn polar_factor(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let gram = a.transpose() * a;
    let eig = SymmetricEigen::new(gram);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min < 1e-12 * max {
        return None;
    }
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (mut col, l) in scaled.column_iter_mut().zip(eig.eigenvalues.iter()) {
        col /= l.sqrt();
    }
    Some(a * (scaled * v.transpose()))
}

/// Dispatch on `kind`.
pub fn generate<R: Rng + ?Sized>(
    kind: DirectionKind,
    d: usize,
    ell: usize,
    rng: &mut R,
) -> Result<DirectionMatrix> {
    match kind {
        DirectionKind::Gaussian => gen_gaussian(d, ell, rng),
        DirectionKind::Spherical => gen_spherical(d, ell, rng),
        DirectionKind::Rademacher => gen_rademacher(d, ell, rng),
        DirectionKind::Coordinate => gen_coordinate(d, ell, rng),
        DirectionKind::QrHaar => gen_qr_haar(d, ell, rng),
        DirectionKind::Butterfly => gen_butterfly(d, ell, rng),
        DirectionKind::Householder => gen_householder(d, ell, rng),
        DirectionKind::PermHouseholder => gen_perm_householder(d, ell, rng),
        DirectionKind::Stiefel => gen_stiefel(d, ell, rng),
    }
}

/// Per-iteration source of direction matrices for one run.
///
/// With `kind = coordinate` and `ell = d` the identity is built once and
/// handed out on every call unless caching is disabled.
#[derive(Debug, Clone)]
pub struct DirectionSampler {
    kind: DirectionKind,
    d: usize,
    ell: usize,
    cached: Option<DirectionMatrix>,
    current: Option<DirectionMatrix>,
}

impl DirectionSampler {
    pub fn new(kind: DirectionKind, d: usize, ell: usize) -> Result<Self> {
        check_dims(d, ell)?;
        let cached = (kind == DirectionKind::Coordinate && ell == d)
            .then(|| basis_columns(kind, d, &(0..d).collect::<Vec<_>>()));
        Ok(Self { kind, d, ell, cached, current: None })
    }

    pub fn without_cache(mut self) -> Self {
        self.cached = None;
        self
    }

    pub fn kind(&self) -> DirectionKind {
        self.kind
    }

    pub fn is_cached(&self) -> bool {
        self.cached.is_some()
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<&DirectionMatrix> {
        if let Some(p) = &self.cached {
            return Ok(p);
        }
        let p = generate(self.kind, self.d, self.ell, rng)?;
        Ok(self.current.insert(p))
    }
}

/// Number of directions, either absolute or as a fraction of the dimension.
///
/// Parses `"7"`, `"d"`, `"d/3"` and `"2d/3"`. Fractions round up and are
/// clamped to `[1, d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EllSpec {
    Count(usize),
    Fraction(usize, usize),
}

impl EllSpec {
    pub fn resolve(self, d: usize) -> Result<usize> {
        match self {
            EllSpec::Count(n) => {
                check_dims(d, n)?;
                Ok(n)
            }
            EllSpec::Fraction(num, den) => Ok((d * num).div_ceil(den).clamp(1, d.max(1))),
        }
    }
}

impl fmt::Display for EllSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            EllSpec::Count(n) => write!(f, "{n}"),
            EllSpec::Fraction(1, 1) => f.write_str("d"),
            EllSpec::Fraction(1, den) => write!(f, "d/{den}"),
            EllSpec::Fraction(num, 1) => write!(f, "{num}d"),
            EllSpec::Fraction(num, den) => write!(f, "{num}d/{den}"),
        }
    }
}

impl FromStr for EllSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parameter(format!("cannot parse direction count `{s}`"));
        let t = s.trim();
        let Some(pos) = t.find('d') else {
            return t.parse().ok().filter(|n| *n > 0).map(EllSpec::Count).ok_or_else(bad);
        };
        let num = match &t[..pos] {
            "" => 1,
            n => n.trim_end_matches('*').parse().map_err(|_| bad())?,
        };
        let den = match t[pos + 1..].strip_prefix('/') {
            Some(den) => den.parse().map_err(|_| bad())?,
            None if t.len() == pos + 1 => 1,
            None => return Err(bad()),
        };
        if num == 0 || den == 0 {
            return Err(bad());
        }
        Ok(EllSpec::Fraction(num, den))
    }
}

impl Serialize for EllSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            EllSpec::Count(n) => s.serialize_u64(n as u64),
            _ => s.collect_str(self),
        }
    }
}

impl<'de> Deserialize<'de> for EllSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("direction count must be positive")),
            Raw::Int(n) => Ok(EllSpec::Count(n)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}
