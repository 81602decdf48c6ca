//! Core vector and dataset types, hull geometry, and deterministic randomness.
//!
//! Everything here is immutable after construction and safe to share across
//! threads; [`Rng`] instances are cheap and should not be shared (one per
//! worker).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `f64` vector with all-finite coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector {
    coords: Vec<f64>,
}

impl DenseVector {
    /// Validates finiteness and non-emptiness.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::param("coords", "vector must have dimension >= 1"));
        }
        for (i, c) in coords.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
        }
        Ok(Self { coords })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dot: dimension mismatch");
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim(), "distance: dimension mismatch");
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            coords: self.coords.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "add: dimension mismatch");
        Self {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "sub: dimension mismatch");
        Self {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// `(1 - eta) * self + eta * other`, the Frank-Wolfe update.
    pub fn lerp(&self, other: &Self, eta: f64) -> Self {
        assert_eq!(self.dim(), other.dim(), "lerp: dimension mismatch");
        Self {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| (1.0 - eta) * a + eta * b)
                .collect(),
        }
    }

    /// Rescales to unit norm. Errors on the zero vector.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::param("vector", "cannot normalize the zero vector"));
        }
        Ok(self.scale(1.0 / n))
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.coords
    }
}

/// Deterministic random source: ChaCha8 seeded from a 64-bit integer.
///
/// The stream is fully specified by the seed and identical on every
/// platform. Uniform doubles take the top 53 bits of each 64-bit output;
/// Gaussians use the Box-Muller transform on those uniforms.
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    cached_gauss: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            cached_gauss: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..n`.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index: empty range");
        // Modulo bias is negligible for n << 2^64.
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.cached_gauss.take() {
            return z;
        }
        // Rejection-free: u1 in (0,1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_gauss = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Standard exponential, `-ln(1 - U)`.
    pub fn next_exponential(&mut self) -> f64 {
        -(1.0 - self.next_f64()).ln()
    }

    /// Derives an independent child stream; deterministic in (seed, label).
    pub fn fork(&self, label: u64) -> Rng {
        Rng::new(
            self.seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(label)
                .rotate_left(17)
                ^ 0xd1b5_4a32_d192_ed03,
        )
    }

    /// Random unit vector (uniform on the sphere).
    pub fn unit_vector(&mut self, dim: usize) -> DenseVector {
        loop {
            let coords: Vec<f64> = (0..dim).map(|_| self.next_gaussian()).collect();
            let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return DenseVector::new(coords.iter().map(|c| c / norm).collect()).unwrap();
            }
        }
    }
}

/// Exact diameters are quadratic in `n`; above this we fall back to a
/// sampled lower bound plus the `2 * max_norm` upper bound.
pub const EXACT_DIAMETER_LIMIT: usize = 20_000;

/// Result of a diameter computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DiameterEstimate {
    Exact(f64),
    /// Sampled lower bound and the `2 * max_norm` upper bound.
    Interval {
        lower: f64,
        upper: f64,
    },
}

impl DiameterEstimate {
    /// The value safe to feed into convergence bounds (an upper bound).
    pub fn upper(&self) -> f64 {
        match *self {
            DiameterEstimate::Exact(d) => d,
            DiameterEstimate::Interval { upper, .. } => upper,
        }
    }
}

/// How to compute a dataset diameter.
#[derive(Clone, Copy, Debug)]
pub enum DiameterMode {
    Exact,
    Sampled(usize),
}

/// The finite point set `S` whose convex hull is the feasible region.
#[derive(Clone, Debug)]
pub struct Dataset {
    points: Vec<DenseVector>,
    dim: usize,
    max_diameter: f64,
    max_norm: f64,
    diameter_is_exact: bool,
}

impl Dataset {
    /// Builds a dataset, checking dimensions and computing `max_norm` and the
    /// diameter bound (exact up to [`EXACT_DIAMETER_LIMIT`] points, otherwise
    /// `2 * max_norm`).
    pub fn new(points: Vec<DenseVector>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dim = points[0].dim();
        for p in &points {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.dim(),
                });
            }
        }
        let max_norm = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let mut ds = Self {
            points,
            dim,
            max_diameter: 0.0,
            max_norm,
            diameter_is_exact: false,
        };
        if ds.len() <= EXACT_DIAMETER_LIMIT {
            ds.max_diameter = ds.exact_diameter();
            ds.diameter_is_exact = true;
        } else {
            ds.max_diameter = 2.0 * max_norm;
            ds.diameter_is_exact = false;
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[DenseVector] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &DenseVector {
        &self.points[i]
    }

    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    /// Diameter bound stored at construction; exact for small datasets,
    /// `2 * max_norm` otherwise.
    pub fn max_diameter(&self) -> f64 {
        self.max_diameter
    }

    pub fn diameter_is_exact(&self) -> bool {
        self.diameter_is_exact
    }

    fn exact_diameter(&self) -> f64 {
        let mut best = 0.0_f64;
        for i in 0..self.points.len() {
            for j in (i + 1)..self.points.len() {
                let d = self.points[i].distance(&self.points[j]);
                if d > best {
                    best = d;
                }
            }
        }
        best
    }

    /// Maximum pairwise distance, exact or estimated from `k` random pairs.
    ///
    /// Sampled mode reports `[lower, upper]` where `lower` comes from the
    /// sampled pairs and `upper = 2 * max_norm`.
    pub fn diameter(&self, mode: DiameterMode) -> Result<DiameterEstimate> {
        if self.points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        match mode {
            DiameterMode::Exact => Ok(DiameterEstimate::Exact(self.exact_diameter())),
            DiameterMode::Sampled(k) => {
                let mut rng = Rng::new(0x9a7e_5eed ^ k as u64);
                let mut lower = 0.0_f64;
                for _ in 0..k {
                    let i = rng.next_index(self.points.len());
                    let j = rng.next_index(self.points.len());
                    let d = self.points[i].distance(&self.points[j]);
                    if d > lower {
                        lower = d;
                    }
                }
                Ok(DiameterEstimate::Interval {
                    lower,
                    upper: 2.0 * self.max_norm,
                })
            }
        }
    }

    /// Loads CSV, one point per row, no header; decimal points only.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut points = Vec::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let coords: Vec<f64> = line
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("csv line {}: {}", line_no + 1, e)))
                })
                .collect::<Result<_>>()?;
            points.push(DenseVector::new(coords)?);
        }
        Dataset::new(points)
    }

    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for p in &self.points {
            let row: Vec<String> = p.as_slice().iter().map(|c| format!("{c}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Loads the raw binary format: little-endian f64, row-major, with a JSON
    /// sidecar `{"n": ..., "d": ...}`.
    pub fn from_raw(bin_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            n: usize,
            d: usize,
        }
        let meta: Meta = serde_json::from_reader(std::fs::File::open(meta_path)?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(bin_path)?.read_to_end(&mut bytes)?;
        let expected = meta.n * meta.d * 8;
        if bytes.len() != expected {
            return Err(Error::Config(format!(
                "raw dataset: expected {} bytes for n={} d={}, found {}",
                expected,
                meta.n,
                meta.d,
                bytes.len()
            )));
        }
        let mut points = Vec::with_capacity(meta.n);
        for row in 0..meta.n {
            let mut coords = Vec::with_capacity(meta.d);
            for col in 0..meta.d {
                let off = (row * meta.d + col) * 8;
                let val = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                coords.push(val);
            }
            points.push(DenseVector::new(coords)?);
        }
        Dataset::new(points)
    }

    pub fn to_raw(&self, bin_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(bin_path)?);
        for p in &self.points {
            for c in p.as_slice() {
                out.write_all(&c.to_le_bytes())?;
            }
        }
        out.flush()?;
        let meta = serde_json::json!({ "n": self.len(), "d": self.dim });
        std::fs::write(meta_path, serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn into_arc(self) -> Arc<Dataset> {
        Arc::new(self)
    }
}

/// `sum_i weights[i] * points[i]`; weights must be nonnegative and sum to 1
/// within `1e-12`.
pub fn convex_combination(points: &[DenseVector], weights: &[f64]) -> Result<DenseVector> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if points.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: weights.len(),
        });
    }
    let mut sum = 0.0;
    for &w in weights {
        if w < 0.0 {
            return Err(Error::NotConvexCombination {
                reason: format!("negative weight {w}"),
            });
        }
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::NotConvexCombination {
            reason: format!("weight sum {sum} deviates from 1 by more than 1e-12"),
        });
    }
    let dim = points[0].dim();
    let mut coords = vec![0.0; dim];
    for (p, &w) in points.iter().zip(weights) {
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.dim(),
            });
        }
        for (acc, c) in coords.iter_mut().zip(p.as_slice()) {
            *acc += w * c;
        }
    }
    DenseVector::new(coords)
}

/// Row-major orthonormal `dim x dim` matrix: Gram-Schmidt on Gaussian rows.
pub fn random_orthonormal(dim: usize, rng: &mut Rng) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| rng.next_gaussian()).collect())
        .collect();
    for i in 0..dim {
        for j in 0..i {
            let proj: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            for k in 0..dim {
                rows[i][k] -= proj * rows[j][k];
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        // Gaussian rows are almost surely independent; renormalize.
        for v in rows[i].iter_mut() {
            *v /= norm;
        }
    }
    rows.into_iter().flatten().collect()
}

/// Random point of the convex hull: flat-Dirichlet weights (normalized unit
/// exponentials) over all dataset points. Deterministic given the rng state.
pub fn random_hull_point(ds: &Dataset, rng: &mut Rng) -> DenseVector {
    let mut weights: Vec<f64> = (0..ds.len()).map(|_| rng.next_exponential()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    // Weights sum to 1 up to rounding; renormalize defects are below 1e-12.
    convex_combination(ds.points(), &weights).expect("dirichlet weights form a convex combination")
}
