//! The MaxIP reduction layer.
//!
//! Direction search in a conditional gradient step asks for
//! `argmin_s <s - w, grad>`. The pair of transforms here turns that into a
//! maximum inner product search between unit vectors:
//!
//! * [`phi0`]/[`psi0`] fold the affine part: `<phi0(w, grad), psi0(y)> =
//!   -<y - w, grad>`;
//! * [`phi1`]/[`psi1`] rescale onto the unit sphere, preserving the argmax:
//!   `<phi1(x, dx), psi1(y, dy)> = <x, y> / (dx * dy)`.
//!
//! [`MaxIpIndex`] composes both with a multi-table LSH index over the
//! transformed dataset and answers `(c, phi, psi, tau)`-MaxIP queries with
//! exact rescoring of every candidate. [`QuantizerGrid`] snaps adaptive query
//! sequences to lattice cell centers so failure probabilities union-bound
//! over a finite center set, at an additive inner-product cost.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lsh::{HashFamilyConfig, LshIndex};
use crate::vecspace::{Dataset, DenseVector};

const MAGIC: &[u8; 4] = b"SMIP";
const FORMAT_VERSION: u32 = 1;

/// `phi0(x) = [grad^T, x^T grad]^T`; pairs with [`psi0`] so that
/// `<phi0(x, grad), psi0(y)> = -<y - x, grad>` exactly.
pub fn phi0(x: &DenseVector, grad: &DenseVector) -> Result<DenseVector> {
    if x.dim() != grad.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: grad.dim(),
        });
    }
    let mut coords = Vec::with_capacity(grad.dim() + 1);
    coords.extend_from_slice(grad.as_slice());
    coords.push(x.dot(grad));
    DenseVector::new(coords)
}

/// `psi0(y) = [-y^T, 1]^T`.
pub fn psi0(y: &DenseVector) -> DenseVector {
    let mut coords = Vec::with_capacity(y.dim() + 1);
    coords.extend(y.as_slice().iter().map(|c| -c));
    coords.push(1.0);
    DenseVector::new(coords).expect("negation preserves finiteness")
}

/// Query-side unit transform: `[x/dx, 0, sqrt(1 - ||x/dx||^2)]`.
pub fn phi1(x: &DenseVector, dx: f64) -> Result<DenseVector> {
    unit_embed(x, dx, true)
}

/// Data-side unit transform: `[y/dy, sqrt(1 - ||y/dy||^2), 0]`.
pub fn psi1(y: &DenseVector, dy: f64) -> Result<DenseVector> {
    unit_embed(y, dy, false)
}

fn unit_embed(v: &DenseVector, bound: f64, query_side: bool) -> Result<DenseVector> {
    if bound <= 0.0 {
        return Err(Error::param("scaling constant", "must be > 0"));
    }
    let norm = v.norm();
    if norm > bound * (1.0 + 1e-9) {
        return Err(Error::NormExceedsBound { norm, bound });
    }
    let mut coords = Vec::with_capacity(v.dim() + 2);
    coords.extend(v.as_slice().iter().map(|c| c / bound));
    let fill = (1.0 - (norm / bound) * (norm / bound)).max(0.0).sqrt();
    if query_side {
        coords.push(0.0);
        coords.push(fill);
    } else {
        coords.push(fill);
        coords.push(0.0);
    }
    DenseVector::new(coords)
}

/// The pair of scaling constants of the unit-sphere transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MipsUnitTransform {
    pub d_x: f64,
    pub d_y: f64,
}

impl MipsUnitTransform {
    pub fn new(d_x: f64, d_y: f64) -> Result<Self> {
        if d_x <= 0.0 {
            return Err(Error::param("d_x", "must be > 0"));
        }
        if d_y <= 0.0 {
            return Err(Error::param("d_y", "must be > 0"));
        }
        Ok(Self { d_x, d_y })
    }

    pub fn query(&self, x: &DenseVector) -> Result<DenseVector> {
        phi1(x, self.d_x)
    }

    pub fn data(&self, y: &DenseVector) -> Result<DenseVector> {
        psi1(y, self.d_y)
    }
}

/// Full query-side composition `phi1(phi0(w, grad), dx)`.
pub fn compose_query(w: &DenseVector, grad: &DenseVector, dx: f64) -> Result<DenseVector> {
    phi1(&phi0(w, grad)?, dx)
}

/// Full data-side composition `psi1(psi0(y), dy)`.
pub fn compose_data(y: &DenseVector, dy: f64) -> Result<DenseVector> {
    psi1(&psi0(y), dy)
}

// ---------------------------------------------------------------------------
// Polynomial inner-product decomposition
// ---------------------------------------------------------------------------

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Flattened tensor power `v^{(x) r}`; `r = 0` gives `[1]`.
fn tensor_power(v: &[f64], r: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..r {
        let mut next = Vec::with_capacity(out.len() * v.len());
        for a in &out {
            for b in v {
                next.push(a * b);
            }
        }
        out = next;
    }
    out
}

/// Maximum output dimension accepted by [`polynomial_ip_decompose`].
pub const MAX_DECOMPOSITION_DIM: usize = 4_000_000;

/// Decomposes `<phi1_out, psi1_out> + p(||phi2_out - psi2_out||^2)` into a
/// single inner product `<[phi1_out, b], [psi1_out, c]>`.
///
/// Writing `z = ||x||^2 + ||y||^2 - 2<x,y>`, each power `z^i` expands by the
/// multinomial theorem into terms `||x||^{2m} ||y||^{2l} (-2)^r <x,y>^r`, and
/// `<x,y>^r` is the inner product of flattened tensor powers. The query side
/// carries the coefficients and `||x||^{2m} x^{(x)r}` blocks, the data side
/// `||y||^{2l} y^{(x)r}` blocks, so the identity is exact.
pub fn polynomial_ip_decompose(
    phi1_out: &DenseVector,
    psi1_out: &DenseVector,
    phi2_out: &DenseVector,
    psi2_out: &DenseVector,
    coeffs: &[f64],
) -> Result<(DenseVector, DenseVector)> {
    if phi1_out.dim() != psi1_out.dim() {
        return Err(Error::DimensionMismatch {
            expected: phi1_out.dim(),
            got: psi1_out.dim(),
        });
    }
    if phi2_out.dim() != psi2_out.dim() {
        return Err(Error::DimensionMismatch {
            expected: phi2_out.dim(),
            got: psi2_out.dim(),
        });
    }
    if coeffs.is_empty() {
        return Err(Error::param("coeffs", "need at least the constant term"));
    }
    let degree = coeffs.len() - 1;
    if degree > 8 {
        return Err(Error::param(
            "coeffs",
            format!("degree {degree} exceeds the blowup guardrail of 8"),
        ));
    }
    let k2 = phi2_out.dim();
    // Blocks per (i, m, l, r) with m + l + r = i have k2^r entries.
    let mut total = phi1_out.dim();
    for i in 0..=degree {
        for r in 0..=i {
            total += (i - r + 1) * k2.pow(r as u32);
        }
    }
    if total > MAX_DECOMPOSITION_DIM {
        return Err(Error::param(
            "coeffs",
            format!("decomposition dimension {total} exceeds {MAX_DECOMPOSITION_DIM}"),
        ));
    }

    let x = phi2_out.as_slice();
    let y = psi2_out.as_slice();
    let x_sq: f64 = x.iter().map(|v| v * v).sum();
    let y_sq: f64 = y.iter().map(|v| v * v).sum();

    let mut b: Vec<f64> = phi1_out.as_slice().to_vec();
    let mut c: Vec<f64> = psi1_out.as_slice().to_vec();
    b.reserve(total - b.len());
    c.reserve(total - c.len());

    for (i, &a_i) in coeffs.iter().enumerate() {
        for r in 0..=i {
            let x_pow = tensor_power(x, r);
            let y_pow = tensor_power(y, r);
            for m in 0..=(i - r) {
                let l = i - r - m;
                let multinomial = factorial(i) / (factorial(m) * factorial(l) * factorial(r));
                let query_coef = a_i * multinomial * (-2.0f64).powi(r as i32) * x_sq.powi(m as i32);
                let data_coef = y_sq.powi(l as i32);
                for v in &x_pow {
                    b.push(query_coef * v);
                }
                for v in &y_pow {
                    c.push(data_coef * v);
                }
            }
        }
    }
    debug_assert_eq!(b.len(), total);
    debug_assert_eq!(c.len(), total);
    Ok((DenseVector::new(b)?, DenseVector::new(c)?))
}

// ---------------------------------------------------------------------------
// Lattice quantizer for adaptive queries
// ---------------------------------------------------------------------------

/// Axis-aligned cubic lattice with cell edge `2*lambda/sqrt(dim)`, so any
/// point sits within `lambda` of its cell center. Centers lie at half-edge
/// offsets from the origin; the rounding is half-to-even and therefore
/// deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerGrid {
    lambda: f64,
    dim: usize,
    cell_edge: f64,
}

impl QuantizerGrid {
    pub fn new(lambda: f64, dim: usize) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(Error::param("lambda", "must be > 0"));
        }
        if dim == 0 {
            return Err(Error::param("dim", "must be >= 1"));
        }
        Ok(Self {
            lambda,
            dim,
            cell_edge: 2.0 * lambda / (dim as f64).sqrt(),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_edge(&self) -> f64 {
        self.cell_edge
    }

    /// End-to-end additive inner-product budget for a `c`-approximate answer
    /// to a quantized unit query: the renormalized center sits within
    /// `2*lambda` of the query, and the `c`-approximation propagates that
    /// perturbation once more, giving `(1 + c) * 2 * lambda`.
    pub fn lambda_effective(&self, c: f64) -> f64 {
        (1.0 + c) * 2.0 * self.lambda
    }

    /// Cell center containing `q`, before renormalization; within `lambda`
    /// of `q` in `l2`.
    pub fn cell_center(&self, q: &DenseVector) -> DenseVector {
        let coords = q
            .as_slice()
            .iter()
            .map(|&v| ((v / self.cell_edge - 0.5).round_ties_even() + 0.5) * self.cell_edge)
            .collect();
        DenseVector::new(coords).expect("grid arithmetic is finite")
    }

    /// Cell center renormalized to the unit sphere (for hashing). The
    /// renormalization shift is folded into the reported
    /// [`QuantizerGrid::lambda_effective`] budget.
    pub fn quantize(&self, q: &DenseVector) -> DenseVector {
        let center = self.cell_center(q);
        match center.normalized() {
            Ok(v) => v,
            // A query at the grid origin keeps its own direction.
            Err(_) => q.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Composite (c, phi, psi, tau)-MaxIP index
// ---------------------------------------------------------------------------

/// What to do when no LSH candidate reaches the `c * tau` score threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Trust the threshold: report convergence (sound once
    /// `tau * dx * dy <= epsilon`).
    DeclareConverged,
    /// Rescan the dataset exactly; keeps optimizer runs honest.
    LinearScan,
    /// Propagate an error.
    Fail,
}

/// How the query-side scaling constant is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DxMode {
    /// Fixed bound; queries exceeding it follow the [`NormPolicy`].
    Fixed(f64),
    /// Normalize each query by its own `||phi0||`. Equivalent direction
    /// contract (the scale cancels), and transformed scores do not decay as
    /// the gradient shrinks over a solver run.
    PerQuery,
}

/// Policy for queries whose `||phi0||` exceeds a fixed `d_x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPolicy {
    /// Rescale the query to norm `d_x` and count the event in the stats.
    /// The argmax is unaffected (uniform positive scaling).
    ClampAndWarn,
    HardError,
}

/// Build parameters for [`MaxIpIndex`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MaxIpParams {
    pub tau: f64,
    pub c: f64,
    pub hash: HashFamilyConfig,
    pub dx: DxMode,
    pub overflow: NormPolicy,
    pub fallback: FallbackPolicy,
    /// Enables query quantization with this additive budget.
    pub adaptive_lambda: Option<f64>,
}

impl MaxIpParams {
    pub fn new(tau: f64, c: f64, hash: HashFamilyConfig) -> Self {
        Self {
            tau,
            c,
            hash,
            dx: DxMode::PerQuery,
            overflow: NormPolicy::ClampAndWarn,
            fallback: FallbackPolicy::LinearScan,
            adaptive_lambda: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 < self.tau && self.tau < 1.0) {
            return Err(Error::param(
                "tau",
                format!("must be in (0,1), got {}", self.tau),
            ));
        }
        if !(0.0 < self.c && self.c < 1.0) {
            return Err(Error::param(
                "c",
                format!("must be in (0,1), got {}", self.c),
            ));
        }
        if let DxMode::Fixed(v) = self.dx {
            if v <= 0.0 {
                return Err(Error::param("dx", "fixed d_x must be > 0"));
            }
        }
        if let Some(lambda) = self.adaptive_lambda {
            if lambda <= 0.0 {
                return Err(Error::param("adaptive_lambda", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Per-index query counters; atomically updated, safe under concurrent
/// queries.
#[derive(Debug, Default)]
pub struct MaxIpStats {
    queries: AtomicU64,
    fallback_scans: AtomicU64,
    declared_converged: AtomicU64,
    clamps: AtomicU64,
    candidates_touched: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MaxIpStatsSnapshot {
    pub queries: u64,
    pub fallback_scans: u64,
    pub declared_converged: u64,
    pub clamps: u64,
    pub candidates_touched: u64,
}

impl MaxIpStats {
    fn snapshot(&self) -> MaxIpStatsSnapshot {
        MaxIpStatsSnapshot {
            queries: self.queries.load(Ordering::Relaxed),
            fallback_scans: self.fallback_scans.load(Ordering::Relaxed),
            declared_converged: self.declared_converged.load(Ordering::Relaxed),
            clamps: self.clamps.load(Ordering::Relaxed),
            candidates_touched: self.candidates_touched.load(Ordering::Relaxed),
        }
    }
}

/// A single direction-search answer.
#[derive(Clone, Copy, Debug)]
pub struct DirectionHit {
    /// Index into the original dataset.
    pub index: usize,
    /// Transformed score `<phi(w), psi(s)>` of the returned point; maps back
    /// via `<s - w, grad> = -dx * dy * score` (for the unclamped query).
    pub score: f64,
    pub dx: f64,
    pub dy: f64,
    pub fallback_used: bool,
    pub clamped: bool,
    pub candidates_touched: usize,
}

/// Outcome of [`MaxIpIndex::query_direction`].
#[derive(Clone, Copy, Debug)]
pub enum QueryOutcome {
    Found(DirectionHit),
    /// The `declare_converged` fallback fired: no candidate scored at least
    /// `c * tau`.
    Converged {
        candidates_touched: usize,
    },
}

/// Composite transform + LSH index answering `(c, phi, psi, tau)`-MaxIP
/// direction queries over a fixed dataset.
///
/// Immutable after build except the stats counters; queries are safe from
/// multiple threads.
#[derive(Debug)]
pub struct MaxIpIndex {
    lsh: LshIndex,
    tau: f64,
    c: f64,
    dx: DxMode,
    dy: f64,
    overflow: NormPolicy,
    fallback: FallbackPolicy,
    quantizer: Option<QuantizerGrid>,
    dataset_hash: [u8; 32],
    dim: usize,
    stats: MaxIpStats,
}

/// Stable content hash of a dataset (dimension plus little-endian
/// coordinates).
pub fn dataset_hash(ds: &Dataset) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update((ds.dim() as u64).to_le_bytes());
    hasher.update((ds.len() as u64).to_le_bytes());
    for p in ds.points() {
        for c in p.as_slice() {
            hasher.update(c.to_le_bytes());
        }
    }
    hasher.finalize().into()
}

impl MaxIpIndex {
    /// Transforms the dataset (`d_y = max_i ||psi0(s_i)||`), builds the LSH
    /// index over the unit embeddings (total dimension `d + 3`), and attaches
    /// the query-side policies.
    pub fn build(ds: &Dataset, params: MaxIpParams) -> Result<Self> {
        params.validate()?;
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dy = ds
            .points()
            .iter()
            .map(|s| (s.dot(s) + 1.0).sqrt())
            .fold(0.0, f64::max);
        let embedded: Vec<DenseVector> = ds
            .points()
            .iter()
            .map(|s| compose_data(s, dy))
            .collect::<Result<_>>()?;
        let lsh = LshIndex::build(&embedded, &params.hash)?;
        let quantizer = match params.adaptive_lambda {
            Some(lambda) => Some(QuantizerGrid::new(lambda, ds.dim() + 3)?),
            None => None,
        };
        Ok(Self {
            lsh,
            tau: params.tau,
            c: params.c,
            dx: params.dx,
            dy,
            overflow: params.overflow,
            fallback: params.fallback,
            quantizer,
            dataset_hash: dataset_hash(ds),
            dim: ds.dim(),
            stats: MaxIpStats::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.lsh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lsh.is_empty()
    }

    /// Original dataset dimension (queries are `dim + 3` after embedding).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn dx_mode(&self) -> DxMode {
        self.dx
    }

    pub fn fallback(&self) -> FallbackPolicy {
        self.fallback
    }

    pub fn hash_config(&self) -> &HashFamilyConfig {
        self.lsh.config()
    }

    pub fn quantizer(&self) -> Option<&QuantizerGrid> {
        self.quantizer.as_ref()
    }

    pub fn dataset_hash_bytes(&self) -> &[u8; 32] {
        &self.dataset_hash
    }

    pub fn set_dx(&mut self, dx: DxMode) -> Result<()> {
        if let DxMode::Fixed(v) = dx {
            if v <= 0.0 {
                return Err(Error::param("dx", "fixed d_x must be > 0"));
            }
        }
        self.dx = dx;
        Ok(())
    }

    pub fn set_fallback(&mut self, fallback: FallbackPolicy) {
        self.fallback = fallback;
    }

    pub fn set_adaptive_lambda(&mut self, lambda: Option<f64>) -> Result<()> {
        self.quantizer = match lambda {
            Some(l) => Some(QuantizerGrid::new(l, self.dim + 3)?),
            None => None,
        };
        Ok(())
    }

    pub fn stats(&self) -> MaxIpStatsSnapshot {
        self.stats.snapshot()
    }

    /// Checks `ds` is the dataset this index was built over.
    pub fn validate_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.dim() != self.dim || ds.len() != self.len() {
            return Err(Error::IndexFormat(format!(
                "index built for n={} d={}, dataset has n={} d={}",
                self.len(),
                self.dim,
                ds.len(),
                ds.dim()
            )));
        }
        if dataset_hash(ds) != self.dataset_hash {
            return Err(Error::IndexFormat(
                "dataset content hash does not match the index".into(),
            ));
        }
        Ok(())
    }

    /// Direction search: returns the candidate maximizing the transformed
    /// score, or applies the fallback policy when no candidate reaches
    /// `c * tau`. Ties break to the lowest dataset index.
    pub fn query_direction(&self, w: &DenseVector, grad: &DenseVector) -> Result<QueryOutcome> {
        self.stats.queries.fetch_add(1, Ordering::Relaxed);
        let raw = phi0(w, grad)?;
        let mut clamped = false;
        let (query_vec, dx_used) = match self.dx {
            DxMode::Fixed(dx) => {
                let norm = raw.norm();
                if norm > dx * (1.0 + 1e-9) {
                    match self.overflow {
                        NormPolicy::HardError => {
                            return Err(Error::NormExceedsBound { norm, bound: dx })
                        }
                        NormPolicy::ClampAndWarn => {
                            clamped = true;
                            self.stats.clamps.fetch_add(1, Ordering::Relaxed);
                            (phi1(&raw.scale(dx / norm), dx)?, dx)
                        }
                    }
                } else {
                    (phi1(&raw, dx)?, dx)
                }
            }
            DxMode::PerQuery => {
                let norm = raw.norm();
                if norm < 1e-300 {
                    // Zero gradient: every direction is equivalent.
                    self.stats
                        .declared_converged
                        .fetch_add(1, Ordering::Relaxed);
                    return Ok(QueryOutcome::Converged {
                        candidates_touched: 0,
                    });
                }
                (phi1(&raw, norm)?, norm)
            }
        };
        let query_vec = match &self.quantizer {
            Some(grid) => grid.quantize(&query_vec),
            None => query_vec,
        };

        let candidates = self.lsh.candidates(&query_vec)?;
        let data = self.lsh.data();
        let mut best: Option<(usize, f64)> = None;
        for &i in &candidates {
            let score = query_vec.dot(&data[i as usize]);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i as usize, score));
            }
        }
        self.stats
            .candidates_touched
            .fetch_add(candidates.len() as u64, Ordering::Relaxed);

        let threshold = self.c * self.tau;
        if let Some((index, score)) = best {
            if score >= threshold {
                return Ok(QueryOutcome::Found(DirectionHit {
                    index,
                    score,
                    dx: dx_used,
                    dy: self.dy,
                    fallback_used: false,
                    clamped,
                    candidates_touched: candidates.len(),
                }));
            }
        }

        match self.fallback {
            FallbackPolicy::DeclareConverged => {
                self.stats
                    .declared_converged
                    .fetch_add(1, Ordering::Relaxed);
                Ok(QueryOutcome::Converged {
                    candidates_touched: candidates.len(),
                })
            }
            FallbackPolicy::Fail => Err(Error::FallbackFailed),
            FallbackPolicy::LinearScan => {
                self.stats.fallback_scans.fetch_add(1, Ordering::Relaxed);
                self.stats
                    .candidates_touched
                    .fetch_add(data.len() as u64, Ordering::Relaxed);
                let mut best_idx = 0;
                let mut best_score = f64::NEG_INFINITY;
                for (i, v) in data.iter().enumerate() {
                    let score = query_vec.dot(v);
                    if score > best_score {
                        best_score = score;
                        best_idx = i;
                    }
                }
                Ok(QueryOutcome::Found(DirectionHit {
                    index: best_idx,
                    score: best_score,
                    dx: dx_used,
                    dy: self.dy,
                    fallback_used: true,
                    clamped,
                    candidates_touched: candidates.len() + data.len(),
                }))
            }
        }
    }

    /// Whether declaring convergence at threshold `tau` certifies
    /// `epsilon`-optimality for the given query scale.
    pub fn declare_justified(&self, dx: f64, epsilon: f64) -> bool {
        self.tau * dx * self.dy <= epsilon
    }

    /// Versioned binary serialization: transform constants plus the
    /// embedded LSH index. Byte-identical for identical inputs.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.tau.to_le_bytes())?;
        w.write_all(&self.c.to_le_bytes())?;
        match self.dx {
            DxMode::PerQuery => {
                w.write_all(&[0u8])?;
                w.write_all(&0f64.to_le_bytes())?;
            }
            DxMode::Fixed(v) => {
                w.write_all(&[1u8])?;
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&self.dy.to_le_bytes())?;
        w.write_all(&[match self.overflow {
            NormPolicy::ClampAndWarn => 0u8,
            NormPolicy::HardError => 1u8,
        }])?;
        w.write_all(&[match self.fallback {
            FallbackPolicy::DeclareConverged => 0u8,
            FallbackPolicy::LinearScan => 1u8,
            FallbackPolicy::Fail => 2u8,
        }])?;
        match self.quantizer {
            Some(grid) => {
                w.write_all(&[1u8])?;
                w.write_all(&grid.lambda().to_le_bytes())?;
            }
            None => {
                w.write_all(&[0u8])?;
                w.write_all(&0f64.to_le_bytes())?;
            }
        }
        w.write_all(&self.dataset_hash)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        self.lsh.write_to(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        fn read_arr<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)?;
            Ok(buf)
        }
        fn read_f64(r: &mut impl Read) -> Result<f64> {
            Ok(f64::from_le_bytes(read_arr::<8>(r)?))
        }

        let magic = read_arr::<4>(r)?;
        if &magic != MAGIC {
            return Err(Error::IndexFormat("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(read_arr::<4>(r)?);
        if version != FORMAT_VERSION {
            return Err(Error::IndexFormat(format!(
                "unsupported version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let tau = read_f64(r)?;
        let c = read_f64(r)?;
        let dx_tag = read_arr::<1>(r)?[0];
        let dx_val = read_f64(r)?;
        let dx = match dx_tag {
            0 => DxMode::PerQuery,
            1 => DxMode::Fixed(dx_val),
            other => return Err(Error::IndexFormat(format!("unknown dx mode {other}"))),
        };
        let dy = read_f64(r)?;
        let overflow = match read_arr::<1>(r)?[0] {
            0 => NormPolicy::ClampAndWarn,
            1 => NormPolicy::HardError,
            other => return Err(Error::IndexFormat(format!("unknown norm policy {other}"))),
        };
        let fallback = match read_arr::<1>(r)?[0] {
            0 => FallbackPolicy::DeclareConverged,
            1 => FallbackPolicy::LinearScan,
            2 => FallbackPolicy::Fail,
            other => return Err(Error::IndexFormat(format!("unknown fallback {other}"))),
        };
        let quant_tag = read_arr::<1>(r)?[0];
        let lambda = read_f64(r)?;
        let dataset_hash = read_arr::<32>(r)?;
        let dim = u32::from_le_bytes(read_arr::<4>(r)?) as usize;
        let lsh = LshIndex::read_from(r)?;
        if lsh.dim() != dim + 3 {
            return Err(Error::IndexFormat(format!(
                "embedded index dimension {} inconsistent with base dimension {dim}",
                lsh.dim()
            )));
        }
        let quantizer = match quant_tag {
            0 => None,
            1 => Some(QuantizerGrid::new(lambda, dim + 3)?),
            other => return Err(Error::IndexFormat(format!("unknown quantizer tag {other}"))),
        };
        Ok(Self {
            lsh,
            tau,
            c,
            dx,
            dy,
            overflow,
            fallback,
            quantizer,
            dataset_hash,
            dim,
            stats: MaxIpStats::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::vecspace::{random_hull_point, Rng};

    fn dv(c: &[f64]) -> DenseVector {
        DenseVector::new(c.to_vec()).unwrap()
    }

    #[test]
    fn phi0_psi0_worked_example() {
        let x = dv(&[1.0, 0.0]);
        let grad = dv(&[1.0, 0.0]);
        let y = dv(&[0.0, 1.0]);
        let p = phi0(&x, &grad).unwrap();
        let q = psi0(&y);
        assert_eq!(p.as_slice(), &[1.0, 0.0, 1.0]);
        assert_eq!(q.as_slice(), &[0.0, -1.0, 1.0]);
        // <y - x, grad> = -1, <phi0, psi0> = 1.
        assert_eq!(p.dot(&q), 1.0);
        let direct = y.sub(&x).dot(&grad);
        assert_eq!(direct, -p.dot(&q));
    }

    #[test]
    fn phi0_psi0_zero_at_same_point() {
        let x = dv(&[0.3, -0.7, 2.0]);
        let grad = dv(&[1.0, 2.0, -0.5]);
        let v = phi0(&x, &grad).unwrap().dot(&psi0(&x));
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn phi0_psi0_identity_random() {
        let mut rng = Rng::new(8);
        for _ in 0..100 {
            let x = rng.unit_vector(8).scale(1.0 + rng.next_f64());
            let y = rng.unit_vector(8).scale(2.0 * rng.next_f64());
            let grad = rng.unit_vector(8).scale(3.0 * rng.next_f64());
            let lhs = y.sub(&x).dot(&grad);
            let rhs = -phi0(&x, &grad).unwrap().dot(&psi0(&y));
            assert!((lhs - rhs).abs() < 1e-12, "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn phi1_examples() {
        let out = phi1(&dv(&[0.6, 0.0]), 1.0).unwrap();
        assert!((out.as_slice()[0] - 0.6).abs() < 1e-15);
        assert_eq!(out.as_slice()[1], 0.0);
        assert_eq!(out.as_slice()[2], 0.0);
        assert!((out.as_slice()[3] - 0.8).abs() < 1e-12);
        assert!((out.norm() - 1.0).abs() < 1e-12);

        let pole = psi1(&dv(&[0.0, 0.0]), 1.0).unwrap();
        assert_eq!(pole.as_slice(), &[0.0, 0.0, 1.0, 0.0]);

        let a = phi1(&dv(&[0.6, 0.0]), 1.0).unwrap();
        let b = psi1(&dv(&[0.0, 0.5]), 1.0).unwrap();
        assert!(a.dot(&b).abs() < 1e-15, "orthogonal inputs stay orthogonal");
    }

    #[test]
    fn phi1_rejects_norm_overflow() {
        assert!(matches!(
            phi1(&dv(&[2.0, 0.0]), 1.0),
            Err(Error::NormExceedsBound { .. })
        ));
    }

    #[test]
    fn unit_transform_preserves_scaled_ip() {
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let x = rng.unit_vector(6).scale(rng.next_f64() * 2.0);
            let y = rng.unit_vector(6).scale(rng.next_f64() * 3.0);
            let t = MipsUnitTransform::new(2.5, 3.5).unwrap();
            let fx = t.query(&x).unwrap();
            let fy = t.data(&y).unwrap();
            assert!((fx.norm() - 1.0).abs() < 1e-9);
            assert!((fy.norm() - 1.0).abs() < 1e-9);
            assert!((fx.dot(&fy) - x.dot(&y) / (2.5 * 3.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn full_transform_identity() {
        // <y - w, grad> = -dx * dy * <phi(w), psi(y)>
        let mut rng = Rng::new(12);
        for _ in 0..200 {
            let w = rng.unit_vector(5).scale(rng.next_f64());
            let grad = rng.unit_vector(5).scale(2.0 * rng.next_f64());
            let y = rng.unit_vector(5);
            let dx = phi0(&w, &grad).unwrap().norm() * 1.5 + 0.1;
            let dy = (y.dot(&y) + 1.0).sqrt() + 0.3;
            let q = compose_query(&w, &grad, dx).unwrap();
            let p = compose_data(&y, dy).unwrap();
            let lhs = y.sub(&w).dot(&grad);
            let rhs = -dx * dy * q.dot(&p);
            assert!((lhs - rhs).abs() < 1e-9 * dx * dy);
        }
    }

    #[test]
    fn poly_decompose_zero_polynomial() {
        let mut rng = Rng::new(3);
        let p1 = rng.unit_vector(4);
        let q1 = rng.unit_vector(4);
        let p2 = rng.unit_vector(3);
        let q2 = rng.unit_vector(3);
        let (b, c) = polynomial_ip_decompose(&p1, &q1, &p2, &q2, &[0.0]).unwrap();
        assert!((b.dot(&c) - p1.dot(&q1)).abs() < 1e-14);
    }

    #[test]
    fn poly_decompose_linear_example() {
        let p1 = dv(&[1.0, 0.0]);
        let q1 = dv(&[0.5, 0.5]);
        let p2 = dv(&[0.5]);
        let q2 = dv(&[0.2]);
        // p(z) = z evaluated at (0.5 - 0.2)^2 = 0.09
        let (b, c) = polynomial_ip_decompose(&p1, &q1, &p2, &q2, &[0.0, 1.0]).unwrap();
        let expect = p1.dot(&q1) + 0.09;
        assert!((b.dot(&c) - expect).abs() < 1e-12);
    }

    #[test]
    fn poly_decompose_random_instances() {
        let mut rng = Rng::new(99);
        for trial in 0..100 {
            let k2 = 1 + (trial % 4);
            let p1 = rng.unit_vector(5);
            let q1 = rng.unit_vector(5);
            let p2 = rng.unit_vector(k2).scale(rng.next_f64() * 1.5);
            let q2 = rng.unit_vector(k2).scale(rng.next_f64() * 1.5);
            let coeffs: Vec<f64> = (0..=3).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let (b, c) = polynomial_ip_decompose(&p1, &q1, &p2, &q2, &coeffs).unwrap();
            let z = p2.sub(&q2).dot(&p2.sub(&q2));
            let direct: f64 = p1.dot(&q1)
                + coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * z.powi(i as i32))
                    .sum::<f64>();
            assert!(
                (b.dot(&c) - direct).abs() < 1e-10,
                "trial {trial}: {} vs {direct}",
                b.dot(&c)
            );
        }
    }

    #[test]
    fn poly_decompose_rejects_high_degree() {
        let v = dv(&[1.0]);
        let coeffs = vec![1.0; 10];
        assert!(polynomial_ip_decompose(&v, &v, &v, &v, &coeffs).is_err());
    }

    #[test]
    fn quantizer_fixed_point_and_grid_arithmetic() {
        let grid = QuantizerGrid::new(0.1, 4).unwrap();
        assert!((grid.cell_edge() - 0.1).abs() < 1e-15);
        // 0.26 lies in the cell centered at 0.25.
        let h = (1.0f64 - 0.26 * 0.26).sqrt();
        let q = dv(&[0.26, 0.0, 0.0, h]);
        let center = grid.cell_center(&q);
        assert!((center.as_slice()[0] - 0.25).abs() < 1e-12);
        // A center maps to itself pre-renormalization.
        let again = grid.cell_center(&center);
        assert_eq!(center, again);
    }

    #[test]
    fn quantizer_error_budget() {
        let grid = QuantizerGrid::new(0.05, 16).unwrap();
        let mut rng = Rng::new(5);
        let mut max_raw: f64 = 0.0;
        let mut max_renorm: f64 = 0.0;
        for _ in 0..1000 {
            let q = rng.unit_vector(16);
            let center = grid.cell_center(&q);
            let renorm = grid.quantize(&q);
            max_raw = max_raw.max(q.distance(&center));
            max_renorm = max_renorm.max(q.distance(&renorm));
            // Additive inner-product error against random unit y.
            let y = rng.unit_vector(16);
            let err = (q.dot(&y) - center.dot(&y)).abs();
            assert!(err <= 0.05 + 1e-9);
        }
        assert!(max_raw <= 0.05 + 1e-12, "raw center distance {max_raw}");
        assert!(
            max_renorm <= 0.1 + 1e-12,
            "renormalized distance {max_renorm}"
        );
    }

    fn small_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        Dataset::new((0..n).map(|_| rng.unit_vector(dim)).collect()).unwrap()
    }

    fn default_params(tau: f64, c: f64, k: usize, l: usize, seed: u64) -> MaxIpParams {
        MaxIpParams::new(tau, c, HashFamilyConfig::new(k, l, seed))
    }

    #[test]
    fn build_sets_dy_and_unit_embeddings() {
        let ds = Dataset::new(vec![dv(&[1.0, 0.0]), dv(&[0.0, 1.0])]).unwrap();
        let idx = MaxIpIndex::build(&ds, default_params(0.3, 0.9, 4, 4, 1)).unwrap();
        assert!((idx.dy() - 2.0f64.sqrt()).abs() < 1e-12);
        for v in idx.lsh.data() {
            assert!((v.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_point_always_returned() {
        let ds = Dataset::new(vec![dv(&[0.5, 0.5])]).unwrap();
        let idx = MaxIpIndex::build(&ds, default_params(0.3, 0.9, 4, 4, 2)).unwrap();
        let w = dv(&[0.5, 0.5]);
        let grad = dv(&[1.0, -1.0]);
        match idx.query_direction(&w, &grad).unwrap() {
            QueryOutcome::Found(hit) => assert_eq!(hit.index, 0),
            QueryOutcome::Converged { .. } => panic!("linear_scan should return the point"),
        }
    }

    #[test]
    fn linear_scan_matches_oracle() {
        let ds = small_dataset(200, 8, 7);
        let mut params = default_params(0.95, 0.99, 2, 1, 3);
        params.fallback = FallbackPolicy::LinearScan;
        let idx = MaxIpIndex::build(&ds, params).unwrap();
        let mut rng = Rng::new(31);
        for _ in 0..50 {
            let w = random_hull_point(&ds, &mut rng);
            let z = random_hull_point(&ds, &mut rng);
            let grad = w.sub(&z);
            if grad.norm() < 1e-12 {
                continue;
            }
            // tau close to 1 forces the scan nearly every time; either path
            // must agree with the brute-force argmin of <s - w, grad>.
            let QueryOutcome::Found(hit) = idx.query_direction(&w, &grad).unwrap() else {
                panic!("linear scan cannot declare convergence");
            };
            assert_eq!(hit.index, oracle::fw_direction_exact(&ds, &w, &grad));
        }
    }

    #[test]
    fn two_point_quadratic_picks_descent_vertex() {
        // g(w) = 0.5||w||^2, S = {e1, e2}, w = (0.9, 0.1): the argmin of
        // <s - w, w> is e2.
        let ds = Dataset::new(vec![dv(&[1.0, 0.0]), dv(&[0.0, 1.0])]).unwrap();
        let mut params = default_params(0.2, 0.9, 4, 8, 5);
        params.fallback = FallbackPolicy::LinearScan;
        let idx = MaxIpIndex::build(&ds, params).unwrap();
        let w = dv(&[0.9, 0.1]);
        let QueryOutcome::Found(hit) = idx.query_direction(&w, &w).unwrap() else {
            panic!("expected a direction");
        };
        assert_eq!(hit.index, 1);
        // <s* - w, grad> = -dx * dy * score
        let direct = ds.point(1).sub(&w).dot(&w);
        assert!((direct + hit.dx * hit.dy * hit.score).abs() < 1e-9 * hit.dx * hit.dy);
    }

    #[test]
    fn lsh_path_close_to_oracle_on_random_quadratics() {
        let ds = small_dataset(1000, 16, 11);
        let params = MaxIpParams::new(
            0.5,
            0.9,
            HashFamilyConfig::suggested(0.9, 0.5, 1000, 17).unwrap(),
        );
        let idx = MaxIpIndex::build(&ds, params).unwrap();
        let mut rng = Rng::new(23);
        let mut ok = 0;
        let total = 200;
        for _ in 0..total {
            let w = random_hull_point(&ds, &mut rng);
            let z = random_hull_point(&ds, &mut rng);
            let grad = w.sub(&z);
            if grad.norm() < 1e-12 {
                ok += 1;
                continue;
            }
            let QueryOutcome::Found(hit) = idx.query_direction(&w, &grad).unwrap() else {
                continue;
            };
            if hit.fallback_used {
                continue; // only the pure LSH path counts
            }
            // Compare direction values: candidate vs exact best.
            let best = oracle::fw_direction_exact(&ds, &w, &grad);
            let best_val = ds.point(best).sub(&w).dot(&grad);
            let got_val = ds.point(hit.index).sub(&w).dot(&grad);
            // Both are negative (descent); c-approximation in magnitude.
            if got_val <= 0.9 * best_val + 1e-12 {
                ok += 1;
            }
        }
        assert!(ok >= 180, "c-approximation held on {ok}/{total} queries");
    }

    #[test]
    fn declare_converged_and_fail_policies() {
        let ds = small_dataset(50, 8, 3);
        let mut params = default_params(0.999, 0.999, 2, 1, 9);
        params.fallback = FallbackPolicy::DeclareConverged;
        let idx = MaxIpIndex::build(&ds, params).unwrap();
        // Query with a gradient pointing away from every data point's
        // transformed direction: tau ~ 1 makes the threshold unreachable.
        let w = dv(&[0.0; 8]);
        let grad = Rng::new(4).unit_vector(8);
        match idx.query_direction(&w, &grad).unwrap() {
            QueryOutcome::Converged { .. } => {}
            QueryOutcome::Found(hit) => {
                panic!("score {} should not clear threshold", hit.score)
            }
        }
        assert_eq!(idx.stats().declared_converged, 1);

        let mut params = default_params(0.999, 0.999, 2, 1, 9);
        params.fallback = FallbackPolicy::Fail;
        let idx = MaxIpIndex::build(&ds, params).unwrap();
        assert!(matches!(
            idx.query_direction(&w, &grad),
            Err(Error::FallbackFailed)
        ));
    }

    #[test]
    fn fixed_dx_clamp_warns_and_preserves_argmax() {
        let ds = small_dataset(100, 6, 13);
        // tau * c above any attainable score: the linear scan always runs,
        // so the returned index is deterministic.
        let mut params = default_params(0.995, 0.99, 4, 8, 21);
        params.dx = DxMode::Fixed(0.05); // deliberately too small
        params.overflow = NormPolicy::ClampAndWarn;
        params.fallback = FallbackPolicy::LinearScan;
        let idx = MaxIpIndex::build(&ds, params).unwrap();
        let mut rng = Rng::new(2);
        let w = random_hull_point(&ds, &mut rng);
        let grad = rng.unit_vector(6);
        let QueryOutcome::Found(hit) = idx.query_direction(&w, &grad).unwrap() else {
            panic!();
        };
        assert!(hit.clamped);
        assert_eq!(idx.stats().clamps, 1);
        // Clamping rescales the query uniformly; the linear-scan argmax is
        // unchanged.
        assert_eq!(hit.index, oracle::fw_direction_exact(&ds, &w, &grad));

        let mut params = default_params(0.995, 0.99, 4, 8, 21);
        params.dx = DxMode::Fixed(0.05);
        params.overflow = NormPolicy::HardError;
        let idx = MaxIpIndex::build(&ds, params).unwrap();
        assert!(matches!(
            idx.query_direction(&w, &grad),
            Err(Error::NormExceedsBound { .. })
        ));
    }

    #[test]
    fn argmax_preservation_under_exact_scoring() {
        // argmax over S of <phi(w), psi(s)> equals argmin of <s - w, grad>.
        let mut rng = Rng::new(77);
        for _ in 0..100 {
            let ds = small_dataset(40, 5, rng.next_u64());
            let w = random_hull_point(&ds, &mut rng);
            let grad = rng.unit_vector(5).scale(0.5 + rng.next_f64());
            let dy = ds
                .points()
                .iter()
                .map(|s| (s.dot(s) + 1.0).sqrt())
                .fold(0.0, f64::max);
            let dx = phi0(&w, &grad).unwrap().norm().max(1e-12);
            let q = compose_query(&w, &grad, dx).unwrap();
            let mut best_idx = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, s) in ds.points().iter().enumerate() {
                let score = q.dot(&compose_data(s, dy).unwrap());
                if score > best_score {
                    best_score = score;
                    best_idx = i;
                }
            }
            assert_eq!(best_idx, oracle::fw_direction_exact(&ds, &w, &grad));
            // MaxIP precondition: best transformed score is nonnegative for
            // w in the hull (convex objective).
            assert!(best_score >= -1e-12);
        }
    }

    #[test]
    fn index_types_are_send_and_sync() {
        // Immutable after build; stats counters are atomic.
        fn assert_both<T: Send + Sync>() {}
        assert_both::<MaxIpIndex>();
        assert_both::<crate::lsh::LshIndex>();
        assert_both::<Dataset>();
    }

    #[test]
    fn index_roundtrip_and_dataset_validation() {
        let ds = small_dataset(60, 6, 5);
        let idx = MaxIpIndex::build(&ds, default_params(0.4, 0.9, 6, 8, 2)).unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let loaded = MaxIpIndex::read_from(&mut buf.as_slice()).unwrap();
        loaded.validate_dataset(&ds).unwrap();
        let other = small_dataset(60, 6, 6);
        assert!(loaded.validate_dataset(&other).is_err());

        let mut buf2 = Vec::new();
        loaded.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2, "save/load changed the serialized bytes");

        let mut rng = Rng::new(512);
        let w = random_hull_point(&ds, &mut rng);
        let grad = rng.unit_vector(6);
        let a = idx.query_direction(&w, &grad).unwrap();
        let b = loaded.query_direction(&w, &grad).unwrap();
        match (a, b) {
            (QueryOutcome::Found(x), QueryOutcome::Found(y)) => {
                assert_eq!(x.index, y.index);
            }
            (QueryOutcome::Converged { .. }, QueryOutcome::Converged { .. }) => {}
            _ => panic!("loaded index disagrees"),
        }
    }
}
