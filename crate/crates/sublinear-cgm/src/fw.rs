//! Frank-Wolfe solvers with full per-iteration tracing.
//!
//! [`frank_wolfe`] minimizes a convex smooth [`Objective`] over the convex
//! hull of a dataset. The per-iteration direction search runs either as an
//! exact linear scan or through a [`MaxIpIndex`] (the sublinear path), with
//! the fallback policy of the index deciding what happens when no candidate
//! clears the score threshold. [`herding`] specializes the solver to the
//! mean-matching objective `0.5 * ||w - mu||^2` and reports the vertex
//! sequence as samples. [`certify_convergence`] replays a trace against the
//! `2 * beta * D^2 / (c^2 (t+1))` bound (factor 4 in adaptive-quantization
//! mode).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maxip::{MaxIpIndex, QueryOutcome};
use crate::oracle;
use crate::vecspace::{random_hull_point, Dataset, DenseVector, Rng};

/// A convex, `beta`-smooth function on the hull.
pub trait Objective: Sync {
    fn eval(&self, w: &DenseVector) -> f64;
    fn grad(&self, w: &DenseVector) -> DenseVector;
    /// Smoothness constant used by schedules and certification.
    fn beta(&self) -> f64;
    /// Optional hint for benchmark reports: cost of one gradient in flops.
    fn grad_cost_hint(&self) -> Option<u64> {
        None
    }
}

/// `g(w) = scale/2 * ||w - target||^2`; gradient `scale * (w - target)`,
/// smoothness `scale`.
#[derive(Clone, Debug)]
pub struct DistanceObjective {
    pub target: DenseVector,
    pub scale: f64,
}

impl DistanceObjective {
    pub fn new(target: DenseVector, scale: f64) -> Self {
        Self { target, scale }
    }
}

impl Objective for DistanceObjective {
    fn eval(&self, w: &DenseVector) -> f64 {
        let d = w.sub(&self.target);
        0.5 * self.scale * d.dot(&d)
    }

    fn grad(&self, w: &DenseVector) -> DenseVector {
        w.sub(&self.target).scale(self.scale)
    }

    fn beta(&self) -> f64 {
        self.scale
    }

    fn grad_cost_hint(&self) -> Option<u64> {
        Some(2 * self.target.dim() as u64)
    }
}

/// `g(w) = 0.5 * (w - target)^T A (w - target)` for a PSD matrix `A`.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    matrix: Vec<f64>, // row-major dim x dim
    dim: usize,
    target: DenseVector,
    beta: f64,
}

impl QuadraticObjective {
    /// Random PSD quadratic with spectrum in `[beta_min, beta_max]`; the
    /// extreme eigenvalues are hit exactly, so `beta() == beta_max`.
    pub fn random(target: DenseVector, beta_min: f64, beta_max: f64, seed: u64) -> Result<Self> {
        if !(0.0 < beta_min && beta_min <= beta_max) {
            return Err(Error::param("beta", "need 0 < beta_min <= beta_max"));
        }
        let dim = target.dim();
        let mut rng = Rng::new(seed);
        let q = crate::vecspace::random_orthonormal(dim, &mut rng);
        let mut eigs: Vec<f64> = (0..dim)
            .map(|_| beta_min + (beta_max - beta_min) * rng.next_f64())
            .collect();
        eigs[0] = beta_max;
        if dim > 1 {
            eigs[dim - 1] = beta_min;
        }
        // A = Q^T diag(eigs) Q
        let mut matrix = vec![0.0; dim * dim];
        for (k, lam) in eigs.iter().enumerate() {
            for i in 0..dim {
                for j in 0..dim {
                    matrix[i * dim + j] += lam * q[k * dim + i] * q[k * dim + j];
                }
            }
        }
        Ok(Self {
            matrix,
            dim,
            target,
            beta: beta_max,
        })
    }

    fn matvec(&self, v: &DenseVector) -> DenseVector {
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
            out[i] = row.iter().zip(v.as_slice()).map(|(a, b)| a * b).sum();
        }
        DenseVector::new(out).expect("matvec of finite inputs")
    }
}

impl Objective for QuadraticObjective {
    fn eval(&self, w: &DenseVector) -> f64 {
        let d = w.sub(&self.target);
        0.5 * d.dot(&self.matvec(&d))
    }

    fn grad(&self, w: &DenseVector) -> DenseVector {
        self.matvec(&w.sub(&self.target))
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn grad_cost_hint(&self) -> Option<u64> {
        Some((self.dim * self.dim) as u64)
    }
}

/// Step-size schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `eta_t = 2 / (c (t + 2))`, clamped to `(0, 1]`.
    ClassicSchedule,
    Fixed(f64),
}

/// Direction-search backend. The config owns the index for the run.
#[allow(clippy::large_enum_variant)]
pub enum SearchMode {
    Exact,
    Lsh(MaxIpIndex),
}

impl std::fmt::Debug for SearchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SearchMode::Exact => write!(f, "Exact"),
            SearchMode::Lsh(_) => write!(f, "Lsh"),
        }
    }
}

/// Initial iterate.
#[derive(Clone, Debug)]
pub enum InitPoint {
    /// Flat-Dirichlet hull point (the default).
    RandomHull,
    /// A dataset vertex picked uniformly.
    RandomVertex,
    /// Caller-supplied point; hull membership is the caller's contract.
    Given(DenseVector),
}

#[derive(Debug)]
pub struct FwConfig {
    pub epsilon: f64,
    /// Approximation factor in the schedule; `1.0` is exact mode.
    pub c: f64,
    pub max_iters: usize,
    pub step_rule: StepRule,
    pub search: SearchMode,
    /// Quantize LSH queries with this additive budget (adaptive-query mode).
    pub adaptive_quantization: Option<f64>,
    pub seed: u64,
    pub init: InitPoint,
    /// Stop once the exact gap falls below `epsilon` (exact mode only; off
    /// by default to mirror the fixed-iteration schedule).
    pub early_stop_gap: bool,
    /// Record the exact gap and per-iteration direction quality; costs one
    /// linear scan per iteration.
    pub audit: bool,
    /// Flip the sign of the search gradient. Comparison switch for the
    /// herding argmax reading; leave `false` for optimization.
    pub flip_direction: bool,
}

impl FwConfig {
    pub fn exact(epsilon: f64, max_iters: usize, seed: u64) -> Self {
        Self {
            epsilon,
            c: 1.0,
            max_iters,
            step_rule: StepRule::ClassicSchedule,
            search: SearchMode::Exact,
            adaptive_quantization: None,
            seed,
            init: InitPoint::RandomHull,
            early_stop_gap: false,
            audit: false,
            flip_direction: false,
        }
    }

    pub fn lsh(epsilon: f64, c: f64, max_iters: usize, seed: u64, index: MaxIpIndex) -> Self {
        Self {
            epsilon,
            c,
            max_iters,
            step_rule: StepRule::ClassicSchedule,
            search: SearchMode::Lsh(index),
            adaptive_quantization: None,
            seed,
            init: InitPoint::RandomHull,
            early_stop_gap: false,
            audit: false,
            flip_direction: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::param("epsilon", "must be > 0"));
        }
        if !(0.0 < self.c && self.c <= 1.0) {
            return Err(Error::param("c", "must be in (0, 1]"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be >= 1"));
        }
        if let StepRule::Fixed(eta) = self.step_rule {
            if !(0.0 < eta && eta <= 1.0) {
                return Err(Error::param("step_rule", "fixed eta must be in (0, 1]"));
            }
        }
        if self.adaptive_quantization.is_some() && matches!(self.search, SearchMode::Exact) {
            return Err(Error::param(
                "adaptive_quantization",
                "only meaningful with the lsh search mode",
            ));
        }
        Ok(())
    }
}

/// One solver iteration. `objective` is `g(w_t)` before the step;
/// `direction_value` is `<s_t - w_t, grad_t>` for the chosen vertex.
/// Wall time is kept in memory but excluded from serialization so traces
/// stay byte-identical across runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FwIterRecord {
    pub t: usize,
    pub objective: f64,
    pub direction_value: f64,
    pub gap_estimate: f64,
    pub chosen_index: Option<usize>,
    pub eta: f64,
    pub candidates_touched: usize,
    pub fallback_used: bool,
    pub clamped: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exact_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub empirical_c: Option<f64>,
    #[serde(skip, default)]
    pub wall_nanos: u128,
    /// Time spent in the direction search alone.
    #[serde(skip, default)]
    pub dir_nanos: u128,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FwStatus {
    CompletedMaxIters,
    ConvergedGap,
    DeclaredConverged,
    AbortedNonFinite,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FwTrace {
    pub records: Vec<FwIterRecord>,
    pub status: FwStatus,
    pub final_objective: f64,
}

impl FwTrace {
    /// Smallest audited per-iteration direction quality; `None` without
    /// audit data.
    pub fn empirical_c_min(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.empirical_c)
            .fold(None, |acc, c| Some(acc.map_or(c, |a: f64| a.min(c))))
    }

    pub fn mean_candidates_touched(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records
            .iter()
            .map(|r| r.candidates_touched as f64)
            .sum::<f64>()
            / self.records.len() as f64
    }

    pub fn fallback_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.fallback_used).count() as f64 / self.records.len() as f64
    }

    /// First `t` (record index) with `objective - g_star <= target`, if any;
    /// the value `records.len()` refers to the final iterate.
    pub fn first_iteration_below(&self, g_star: f64, target: f64) -> Option<usize> {
        for r in &self.records {
            if r.objective - g_star <= target {
                return Some(r.t);
            }
        }
        if self.final_objective - g_star <= target {
            return Some(self.records.len());
        }
        None
    }
}

#[derive(Clone, Debug)]
pub struct FwRun {
    pub w: DenseVector,
    pub trace: FwTrace,
}

fn exact_direction(ds: &Dataset, grad: &DenseVector) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, s) in ds.points().iter().enumerate() {
        let v = s.dot(grad);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

/// Frank-Wolfe over the hull of `ds`. The iterate stays in the hull by
/// construction; termination is `max_iters`, the exact-gap stop (when
/// enabled), or a declared convergence from the LSH fallback.
pub fn frank_wolfe(ds: &Dataset, obj: &dyn Objective, mut cfg: FwConfig) -> Result<FwRun> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let SearchMode::Lsh(idx) = &mut cfg.search {
        idx.validate_dataset(ds)?;
        if let Some(lambda) = cfg.adaptive_quantization {
            idx.set_adaptive_lambda(Some(lambda))?;
        }
    }

    let mut rng = Rng::new(cfg.seed);
    let mut w = match &cfg.init {
        InitPoint::RandomHull => random_hull_point(ds, &mut rng),
        InitPoint::RandomVertex => ds.point(rng.next_index(ds.len())).clone(),
        InitPoint::Given(v) => {
            if v.dim() != ds.dim() {
                return Err(Error::DimensionMismatch {
                    expected: ds.dim(),
                    got: v.dim(),
                });
            }
            v.clone()
        }
    };

    let mut records: Vec<FwIterRecord> = Vec::new();
    let mut status = FwStatus::CompletedMaxIters;

    for t in 0..cfg.max_iters {
        let started = std::time::Instant::now();
        let objective = obj.eval(&w);
        if !objective.is_finite() {
            status = FwStatus::AbortedNonFinite;
            break;
        }
        let grad = obj.grad(&w);
        let search_grad = if cfg.flip_direction {
            grad.scale(-1.0)
        } else {
            grad.clone()
        };

        let search_started = std::time::Instant::now();
        let (chosen, candidates_touched, fallback_used, clamped) = match &cfg.search {
            SearchMode::Exact => (
                Some(exact_direction(ds, &search_grad)),
                ds.len(),
                false,
                false,
            ),
            SearchMode::Lsh(idx) => match idx.query_direction(&w, &search_grad)? {
                QueryOutcome::Found(hit) => (
                    Some(hit.index),
                    hit.candidates_touched,
                    hit.fallback_used,
                    hit.clamped,
                ),
                QueryOutcome::Converged { candidates_touched } => {
                    (None, candidates_touched, true, false)
                }
            },
        };
        let dir_nanos = search_started.elapsed().as_nanos();

        let (exact_gap, empirical_c) = if cfg.audit {
            let gap = oracle::fw_gap_exact(ds, &w, &grad);
            let quality = chosen.and_then(|i| {
                if gap > 1e-12 {
                    Some(-ds.point(i).sub(&w).dot(&grad) / gap)
                } else {
                    None
                }
            });
            (Some(gap), quality)
        } else {
            (None, None)
        };

        let Some(s_idx) = chosen else {
            // Declared converged by the index fallback.
            records.push(FwIterRecord {
                t,
                objective,
                direction_value: 0.0,
                gap_estimate: 0.0,
                chosen_index: None,
                eta: 0.0,
                candidates_touched,
                fallback_used,
                clamped,
                exact_gap,
                empirical_c,
                wall_nanos: started.elapsed().as_nanos(),
                dir_nanos,
            });
            status = FwStatus::DeclaredConverged;
            break;
        };

        let s = ds.point(s_idx);
        let direction_value = s.sub(&w).dot(&grad);
        let gap_estimate = -direction_value;

        if cfg.early_stop_gap
            && matches!(cfg.search, SearchMode::Exact)
            && gap_estimate <= cfg.epsilon
        {
            records.push(FwIterRecord {
                t,
                objective,
                direction_value,
                gap_estimate,
                chosen_index: Some(s_idx),
                eta: 0.0,
                candidates_touched,
                fallback_used,
                clamped,
                exact_gap,
                empirical_c,
                wall_nanos: started.elapsed().as_nanos(),
                dir_nanos,
            });
            status = FwStatus::ConvergedGap;
            break;
        }

        let eta = match cfg.step_rule {
            StepRule::ClassicSchedule => (2.0 / (cfg.c * (t as f64 + 2.0))).min(1.0),
            StepRule::Fixed(v) => v,
        };
        w = w.lerp(s, eta);

        records.push(FwIterRecord {
            t,
            objective,
            direction_value,
            gap_estimate,
            chosen_index: Some(s_idx),
            eta,
            candidates_touched,
            fallback_used,
            clamped,
            exact_gap,
            empirical_c,
            wall_nanos: started.elapsed().as_nanos(),
            dir_nanos,
        });
    }

    let final_objective = obj.eval(&w);
    if !final_objective.is_finite() {
        status = FwStatus::AbortedNonFinite;
    }
    Ok(FwRun {
        w,
        trace: FwTrace {
            records,
            status,
            final_objective,
        },
    })
}

/// Which direction the herding vertex search takes; see the module notes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HerdingConvention {
    /// `argmin_s <s, w - mu>`: the gradient reading, consistent with the
    /// Frank-Wolfe equivalence and the convergence analysis. Default.
    GradientArgmin,
    /// `argmax_s <w - mu, s>`, the sign-flipped reading of the update
    /// rule; kept only for comparison, it ascends the objective.
    FlippedArgmax,
}

#[derive(Clone, Debug)]
pub struct HerdingRun {
    pub w: DenseVector,
    pub trace: FwTrace,
    /// Chosen vertex per iteration: the herding sample sequence.
    pub samples: Vec<usize>,
}

/// Herding as Frank-Wolfe on `g(w) = 0.5 ||w - mu||^2` (1-smooth). When `mu`
/// lies outside the hull of the features the run still converges, to the
/// projection, and the objective floor is `0.5 * dist(mu, hull)^2`.
pub fn herding(
    features: &Dataset,
    mu: &DenseVector,
    mut cfg: FwConfig,
    convention: HerdingConvention,
) -> Result<HerdingRun> {
    if mu.dim() != features.dim() {
        return Err(Error::DimensionMismatch {
            expected: features.dim(),
            got: mu.dim(),
        });
    }
    cfg.flip_direction = matches!(convention, HerdingConvention::FlippedArgmax);
    let obj = DistanceObjective::new(mu.clone(), 1.0);
    let run = frank_wolfe(features, &obj, cfg)?;
    let samples = run
        .trace
        .records
        .iter()
        .filter_map(|r| r.chosen_index)
        .collect();
    Ok(HerdingRun {
        w: run.w,
        trace: run.trace,
        samples,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BoundViolation {
    pub t: usize,
    pub h: f64,
    pub bound: f64,
}

/// Outcome of [`certify_convergence`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceCertificate {
    pub passed: bool,
    pub checked: usize,
    pub factor: f64,
    pub first_violation: Option<BoundViolation>,
}

/// Checks `h_t = g(w_t) - g_star <= factor * beta * d_max^2 / (c^2 (t+1))`
/// for every recorded `t >= 1` and for the final iterate; `factor` is 2, or
/// 4 in adaptive-quantization mode. `g_star` is usually an estimate from a
/// long exact run, so the comparison grants it a `1e-10` slack.
pub fn certify_convergence(
    trace: &FwTrace,
    g_star: f64,
    beta: f64,
    d_max: f64,
    c: f64,
    adaptive: bool,
) -> ConvergenceCertificate {
    let factor = if adaptive { 4.0 } else { 2.0 };
    let bound_at = |t: usize| factor * beta * d_max * d_max / (c * c * (t as f64 + 1.0));
    let mut checked = 0;
    let mut first_violation = None;

    // Non-finite values (aborted runs) count as violations; the f64::MAX
    // sentinel keeps reports serializable as JSON.
    let violates = |h: f64, bound: f64| !h.is_finite() || h > bound;
    let stored = |h: f64| if h.is_finite() { h } else { f64::MAX };

    for r in &trace.records {
        if r.t == 0 {
            continue;
        }
        let h = r.objective - (g_star - 1e-10);
        let bound = bound_at(r.t);
        checked += 1;
        if violates(h, bound) {
            first_violation = Some(BoundViolation {
                t: r.t,
                h: stored(h),
                bound,
            });
            break;
        }
    }
    if first_violation.is_none() {
        if let Some(last) = trace.records.last() {
            let t_final = last.t + 1;
            let h = trace.final_objective - (g_star - 1e-10);
            let bound = bound_at(t_final);
            checked += 1;
            if violates(h, bound) {
                first_violation = Some(BoundViolation {
                    t: t_final,
                    h: stored(h),
                    bound,
                });
            }
        }
    }
    ConvergenceCertificate {
        passed: first_violation.is_none(),
        checked,
        factor,
        first_violation,
    }
}

/// Max violation of the smoothness inequality over random hull pairs;
/// a well-behaved objective stays below `1e-9`.
pub fn spot_check_smoothness(obj: &dyn Objective, ds: &Dataset, pairs: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let beta = obj.beta();
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let x = random_hull_point(ds, &mut rng);
        let y = random_hull_point(ds, &mut rng);
        let diff = y.sub(&x);
        let rhs = obj.eval(&x) + obj.grad(&x).dot(&diff) + 0.5 * beta * diff.dot(&diff);
        worst = worst.max(obj.eval(&y) - rhs);
    }
    worst
}

/// Max relative error between the analytic gradient and central finite
/// differences at the given points.
pub fn max_gradient_fd_error(obj: &dyn Objective, points: &[DenseVector]) -> f64 {
    let mut worst: f64 = 0.0;
    for x in points {
        let grad = obj.grad(x);
        let dim = x.dim();
        let mut fd = vec![0.0; dim];
        for j in 0..dim {
            let h = 1e-6 * x.as_slice()[j].abs().max(1.0);
            let mut up = x.as_slice().to_vec();
            let mut down = up.clone();
            up[j] += h;
            down[j] -= h;
            let up = DenseVector::new(up).unwrap();
            let down = DenseVector::new(down).unwrap();
            fd[j] = (obj.eval(&up) - obj.eval(&down)) / (2.0 * h);
        }
        let fd = DenseVector::new(fd).unwrap();
        let err = grad.sub(&fd).norm() / grad.norm().max(1e-12);
        worst = worst.max(err);
    }
    worst
}
