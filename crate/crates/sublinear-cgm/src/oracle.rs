//! Exact brute-force reference implementations used as ground truth in tests
//! and audit runs: linear-scan MaxIP and the exact Frank-Wolfe gap.
//!
//! The scans here deliberately avoid the shared vector kernels so that
//! cross-checks against the fast paths are meaningful.

use crate::error::{Error, Result};
use crate::vecspace::{Dataset, DenseVector};

/// Outcome of an exact linear scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleReport {
    pub best_index: usize,
    pub best_value: f64,
    /// Second-best value; `-inf` when the dataset has a single point.
    pub runner_up_value: f64,
    /// Number of points scanned (always `n`).
    pub scanned: usize,
}

// Local dot product, independent of DenseVector::dot.
fn ip(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.len() {
        acc += a[k] * b[k];
    }
    acc
}

/// Exact `argmax_y <x, y>` over the dataset; ties break to the lowest index.
pub fn maxip_scan(y: &Dataset, x: &DenseVector) -> Result<OracleReport> {
    maxip_scan_points(y.points(), x)
}

/// Same as [`maxip_scan`] over a plain point slice.
pub fn maxip_scan_points(points: &[DenseVector], x: &DenseVector) -> Result<OracleReport> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if points[0].dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: points[0].dim(),
            got: x.dim(),
        });
    }
    let mut best_index = 0;
    let mut best_value = f64::NEG_INFINITY;
    let mut runner_up_value = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let v = ip(x.as_slice(), p.as_slice());
        if v > best_value {
            runner_up_value = best_value;
            best_value = v;
            best_index = i;
        } else if v > runner_up_value {
            runner_up_value = v;
        }
    }
    Ok(OracleReport {
        best_index,
        best_value,
        runner_up_value,
        scanned: points.len(),
    })
}

/// Exact Frank-Wolfe gap `-min_s <s - w, grad>`; nonnegative whenever `w`
/// lies in the hull of the dataset.
pub fn fw_gap_exact(ds: &Dataset, w: &DenseVector, grad: &DenseVector) -> f64 {
    let mut min_val = f64::INFINITY;
    for s in ds.points() {
        let mut v = 0.0;
        for k in 0..grad.dim() {
            v += (s.as_slice()[k] - w.as_slice()[k]) * grad.as_slice()[k];
        }
        if v < min_val {
            min_val = v;
        }
    }
    -min_val
}

/// Index minimizing `<s - w, grad>` (the exact direction vertex), ties to
/// the lowest index.
pub fn fw_direction_exact(ds: &Dataset, w: &DenseVector, grad: &DenseVector) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, s) in ds.points().iter().enumerate() {
        let mut v = 0.0;
        for k in 0..grad.dim() {
            v += (s.as_slice()[k] - w.as_slice()[k]) * grad.as_slice()[k];
        }
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    best
}
