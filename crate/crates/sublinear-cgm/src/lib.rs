//! Conditional gradient methods with sublinear-cost direction search.
//!
//! The direction search inside Frank-Wolfe style solvers is a maximum inner
//! product search (MaxIP) over the feasible vertex set. This crate reduces
//! that search to approximate nearest neighbor queries on the unit sphere via
//! a pair of asymmetric transforms, answers the queries with a multi-table
//! LSH index, and wires the resulting approximate oracle into three solvers:
//!
//! * [`fw::frank_wolfe`] — minimization of a convex smooth function over the
//!   convex hull of a finite point set,
//! * [`fw::herding`] — the herding / mean-matching specialization,
//! * [`acmdp::sfwpo`] — Frank-Wolfe policy optimization on action-constrained
//!   MDPs.
//!
//! Every approximate path is paired with an exact brute-force oracle
//! ([`oracle`]) so runs can be audited and convergence bounds certified
//! ([`fw::certify_convergence`]).
//!
//! See the `examples/` directory for one runnable program per capability and
//! the `sublinear-cgm` binary for dataset generation, index building,
//! solver runs, benchmarking, and certification from the command line.

// Dense matrix/table code reads better with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod acmdp;
pub mod cli;
pub mod error;
pub mod fw;
pub mod lsh;
pub mod maxip;
pub mod oracle;
pub mod vecspace;

pub use error::{Error, Result};
pub use vecspace::{Dataset, DenseVector, Rng};
