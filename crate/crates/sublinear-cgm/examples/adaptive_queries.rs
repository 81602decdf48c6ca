//! Lattice quantization for adaptive query sequences.
//!
//! Queries that depend on previous answers break independent-failure
//! analysis; snapping each query to its lattice cell center restores a
//! union bound over finitely many centers at an additive inner-product
//! cost. The walk below derives each query from the previous answer and
//! checks the relaxed guarantee against brute force.
//!
//! ```sh
//! cargo run --release --example adaptive_queries
//! ```

use sublinear_cgm::lsh::{HashFamilyConfig, LshIndex};
use sublinear_cgm::maxip::QuantizerGrid;
use sublinear_cgm::oracle;
use sublinear_cgm::vecspace::{Dataset, DenseVector, Rng};

fn main() -> sublinear_cgm::Result<()> {
    let dim = 16;
    let lambda = 0.05;
    let c = 0.9;
    let mut rng = Rng::new(5);
    let anchor = rng.unit_vector(dim);
    let mut points: Vec<DenseVector> = (0..2000).map(|_| rng.unit_vector(dim)).collect();
    for _ in 0..50 {
        // A cluster of good answers keeps the tau-promise alive along the walk.
        let noise = rng.unit_vector(dim);
        let orth = noise.sub(&anchor.scale(noise.dot(&anchor)));
        points.push(
            anchor
                .scale(0.92)
                .add(&orth.scale((1.0f64 - 0.92 * 0.92).sqrt() / orth.norm())),
        );
    }
    let ds = Dataset::new(points.clone())?;
    let grid = QuantizerGrid::new(lambda, dim)?;
    let idx = LshIndex::build(&points, &HashFamilyConfig::new(11, 128, 3))?;

    println!(
        "lattice: dim = {dim}, lambda = {lambda}, cell edge = {:.5}, lambda_effective = {:.3}",
        grid.cell_edge(),
        grid.lambda_effective(c)
    );

    let mut q = anchor.clone();
    let mut distinct_centers = std::collections::BTreeSet::new();
    let mut worst_margin = f64::INFINITY;
    let steps = 500;
    for _ in 0..steps {
        let center = grid.quantize(&q);
        distinct_centers.insert(
            center
                .as_slice()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<u64>>(),
        );
        let cands = idx.candidates(&center)?;
        let (mut best, mut best_i) = (f64::NEG_INFINITY, 0usize);
        for &i in &cands {
            let s = center.dot(&points[i as usize]);
            if s > best {
                best = s;
                best_i = i as usize;
            }
        }
        let truth = oracle::maxip_scan(&ds, &q)?.best_value;
        let margin = q.dot(&points[best_i]) - (c * truth - grid.lambda_effective(c));
        worst_margin = worst_margin.min(margin);
        q = q.add(&points[best_i].scale(0.3)).normalized()?;
    }
    println!(
        "adaptive walk: {steps} queries hit {} distinct cell centers",
        distinct_centers.len()
    );
    println!(
        "relaxed guarantee <q,z> >= c*max - lambda_effective held with worst margin {worst_margin:.4}"
    );
    Ok(())
}
