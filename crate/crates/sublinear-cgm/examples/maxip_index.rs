//! The MaxIP reduction end to end: transforms, index, direction query.
//!
//! Shows the exact identity <y - w, grad> = -dx dy <phi(w), psi(y)>, builds
//! a composite index, and compares its direction answers against the
//! brute-force oracle.
//!
//! ```sh
//! cargo run --release --example maxip_index
//! ```

use sublinear_cgm::lsh::HashFamilyConfig;
use sublinear_cgm::maxip::{
    compose_data, compose_query, phi0, psi0, MaxIpIndex, MaxIpParams, QueryOutcome,
};
use sublinear_cgm::oracle;
use sublinear_cgm::vecspace::{random_hull_point, Dataset, Rng};

fn main() -> sublinear_cgm::Result<()> {
    let dim = 16;
    let mut rng = Rng::new(3);

    // The two-stage transform preserves inner products exactly.
    let w = rng.unit_vector(dim).scale(0.7);
    let grad = rng.unit_vector(dim).scale(1.3);
    let y = rng.unit_vector(dim);
    let dx = phi0(&w, &grad)?.norm();
    let dy = psi0(&y).norm();
    let lhs = y.sub(&w).dot(&grad);
    let rhs = -dx * dy * compose_query(&w, &grad, dx)?.dot(&compose_data(&y, dy)?);
    println!("<y - w, grad> = {lhs:.12}");
    println!("-dx dy <phi(w), psi(y)> = {rhs:.12}");

    // Composite index vs the oracle on direction queries.
    let n = 5000;
    let ds = Dataset::new((0..n).map(|_| rng.unit_vector(dim)).collect())?;
    let params = MaxIpParams::new(0.3, 0.9, HashFamilyConfig::new(10, 64, 5));
    let idx = MaxIpIndex::build(&ds, params)?;

    let mut agree = 0;
    let mut c_worst: f64 = 1.0;
    let trials = 200;
    for _ in 0..trials {
        let w = random_hull_point(&ds, &mut rng);
        let z = random_hull_point(&ds, &mut rng);
        let grad = w.sub(&z);
        if grad.norm() < 1e-12 {
            continue;
        }
        let QueryOutcome::Found(hit) = idx.query_direction(&w, &grad)? else {
            continue;
        };
        let best = oracle::fw_direction_exact(&ds, &w, &grad);
        if hit.index == best {
            agree += 1;
        }
        let got = ds.point(hit.index).sub(&w).dot(&grad);
        let opt = ds.point(best).sub(&w).dot(&grad);
        if opt < -1e-12 {
            c_worst = c_worst.min(got / opt);
        }
    }
    let stats = idx.stats();
    println!("direction queries matching the oracle argmin: {agree}/{trials}");
    println!("worst direction quality (got/optimal): {c_worst:.4}");
    println!(
        "index stats: {} queries, {} fallback scans, {} candidates touched",
        stats.queries, stats.fallback_scans, stats.candidates_touched
    );
    Ok(())
}
