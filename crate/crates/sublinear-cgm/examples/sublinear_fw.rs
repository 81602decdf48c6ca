//! Exact vs LSH-backed Frank-Wolfe on the same instance.
//!
//! The LSH arm replaces the per-iteration linear scan with a MaxIP index
//! query plus exact rescoring of the candidates. The printout compares
//! iterations to reach epsilon and candidates touched per iteration.
//!
//! ```sh
//! cargo run --release --example sublinear_fw
//! ```

use sublinear_cgm::fw::{frank_wolfe, DistanceObjective, FwConfig, InitPoint};
use sublinear_cgm::lsh::HashFamilyConfig;
use sublinear_cgm::maxip::{FallbackPolicy, MaxIpIndex, MaxIpParams};
use sublinear_cgm::vecspace::{Dataset, Rng};

fn main() -> sublinear_cgm::Result<()> {
    let n = 20_000;
    let dim = 32;
    let epsilon = 1e-2;
    let mut rng = Rng::new(9);
    let anchor = rng.unit_vector(dim);
    let mut points = vec![anchor.clone()];
    points.extend((0..n - 1).map(|_| rng.unit_vector(dim)));
    let ds = Dataset::new(points)?;
    let obj = DistanceObjective::new(anchor.scale(-0.5), 1.0);

    let mut exact_cfg = FwConfig::exact(epsilon, 200, 5);
    exact_cfg.init = InitPoint::Given(anchor.clone());
    let exact = frank_wolfe(&ds, &obj, exact_cfg)?;

    let hash = HashFamilyConfig::new(13, 128, 3);
    let mut params = MaxIpParams::new(0.05, 0.9, hash);
    params.fallback = FallbackPolicy::LinearScan;
    let index = MaxIpIndex::build(&ds, params)?;
    let mut lsh_cfg = FwConfig::lsh(epsilon, 0.9, 200, 5, index);
    lsh_cfg.init = InitPoint::Given(anchor);
    lsh_cfg.audit = true;
    let lsh = frank_wolfe(&ds, &obj, lsh_cfg)?;

    let g_star = exact.trace.final_objective.min(lsh.trace.final_objective);
    let it_exact = exact.trace.first_iteration_below(g_star, epsilon);
    let it_lsh = lsh.trace.first_iteration_below(g_star, epsilon);

    println!("instance: n = {n}, d = {dim}, epsilon = {epsilon}");
    println!(
        "exact arm: {:?} iterations to epsilon, {} candidates per iteration",
        it_exact,
        ds.len()
    );
    // Candidate cost while converging; past epsilon the transformed scores
    // shrink below tau and the index hands more queries to the fallback.
    let prefix_mean = it_lsh.map(|t| {
        let prefix = &lsh.trace.records[..=t.min(lsh.trace.records.len() - 1)];
        prefix
            .iter()
            .map(|r| r.candidates_touched as f64)
            .sum::<f64>()
            / prefix.len() as f64
    });
    if let (Some(t), Some(mean)) = (it_lsh, prefix_mean) {
        println!(
            "lsh arm:   Some({t}) iterations to epsilon, {:.0} candidates per iteration ({:.3} of n) while converging",
            mean,
            mean / n as f64
        );
    }
    println!(
        "lsh arm over the whole {}-iteration run: {:.0} candidates per iteration, fallback fraction {:.3}",
        lsh.trace.records.len(),
        lsh.trace.mean_candidates_touched(),
        lsh.trace.fallback_fraction()
    );
    println!(
        "empirical c (min audited): {:?}",
        lsh.trace.empirical_c_min()
    );
    Ok(())
}
