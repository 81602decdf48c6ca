//! Exact Frank-Wolfe over the convex hull of a random point set.
//!
//! Minimizes a random convex quadratic and prints the suboptimality h_t
//! against the 2 beta D^2 / (t+1) rate bound.
//!
//! ```sh
//! cargo run --release --example frank_wolfe
//! ```

use sublinear_cgm::fw::{
    certify_convergence, frank_wolfe, FwConfig, Objective, QuadraticObjective,
};
use sublinear_cgm::vecspace::{Dataset, Rng};

fn main() -> sublinear_cgm::Result<()> {
    let n = 2000;
    let dim = 16;
    let mut rng = Rng::new(7);
    let ds = Dataset::new((0..n).map(|_| rng.unit_vector(dim)).collect())?;
    let target = rng.unit_vector(dim).scale(0.4);
    let obj = QuadraticObjective::random(target, 0.3, 1.0, 11)?;

    // Long reference run pins down g*.
    let reference = frank_wolfe(&ds, &obj, FwConfig::exact(1e-12, 4000, 3))?;
    let g_star = reference.trace.final_objective;

    let t = 400;
    let run = frank_wolfe(&ds, &obj, FwConfig::exact(1e-12, t, 3))?;
    let d_max = ds.max_diameter();

    println!("n = {n}, d = {dim}, beta = {}, D = {d_max:.4}", obj.beta());
    println!("g* (reference) = {g_star:.8}");
    println!("{:>6} {:>14} {:>14}", "t", "h_t", "bound");
    for r in run.trace.records.iter().filter(|r| r.t % 50 == 1) {
        let h = r.objective - g_star;
        let bound = 2.0 * obj.beta() * d_max * d_max / (r.t as f64 + 1.0);
        println!("{:>6} {:>14.6e} {:>14.6e}", r.t, h, bound);
    }

    let cert = certify_convergence(&run.trace, g_star, obj.beta(), d_max, 1.0, false);
    println!(
        "rate bound h_t <= 2 beta D^2 / (t+1): {} ({} checks)",
        if cert.passed { "PASS" } else { "FAIL" },
        cert.checked
    );
    Ok(())
}
