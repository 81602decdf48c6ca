//! Herding as Frank-Wolfe on 0.5 ||w - mu||^2.
//!
//! Matches a mean embedding over four vertices and prints how often each
//! vertex is selected; for a uniform mean the frequencies approach 1/4.
//!
//! ```sh
//! cargo run --release --example herding
//! ```

use sublinear_cgm::fw::{herding, FwConfig, HerdingConvention};
use sublinear_cgm::vecspace::{convex_combination, Dataset, DenseVector};

fn main() -> sublinear_cgm::Result<()> {
    let features = Dataset::new(vec![
        DenseVector::new(vec![1.0, 0.0, 0.0, 0.0])?,
        DenseVector::new(vec![0.0, 1.0, 0.0, 0.0])?,
        DenseVector::new(vec![0.0, 0.0, 1.0, 0.0])?,
        DenseVector::new(vec![0.0, 0.0, 0.0, 1.0])?,
    ])?;
    let mu = convex_combination(features.points(), &[0.25, 0.25, 0.25, 0.25])?;

    let t = 10_000;
    let run = herding(
        &features,
        &mu,
        FwConfig::exact(1e-12, t, 1),
        HerdingConvention::GradientArgmin,
    )?;

    let mut counts = vec![0usize; features.len()];
    for &s in &run.samples {
        counts[s] += 1;
    }
    println!("target mu = {:?}", mu.as_slice());
    println!("samples per vertex over {t} iterations:");
    for (i, count) in counts.iter().enumerate() {
        println!("  vertex {i}: {count} ({:.4})", *count as f64 / t as f64);
    }
    println!(
        "final 0.5 ||w - mu||^2 = {:.3e} (bound {:.3e})",
        run.trace.final_objective,
        2.0 * features.max_diameter().powi(2) / (t as f64 + 1.0)
    );
    Ok(())
}
