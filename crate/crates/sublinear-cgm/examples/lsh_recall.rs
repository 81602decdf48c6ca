//! Planted-pair recall of the multi-table LSH index.
//!
//! Plants one high-inner-product target per query among uniform distractors
//! and measures how often the target lands in the candidate set as the
//! table count grows. Also prints the theoretical query exponent rho for
//! the matching (c, tau) operating point.
//!
//! ```sh
//! cargo run --release --example lsh_recall
//! ```

use sublinear_cgm::lsh::{theoretical_rho, HashFamilyConfig, LshIndex};
use sublinear_cgm::vecspace::{DenseVector, Rng};

fn plant(anchor: &DenseVector, ip: f64, rng: &mut Rng) -> DenseVector {
    loop {
        let noise = rng.unit_vector(anchor.dim());
        let orth = noise.sub(&anchor.scale(noise.dot(anchor)));
        if orth.norm() > 1e-9 {
            return anchor
                .scale(ip)
                .add(&orth.scale((1.0 - ip * ip).sqrt() / orth.norm()));
        }
    }
}

fn main() -> sublinear_cgm::Result<()> {
    let n = 10_000;
    let dim = 32;
    let ip = 0.9;
    let mut rng = Rng::new(42);
    let queries: Vec<DenseVector> = (0..100).map(|_| rng.unit_vector(dim)).collect();
    let mut points: Vec<DenseVector> = (0..n).map(|_| rng.unit_vector(dim)).collect();
    let mut targets = Vec::new();
    for q in &queries {
        targets.push(points.len() as u32);
        points.push(plant(q, ip, &mut rng));
    }

    println!(
        "n = {} (+100 planted at ip = {ip}), d = {dim}, rho(c=0.9, tau=0.85) = {:.4}",
        n,
        theoretical_rho(0.9, 0.85)?
    );
    println!("{:>4} {:>4} {:>8} {:>12}", "K", "L", "recall", "mean cands");
    for &(k, l) in &[
        (12usize, 4usize),
        (12, 8),
        (12, 16),
        (12, 32),
        (14, 64),
        (14, 128),
    ] {
        let cfg = HashFamilyConfig::new(k, l, 7);
        let idx = LshIndex::build(&points, &cfg)?;
        let mut hits = 0;
        let mut cands_total = 0usize;
        for (q, target) in queries.iter().zip(&targets) {
            let cands = idx.candidates(q)?;
            cands_total += cands.len();
            if cands.contains(target) {
                hits += 1;
            }
        }
        println!(
            "{:>4} {:>4} {:>7}% {:>12.1}",
            k,
            l,
            hits,
            cands_total as f64 / queries.len() as f64
        );
    }
    Ok(())
}
