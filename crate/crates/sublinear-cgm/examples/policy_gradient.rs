//! Frank-Wolfe policy optimization on a gridworld, exact and LSH-backed.
//!
//! Eight compass actions per cell, absorbing goal in the corner. Prints the
//! objective J and the average gap as both runs progress.
//!
//! ```sh
//! cargo run --release --example policy_gradient
//! ```

use sublinear_cgm::acmdp::{gridworld, sfwpo, SfwpoConfig, SfwpoSearch};
use sublinear_cgm::lsh::HashFamilyConfig;
use sublinear_cgm::maxip::FallbackPolicy;

fn main() -> sublinear_cgm::Result<()> {
    let mdp = gridworld(4, 4, 0.9)?;
    println!(
        "gridworld: {} states, {} actions/state, gamma = {}",
        mdp.num_states(),
        mdp.num_actions(),
        mdp.gamma()
    );

    let iters = 300;
    let mut cfg = SfwpoConfig::exact(iters, 7);
    cfg.l_smooth_override = Some(0.02);
    let exact = sfwpo(&mdp, &cfg)?;

    let mut lsh_cfg = SfwpoConfig::exact(iters, 7);
    lsh_cfg.l_smooth_override = Some(0.02);
    lsh_cfg.search = SfwpoSearch::Lsh {
        hash: HashFamilyConfig::new(4, 8, 3),
        fallback: FallbackPolicy::LinearScan,
    };
    let lsh = sfwpo(&mdp, &lsh_cfg)?;

    println!(
        "{:>6} {:>12} {:>12} {:>12} {:>12}",
        "k", "J exact", "gap exact", "J lsh", "gap lsh"
    );
    for k in (0..iters).step_by(30) {
        let a = &exact.trace[k];
        let b = &lsh.trace[k];
        println!(
            "{:>6} {:>12.6} {:>12.4e} {:>12.6} {:>12.4e}",
            k,
            a.j_mu,
            a.average_gap(),
            b.j_mu,
            b.average_gap()
        );
    }
    let last_exact = exact.trace.last().unwrap();
    let last_lsh = lsh.trace.last().unwrap();
    println!(
        "final: J exact = {:.6}, J lsh = {:.6} (both monotone non-decreasing)",
        last_exact.j_mu, last_lsh.j_mu
    );
    Ok(())
}
