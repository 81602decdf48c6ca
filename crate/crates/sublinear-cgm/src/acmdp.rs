//! Action-constrained MDPs, exact Q evaluation, and Frank-Wolfe policy
//! optimization (exact and LSH-backed direction search).
//!
//! States are finite; each state carries the same number of action vectors
//! `C(s)` in `R^d`. Rewards and transitions are specified at the action
//! vertices and extend to arbitrary actions in `conv(C(s))` by barycentric
//! interpolation: an action vector maps to the minimum-norm affine weights
//! reproducing it, so `r(s, .)` and `P(.|s, .)` are affine in the action and
//! agree with convex policy mixtures. This keeps `Q(s, .)` smooth while the
//! MaxIP dataset stays exactly the vertex set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsh::HashFamilyConfig;
use crate::maxip::{FallbackPolicy, MaxIpIndex, MaxIpParams, QueryOutcome};
use crate::vecspace::{Dataset, DenseVector, Rng};

const VALUE_ITERATION_RESIDUAL: f64 = 1e-10;
const VALUE_ITERATION_MAX_SWEEPS: usize = 1_000_000;

/// Minimum-norm affine interpolation weights for one state's action set.
///
/// `weights(a) = M^T G^{-1} [a; 1]` where `M`'s columns are `[a_i; 1]`; the
/// map is affine in `a` and reproduces `a` exactly whenever the actions
/// affinely span the space (a tiny ridge keeps degenerate sets usable).
#[derive(Clone, Debug)]
struct Interpolator {
    /// `n x (d+1)`, row i = row of `M^T G^{-1}` for action i.
    coeff: Vec<Vec<f64>>,
    dim: usize,
}

fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot =
            (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

impl Interpolator {
    fn new(actions: &[DenseVector]) -> Self {
        let dim = actions[0].dim();
        let k = dim + 1;
        // G = sum_i [a_i; 1][a_i; 1]^T with a ridge for degenerate sets.
        let mut g = vec![vec![0.0; k]; k];
        for a in actions {
            let mut col: Vec<f64> = a.as_slice().to_vec();
            col.push(1.0);
            for i in 0..k {
                for j in 0..k {
                    g[i][j] += col[i] * col[j];
                }
            }
        }
        for (i, row) in g.iter_mut().enumerate() {
            row[i] += 1e-10;
        }
        // coeff[i] = row i of M^T G^{-1}: solve G x = [a_i; 1] per action.
        let coeff = actions
            .iter()
            .map(|a| {
                let mut rhs: Vec<f64> = a.as_slice().to_vec();
                rhs.push(1.0);
                solve_linear(g.clone(), rhs).expect("ridge keeps G invertible")
            })
            .collect();
        Self { coeff, dim }
    }

    /// Affine weights for an arbitrary action vector (may be negative
    /// outside the simplex range; convex inputs reproduce convex weights).
    fn weights(&self, a: &[f64]) -> Vec<f64> {
        self.coeff
            .iter()
            .map(|row| {
                let mut acc = row[self.dim]; // the constant-1 slot
                for (c, v) in row.iter().zip(a) {
                    acc += c * v;
                }
                acc
            })
            .collect()
    }
}

/// JSON wire format for an MDP specification.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AcmdpSpec {
    schema_version: u32,
    gamma: f64,
    states: Vec<String>,
    mu: Vec<f64>,
    #[serde(default)]
    mu_min: Option<f64>,
    #[serde(default)]
    l_smooth: Option<f64>,
    actions: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    transition: Vec<Vec<Vec<f64>>>,
}

/// Finite action-constrained MDP with per-state action vectors, vertex
/// reward/transition tables, discount, and initial state distribution.
#[derive(Clone, Debug)]
pub struct Acmdp {
    state_names: Vec<String>,
    actions: Vec<Vec<DenseVector>>,
    reward: Vec<Vec<f64>>,
    transition: Vec<Vec<Vec<f64>>>,
    gamma: f64,
    mu: Vec<f64>,
    mu_min: Option<f64>,
    l_smooth: Option<f64>,
    action_dim: usize,
    interp: Vec<Interpolator>,
    state_diameters: Vec<f64>,
    d_max: f64,
}

impl Acmdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_names: Vec<String>,
        actions: Vec<Vec<DenseVector>>,
        reward: Vec<Vec<f64>>,
        transition: Vec<Vec<Vec<f64>>>,
        gamma: f64,
        mu: Vec<f64>,
        mu_min: Option<f64>,
        l_smooth: Option<f64>,
    ) -> Result<Self> {
        let s_count = state_names.len();
        if s_count == 0 {
            return Err(Error::MdpFormat("no states".into()));
        }
        if !(0.0 < gamma && gamma < 1.0) {
            return Err(Error::MdpFormat(format!("gamma {gamma} not in (0,1)")));
        }
        if actions.len() != s_count || reward.len() != s_count || transition.len() != s_count {
            return Err(Error::MdpFormat(
                "actions/reward/transition must list every state".into(),
            ));
        }
        if mu.len() != s_count {
            return Err(Error::MdpFormat("mu length != state count".into()));
        }
        if mu.iter().any(|&p| p < 0.0) || (mu.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::MdpFormat("mu is not a distribution".into()));
        }
        let n_actions = actions[0].len();
        if n_actions == 0 {
            return Err(Error::MdpFormat("states need at least one action".into()));
        }
        let action_dim = actions[0][0].dim();
        for (s, acts) in actions.iter().enumerate() {
            if acts.len() != n_actions {
                return Err(Error::MdpFormat(format!(
                    "state {s}: expected {n_actions} actions, found {}",
                    acts.len()
                )));
            }
            for a in acts {
                if a.dim() != action_dim {
                    return Err(Error::MdpFormat(format!(
                        "state {s}: action dimension {} != {action_dim}",
                        a.dim()
                    )));
                }
            }
            if reward[s].len() != n_actions {
                return Err(Error::MdpFormat(format!("state {s}: reward table size")));
            }
            for &r in &reward[s] {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::MdpFormat(format!(
                        "state {s}: reward {r} outside [0,1]"
                    )));
                }
            }
            if transition[s].len() != n_actions {
                return Err(Error::MdpFormat(format!("state {s}: transition rows")));
            }
            for (i, row) in transition[s].iter().enumerate() {
                if row.len() != s_count {
                    return Err(Error::MdpFormat(format!(
                        "state {s} action {i}: transition row length"
                    )));
                }
                if row.iter().any(|&p| p < 0.0) {
                    return Err(Error::MdpFormat(format!(
                        "state {s} action {i}: negative transition probability"
                    )));
                }
                if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::MdpFormat(format!(
                        "state {s} action {i}: transition row sums to {}",
                        row.iter().sum::<f64>()
                    )));
                }
            }
        }
        let interp = actions.iter().map(|acts| Interpolator::new(acts)).collect();
        let state_diameters: Vec<f64> = actions
            .iter()
            .map(|acts| {
                let mut d = 0.0_f64;
                for i in 0..acts.len() {
                    for j in (i + 1)..acts.len() {
                        d = d.max(acts[i].distance(&acts[j]));
                    }
                }
                d
            })
            .collect();
        // Diameter of the whole action space (union over states).
        let all: Vec<&DenseVector> = actions.iter().flatten().collect();
        let mut d_max = 0.0_f64;
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                d_max = d_max.max(all[i].distance(all[j]));
            }
        }
        Ok(Self {
            state_names,
            actions,
            reward,
            transition,
            gamma,
            mu,
            mu_min,
            l_smooth,
            action_dim,
            interp,
            state_diameters,
            d_max,
        })
    }

    pub fn num_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions[0].len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn actions(&self, s: usize) -> &[DenseVector] {
        &self.actions[s]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn state_diameter(&self, s: usize) -> f64 {
        self.state_diameters[s]
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn configured_l_smooth(&self) -> Option<f64> {
        self.l_smooth
    }

    /// Configured occupancy lower bound, defaulting to `(1-gamma) * min mu`.
    pub fn configured_mu_min(&self) -> Option<f64> {
        self.mu_min.or_else(|| {
            let min_mu = self.mu.iter().cloned().fold(f64::INFINITY, f64::min);
            (min_mu > 0.0).then_some((1.0 - self.gamma) * min_mu)
        })
    }

    pub fn from_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let spec: AcmdpSpec = serde_json::from_reader(std::fs::File::open(path)?)?;
        if spec.schema_version != 1 {
            return Err(Error::MdpFormat(format!(
                "unsupported schema version {}",
                spec.schema_version
            )));
        }
        let actions = spec
            .actions
            .into_iter()
            .map(|per_state| {
                per_state
                    .into_iter()
                    .map(DenseVector::new)
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Acmdp::new(
            spec.states,
            actions,
            spec.reward,
            spec.transition,
            spec.gamma,
            spec.mu,
            spec.mu_min,
            spec.l_smooth,
        )
    }

    pub fn to_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let spec = AcmdpSpec {
            schema_version: 1,
            gamma: self.gamma,
            states: self.state_names.clone(),
            mu: self.mu.clone(),
            mu_min: self.mu_min,
            l_smooth: self.l_smooth,
            actions: self
                .actions
                .iter()
                .map(|acts| acts.iter().map(|a| a.as_slice().to_vec()).collect())
                .collect(),
            reward: self.reward.clone(),
            transition: self.transition.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&spec)?)?;
        Ok(())
    }
}

/// Deterministic gridworld: `rows x cols` cells, eight compass actions on
/// the unit circle, absorbing goal at the last cell with reward 1, uniform
/// initial distribution.
pub fn gridworld(rows: usize, cols: usize, gamma: f64) -> Result<Acmdp> {
    if rows == 0 || cols == 0 {
        return Err(Error::MdpFormat("gridworld needs rows, cols >= 1".into()));
    }
    let s_count = rows * cols;
    let goal = s_count - 1;
    let dirs: Vec<(f64, f64)> = (0..8)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
            (angle.cos(), angle.sin())
        })
        .collect();
    let mut actions = Vec::with_capacity(s_count);
    let mut reward = Vec::with_capacity(s_count);
    let mut transition = Vec::with_capacity(s_count);
    let mut names = Vec::with_capacity(s_count);
    for r in 0..rows {
        for c in 0..cols {
            let s = r * cols + c;
            names.push(format!("cell_{r}_{c}"));
            let mut acts = Vec::with_capacity(8);
            let mut rew = Vec::with_capacity(8);
            let mut trans = Vec::with_capacity(8);
            for &(dx, dy) in &dirs {
                acts.push(DenseVector::new(vec![dx, dy]).unwrap());
                let target = if s == goal {
                    goal
                } else {
                    let nr = (r as i64 + dy.round() as i64).clamp(0, rows as i64 - 1) as usize;
                    let nc = (c as i64 + dx.round() as i64).clamp(0, cols as i64 - 1) as usize;
                    nr * cols + nc
                };
                let mut row = vec![0.0; s_count];
                row[target] = 1.0;
                trans.push(row);
                rew.push(if target == goal { 1.0 } else { 0.0 });
            }
            actions.push(acts);
            reward.push(rew);
            transition.push(trans);
        }
    }
    let mu = vec![1.0 / s_count as f64; s_count];
    Acmdp::new(names, actions, reward, transition, gamma, mu, None, None)
}

/// Per-state convex weights over the action vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    weights: Vec<Vec<f64>>,
}

impl DeterministicPolicy {
    pub fn new(mdp: &Acmdp, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != mdp.num_states() {
            return Err(Error::MdpFormat("policy must cover every state".into()));
        }
        for (s, w) in weights.iter().enumerate() {
            if w.len() != mdp.num_actions() {
                return Err(Error::MdpFormat(format!("state {s}: weight count")));
            }
            if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::MdpFormat(format!(
                    "state {s}: weights are not a convex combination"
                )));
            }
        }
        Ok(Self { weights })
    }

    /// Puts all mass on one vertex per state.
    pub fn vertex(mdp: &Acmdp, indices: &[usize]) -> Result<Self> {
        if indices.len() != mdp.num_states() {
            return Err(Error::MdpFormat("need one vertex per state".into()));
        }
        let weights = indices
            .iter()
            .map(|&i| {
                let mut w = vec![0.0; mdp.num_actions()];
                w[i] = 1.0;
                w
            })
            .collect();
        Ok(Self { weights })
    }

    pub fn random_vertex(mdp: &Acmdp, rng: &mut Rng) -> Self {
        let weights = (0..mdp.num_states())
            .map(|_| {
                let mut w = vec![0.0; mdp.num_actions()];
                w[rng.next_index(mdp.num_actions())] = 1.0;
                w
            })
            .collect();
        Self { weights }
    }

    pub fn weights(&self, s: usize) -> &[f64] {
        &self.weights[s]
    }

    /// The policy's action vector `pi(s) = sum_i w_i a_i`.
    pub fn action_vector(&self, mdp: &Acmdp, s: usize) -> DenseVector {
        let mut coords = vec![0.0; mdp.action_dim()];
        for (w, a) in self.weights[s].iter().zip(mdp.actions(s)) {
            for (acc, v) in coords.iter_mut().zip(a.as_slice()) {
                *acc += w * v;
            }
        }
        DenseVector::new(coords).expect("finite mixture")
    }

    /// Frank-Wolfe step toward vertex `i` with step size `alpha`.
    fn step_toward(&mut self, s: usize, i: usize, alpha: f64) {
        for w in self.weights[s].iter_mut() {
            *w *= 1.0 - alpha;
        }
        self.weights[s][i] += alpha;
    }
}

/// Exact policy evaluation output.
#[derive(Clone, Debug)]
pub struct QEval {
    /// `V_pi(s)`.
    pub v: Vec<f64>,
    /// `Q(s, a_i | pi)` at the action vertices.
    pub q_vertex: Vec<Vec<f64>>,
    /// `grad_a Q(s, a)|_{a = pi(s)}` by central finite differences on the
    /// interpolated model.
    pub grad_a: Vec<DenseVector>,
    pub sweeps: usize,
}

impl QEval {
    /// `J(mu, pi) = E_{s~mu}[Q(s, pi(s) | pi)] = sum_s mu(s) V(s)`.
    pub fn j_mu(&self, mdp: &Acmdp) -> f64 {
        self.v.iter().zip(mdp.mu()).map(|(v, m)| v * m).sum()
    }
}

/// Q for an arbitrary action vector under the interpolated model:
/// `Q(s, a | pi) = sum_i w_i(a) Q(s, a_i | pi)`.
pub fn q_at(mdp: &Acmdp, q_vertex: &[Vec<f64>], s: usize, a: &[f64]) -> f64 {
    mdp.interp[s]
        .weights(a)
        .iter()
        .zip(&q_vertex[s])
        .map(|(w, q)| w * q)
        .sum()
}

/// Value iteration for the policy-induced chain plus vertex Q table and
/// action gradients; residual `1e-10`, warm-startable.
pub fn q_exact_warm(
    mdp: &Acmdp,
    policy: &DeterministicPolicy,
    warm: Option<&[f64]>,
) -> Result<QEval> {
    let s_count = mdp.num_states();
    let n = mdp.num_actions();
    // Policy-induced reward and transition.
    let mut r_pi = vec![0.0; s_count];
    let mut p_pi = vec![vec![0.0; s_count]; s_count];
    for s in 0..s_count {
        for (i, &w) in policy.weights(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            r_pi[s] += w * mdp.reward[s][i];
            for (t, &p) in mdp.transition[s][i].iter().enumerate() {
                p_pi[s][t] += w * p;
            }
        }
    }

    let mut v = warm.map_or_else(|| vec![0.0; s_count], <[f64]>::to_vec);
    let mut sweeps = 0;
    loop {
        let mut residual = 0.0_f64;
        let mut next = vec![0.0; s_count];
        for s in 0..s_count {
            let mut acc = r_pi[s];
            for (t, &p) in p_pi[s].iter().enumerate() {
                if p != 0.0 {
                    acc += mdp.gamma * p * v[t];
                }
            }
            residual = residual.max((acc - v[s]).abs());
            next[s] = acc;
        }
        v = next;
        sweeps += 1;
        if residual <= VALUE_ITERATION_RESIDUAL {
            break;
        }
        if sweeps >= VALUE_ITERATION_MAX_SWEEPS {
            return Err(Error::ValueIterationDiverged { residual, sweeps });
        }
    }

    let mut q_vertex = vec![vec![0.0; n]; s_count];
    for s in 0..s_count {
        for i in 0..n {
            let mut acc = mdp.reward[s][i];
            for (t, &p) in mdp.transition[s][i].iter().enumerate() {
                if p != 0.0 {
                    acc += mdp.gamma * p * v[t];
                }
            }
            q_vertex[s][i] = acc;
        }
    }

    let mut grad_a = Vec::with_capacity(s_count);
    for s in 0..s_count {
        let pi_vec = policy.action_vector(mdp, s);
        let base = pi_vec.as_slice();
        let mut grad = vec![0.0; mdp.action_dim()];
        for (j, g) in grad.iter_mut().enumerate() {
            let h = 1e-5 * base[j].abs().max(1.0);
            let mut up = base.to_vec();
            let mut down = base.to_vec();
            up[j] += h;
            down[j] -= h;
            *g = (q_at(mdp, &q_vertex, s, &up) - q_at(mdp, &q_vertex, s, &down)) / (2.0 * h);
        }
        grad_a.push(DenseVector::new(grad).expect("finite gradient"));
    }

    Ok(QEval {
        v,
        q_vertex,
        grad_a,
        sweeps,
    })
}

pub fn q_exact(mdp: &Acmdp, policy: &DeterministicPolicy) -> Result<QEval> {
    q_exact_warm(mdp, policy, None)
}

/// Discounted state occupancy `d_mu^pi(s) = (1-gamma) sum_t gamma^t
/// Pr[s_t = s]`.
pub fn occupancy(mdp: &Acmdp, policy: &DeterministicPolicy) -> Vec<f64> {
    let s_count = mdp.num_states();
    let mut p_pi = vec![vec![0.0; s_count]; s_count];
    for s in 0..s_count {
        for (i, &w) in policy.weights(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (t, &p) in mdp.transition[s][i].iter().enumerate() {
                p_pi[s][t] += w * p;
            }
        }
    }
    let mut dist: Vec<f64> = mdp.mu.to_vec();
    let mut acc = vec![0.0; s_count];
    let mut weight = 1.0;
    while weight > 1e-14 {
        for (a, d) in acc.iter_mut().zip(&dist) {
            *a += weight * d;
        }
        let mut next = vec![0.0; s_count];
        for s in 0..s_count {
            if dist[s] == 0.0 {
                continue;
            }
            for (t, &p) in p_pi[s].iter().enumerate() {
                next[t] += dist[s] * p;
            }
        }
        dist = next;
        weight *= mdp.gamma;
    }
    acc.iter().map(|a| (1.0 - mdp.gamma) * a).collect()
}

/// Numerical smoothness constant of `Q(s, .)`: max Frobenius norm of the
/// finite-difference Hessian over states, times a safety factor of 2.
/// Affine interpolated models report ~0; pass an override for meaningful
/// step sizes in that case.
pub fn estimate_l_smooth(mdp: &Acmdp, policy: &DeterministicPolicy, qeval: &QEval) -> f64 {
    let d = mdp.action_dim();
    let h = 1e-3;
    let mut worst = 0.0_f64;
    for s in 0..mdp.num_states() {
        let base = policy.action_vector(mdp, s);
        let base = base.as_slice();
        let mut frob = 0.0;
        for j in 0..d {
            for k in 0..d {
                let mut pp = base.to_vec();
                let mut pm = base.to_vec();
                let mut mp = base.to_vec();
                let mut mm = base.to_vec();
                pp[j] += h;
                pp[k] += h;
                pm[j] += h;
                pm[k] -= h;
                mp[j] -= h;
                mp[k] += h;
                mm[j] -= h;
                mm[k] -= h;
                let second = (q_at(mdp, &qeval.q_vertex, s, &pp)
                    - q_at(mdp, &qeval.q_vertex, s, &pm)
                    - q_at(mdp, &qeval.q_vertex, s, &mp)
                    + q_at(mdp, &qeval.q_vertex, s, &mm))
                    / (4.0 * h * h);
                frob += second * second;
            }
        }
        worst = worst.max(frob.sqrt());
    }
    2.0 * worst
}

/// Direction-search backend for [`sfwpo`].
#[derive(Clone, Debug)]
pub enum SfwpoSearch {
    Exact,
    Lsh {
        hash: HashFamilyConfig,
        fallback: FallbackPolicy,
    },
}

#[derive(Clone, Debug)]
pub struct SfwpoConfig {
    pub iters: usize,
    /// Approximation factor for the LSH threshold ((0,1); ignored in exact
    /// mode).
    pub c: f64,
    pub tau: f64,
    pub search: SfwpoSearch,
    pub seed: u64,
    /// Record exact per-state gaps (one vertex scan per state per
    /// iteration) and use the measured occupancy minimum in the step size.
    pub audit: bool,
    pub l_smooth_override: Option<f64>,
    pub mu_min_override: Option<f64>,
    pub init: Option<DeterministicPolicy>,
}

impl SfwpoConfig {
    pub fn exact(iters: usize, seed: u64) -> Self {
        Self {
            iters,
            c: 0.9,
            tau: 0.3,
            search: SfwpoSearch::Exact,
            seed,
            audit: false,
            l_smooth_override: None,
            mu_min_override: None,
            init: None,
        }
    }
}

/// One SFWPO iteration across all states.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SfwpoIterRecord {
    pub k: usize,
    pub j_mu: f64,
    /// `g_hat_k(s) = <a_hat - pi(s), grad_a Q>` per state.
    pub gaps: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Step sizes that exceeded 1 before clamping.
    pub alpha_clamped: Vec<bool>,
    pub fallbacks: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exact_gaps: Option<Vec<f64>>,
    pub mu_min_used: f64,
    pub candidates_touched: usize,
}

impl SfwpoIterRecord {
    /// `sqrt(sum_s g_k(s)^2)`; exact gaps when audited, `g_hat` otherwise.
    pub fn average_gap(&self) -> f64 {
        let gaps = self.exact_gaps.as_deref().unwrap_or(&self.gaps);
        gaps.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct SfwpoRun {
    pub policy: DeterministicPolicy,
    pub trace: Vec<SfwpoIterRecord>,
    /// Smoothness constant used in the step sizes.
    pub l_smooth: f64,
    pub d_max: f64,
    pub mu_min: f64,
}

/// `average_gap` at iteration `k` of a trace.
pub fn average_gap(trace: &[SfwpoIterRecord], k: usize) -> Option<f64> {
    trace
        .iter()
        .find(|r| r.k == k)
        .map(SfwpoIterRecord::average_gap)
}

/// Frank-Wolfe policy optimization. Exact mode scans each state's vertex
/// set; LSH mode queries one per-state MaxIP index built over `psi(C(s))`
/// with the transform `grad := -grad_a Q` (ascent direction).
pub fn sfwpo(mdp: &Acmdp, cfg: &SfwpoConfig) -> Result<SfwpoRun> {
    if cfg.iters == 0 {
        return Err(Error::param("iters", "must be >= 1"));
    }
    let s_count = mdp.num_states();
    let mut rng = Rng::new(cfg.seed);
    let mut policy = match &cfg.init {
        Some(p) => DeterministicPolicy::new(mdp, p.weights.clone())?,
        None => DeterministicPolicy::random_vertex(mdp, &mut rng),
    };

    let mu_min_cfg = cfg
        .mu_min_override
        .or_else(|| mdp.configured_mu_min())
        .ok_or_else(|| {
            Error::param(
                "mu_min",
                "initial distribution has zero-mass states; configure mu_min",
            )
        })?;

    // Per-state MaxIP indices for the LSH path.
    let indices: Option<Vec<MaxIpIndex>> = match &cfg.search {
        SfwpoSearch::Exact => None,
        SfwpoSearch::Lsh { hash, fallback } => {
            let mut built = Vec::with_capacity(s_count);
            for s in 0..s_count {
                let ds = Dataset::new(mdp.actions(s).to_vec())?;
                let mut hash_s = *hash;
                hash_s.seed = hash.seed.wrapping_add(s as u64);
                let mut params = MaxIpParams::new(cfg.tau, cfg.c, hash_s);
                params.fallback = *fallback;
                built.push(MaxIpIndex::build(&ds, params)?);
            }
            Some(built)
        }
    };

    let mut trace = Vec::with_capacity(cfg.iters);
    let mut warm: Option<Vec<f64>> = None;
    let mut l_used = cfg.l_smooth_override.or(mdp.configured_l_smooth());

    for k in 0..cfg.iters {
        let qeval = q_exact_warm(mdp, &policy, warm.as_deref())?;
        let j_mu = qeval.j_mu(mdp);
        if l_used.is_none() {
            l_used = Some(estimate_l_smooth(mdp, &policy, &qeval));
        }
        let l = l_used.unwrap();

        let mu_min_used = if cfg.audit {
            occupancy(mdp, &policy)
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        } else {
            mu_min_cfg
        };

        let mut gaps = vec![0.0; s_count];
        let mut alphas = vec![0.0; s_count];
        let mut alpha_clamped = vec![false; s_count];
        let mut fallbacks = vec![false; s_count];
        let mut exact_gaps = cfg.audit.then(|| vec![0.0; s_count]);
        let mut candidates_touched = 0usize;
        let mut updates: Vec<(usize, usize, f64)> = Vec::new();

        for s in 0..s_count {
            let pi_vec = policy.action_vector(mdp, s);
            let grad = &qeval.grad_a[s];

            if let Some(ex) = exact_gaps.as_mut() {
                let mut best = f64::NEG_INFINITY;
                for a in mdp.actions(s) {
                    best = best.max(a.sub(&pi_vec).dot(grad));
                }
                ex[s] = best;
            }

            let chosen: Option<usize> = match &indices {
                None => {
                    // Exact scan: argmax_a <a - pi, grad>, ties to lowest.
                    let mut best_i = 0;
                    let mut best_v = f64::NEG_INFINITY;
                    for (i, a) in mdp.actions(s).iter().enumerate() {
                        let v = a.sub(&pi_vec).dot(grad);
                        if v > best_v {
                            best_v = v;
                            best_i = i;
                        }
                    }
                    candidates_touched += mdp.num_actions();
                    Some(best_i)
                }
                Some(idxs) => match idxs[s].query_direction(&pi_vec, &grad.scale(-1.0))? {
                    QueryOutcome::Found(hit) => {
                        candidates_touched += hit.candidates_touched;
                        fallbacks[s] = hit.fallback_used;
                        Some(hit.index)
                    }
                    QueryOutcome::Converged {
                        candidates_touched: c,
                    } => {
                        candidates_touched += c;
                        fallbacks[s] = true;
                        None
                    }
                },
            };

            if let Some(i) = chosen {
                let g_hat = mdp.actions(s)[i].sub(&pi_vec).dot(grad);
                gaps[s] = g_hat;
                if g_hat > 0.0 {
                    let d_s = mdp.state_diameter(s).max(1e-12);
                    let raw = (1.0 - mdp.gamma) * mu_min_used * g_hat / (l * d_s * d_s);
                    alpha_clamped[s] = raw > 1.0;
                    let alpha = raw.min(1.0);
                    alphas[s] = alpha;
                    updates.push((s, i, alpha));
                }
            }
        }

        for (s, i, alpha) in updates {
            policy.step_toward(s, i, alpha);
        }

        trace.push(SfwpoIterRecord {
            k,
            j_mu,
            gaps,
            alphas,
            alpha_clamped,
            fallbacks,
            exact_gaps,
            mu_min_used,
            candidates_touched,
        });
        warm = Some(qeval.v);
    }

    Ok(SfwpoRun {
        policy,
        trace,
        l_smooth: l_used.unwrap_or(0.0),
        d_max: mdp.d_max(),
        mu_min: mu_min_cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(c: &[f64]) -> DenseVector {
        DenseVector::new(c.to_vec()).unwrap()
    }

    /// Single state, single action, reward 1: Q = 1 / (1 - gamma).
    #[test]
    fn q_geometric_series() {
        let mdp = Acmdp::new(
            vec!["s".into()],
            vec![vec![dv(&[1.0])]],
            vec![vec![1.0]],
            vec![vec![vec![1.0]]],
            0.9,
            vec![1.0],
            None,
            None,
        )
        .unwrap();
        let policy = DeterministicPolicy::vertex(&mdp, &[0]).unwrap();
        let qe = q_exact(&mdp, &policy).unwrap();
        assert!((qe.q_vertex[0][0] - 10.0).abs() < 1e-8);
        assert!((qe.j_mu(&mdp) - 10.0).abs() < 1e-8);
    }

    /// Two-state chain: s0 -> s1 (absorbing, reward 1), gamma = 0.5.
    /// V(s1) = 2, Q(s0) = 0.5 * 2 = 1.
    #[test]
    fn q_two_state_chain_closed_form() {
        let mdp = Acmdp::new(
            vec!["s0".into(), "s1".into()],
            vec![vec![dv(&[1.0])], vec![dv(&[1.0])]],
            vec![vec![0.0], vec![1.0]],
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            0.5,
            vec![1.0, 0.0],
            Some(0.25),
            None,
        )
        .unwrap();
        let policy = DeterministicPolicy::vertex(&mdp, &[0, 0]).unwrap();
        let qe = q_exact(&mdp, &policy).unwrap();
        assert!((qe.v[1] - 2.0).abs() < 1e-9);
        assert!((qe.q_vertex[0][0] - 1.0).abs() < 1e-9);
    }

    fn random_mdp(s_count: usize, n_actions: usize, dim: usize, seed: u64) -> Acmdp {
        let mut rng = Rng::new(seed);
        let mut actions = Vec::new();
        let mut reward = Vec::new();
        let mut transition = Vec::new();
        let mut names = Vec::new();
        for s in 0..s_count {
            names.push(format!("s{s}"));
            actions.push((0..n_actions).map(|_| rng.unit_vector(dim)).collect());
            reward.push((0..n_actions).map(|_| rng.next_f64()).collect());
            let rows = (0..n_actions)
                .map(|_| {
                    let raw: Vec<f64> = (0..s_count).map(|_| rng.next_f64() + 1e-3).collect();
                    let total: f64 = raw.iter().sum();
                    let mut row: Vec<f64> = raw.iter().map(|v| v / total).collect();
                    // Force the row to sum to exactly 1.
                    let correction: f64 = 1.0 - row.iter().sum::<f64>();
                    row[0] += correction;
                    row
                })
                .collect();
            transition.push(rows);
        }
        let mu = vec![1.0 / s_count as f64; s_count];
        Acmdp::new(names, actions, reward, transition, 0.8, mu, None, None).unwrap()
    }

    /// Value iteration agrees with a direct linear solve of
    /// `(I - gamma P_pi) V = r_pi`.
    #[test]
    fn q_matches_direct_linear_solve() {
        let mdp = random_mdp(5, 6, 3, 17);
        let mut rng = Rng::new(3);
        let policy = DeterministicPolicy::random_vertex(&mdp, &mut rng);
        let qe = q_exact(&mdp, &policy).unwrap();

        // Independent oracle: Gaussian elimination on the dense system.
        let s_count = mdp.num_states();
        let mut a = vec![vec![0.0; s_count]; s_count];
        let mut b = vec![0.0; s_count];
        for s in 0..s_count {
            a[s][s] = 1.0;
            for (i, &w) in policy.weights(s).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                b[s] += w * mdp.reward[s][i];
                for (t, &p) in mdp.transition[s][i].iter().enumerate() {
                    a[s][t] -= mdp.gamma() * w * p;
                }
            }
        }
        let v_direct = solve_linear(a, b).unwrap();
        for s in 0..s_count {
            assert!(
                (qe.v[s] - v_direct[s]).abs() < 1e-8,
                "state {s}: {} vs {}",
                qe.v[s],
                v_direct[s]
            );
        }
    }

    /// The finite-difference gradient matches the analytic affine map
    /// `W^T q_vertex` recovered from the interpolator coefficients.
    #[test]
    fn grad_matches_analytic_affine_map() {
        let mdp = random_mdp(4, 5, 3, 23);
        let mut rng = Rng::new(5);
        let policy = DeterministicPolicy::random_vertex(&mdp, &mut rng);
        let qe = q_exact(&mdp, &policy).unwrap();
        for s in 0..mdp.num_states() {
            let mut analytic = vec![0.0; mdp.action_dim()];
            for (i, row) in mdp.interp[s].coeff.iter().enumerate() {
                for j in 0..mdp.action_dim() {
                    analytic[j] += row[j] * qe.q_vertex[s][i];
                }
            }
            for j in 0..mdp.action_dim() {
                assert!(
                    (qe.grad_a[s].as_slice()[j] - analytic[j]).abs() < 1e-6,
                    "state {s} coord {j}"
                );
            }
        }
    }

    #[test]
    fn bandit_gap_vanishes() {
        // Single state, linear reward over 6 actions in d=2; exact SFWPO
        // drives the gap to ~0 quickly.
        let mut rng = Rng::new(9);
        let dirs: Vec<DenseVector> = (0..6).map(|_| rng.unit_vector(2)).collect();
        let u = dv(&[0.6, 0.3]);
        let reward: Vec<f64> = dirs.iter().map(|a| 0.5 + 0.4 * a.dot(&u)).collect();
        let mdp = Acmdp::new(
            vec!["bandit".into()],
            vec![dirs],
            vec![reward],
            vec![vec![vec![1.0]; 6]],
            0.1,
            vec![1.0],
            None,
            None,
        )
        .unwrap();
        // Predicted budget 2 L D^2 / ((1-gamma)^3 mu_min^2 eps^2) is ~1e5;
        // the run gets there within 600.
        let mut cfg = SfwpoConfig::exact(600, 4);
        cfg.l_smooth_override = Some(0.05);
        let run = sfwpo(&mdp, &cfg).unwrap();
        let last = run.trace.last().unwrap();
        assert!(last.average_gap() < 1e-3, "gap {}", last.average_gap());
    }

    #[test]
    fn optimal_start_is_stationary() {
        // Bandit with the best vertex known: starting there, g <= 0 and J
        // never moves.
        let dirs = vec![dv(&[1.0, 0.0]), dv(&[0.0, 1.0]), dv(&[-1.0, 0.0])];
        let reward = vec![0.9, 0.5, 0.1];
        let mdp = Acmdp::new(
            vec!["bandit".into()],
            vec![dirs],
            vec![reward],
            vec![vec![vec![1.0]; 3]],
            0.5,
            vec![1.0],
            None,
            None,
        )
        .unwrap();
        let mut cfg = SfwpoConfig::exact(20, 1);
        cfg.init = Some(DeterministicPolicy::vertex(&mdp, &[0]).unwrap());
        cfg.l_smooth_override = Some(1.0);
        let run = sfwpo(&mdp, &cfg).unwrap();
        let j0 = run.trace[0].j_mu;
        for r in &run.trace {
            assert!(r.gaps.iter().all(|&g| g <= 1e-9));
            assert!((r.j_mu - j0).abs() < 1e-9);
        }
    }

    #[test]
    fn gridworld_j_monotone_exact() {
        let mdp = gridworld(4, 4, 0.9).unwrap();
        let mut cfg = SfwpoConfig::exact(150, 7);
        cfg.l_smooth_override = Some(1.0);
        let run = sfwpo(&mdp, &cfg).unwrap();
        for pair in run.trace.windows(2) {
            assert!(
                pair[1].j_mu >= pair[0].j_mu - 1e-9,
                "J decreased at k={}: {} -> {}",
                pair[0].k,
                pair[0].j_mu,
                pair[1].j_mu
            );
        }
        // The policy improves substantially from the random start.
        assert!(run.trace.last().unwrap().j_mu > run.trace[0].j_mu);
    }

    #[test]
    fn policy_stays_feasible() {
        let mdp = gridworld(3, 3, 0.8).unwrap();
        let mut cfg = SfwpoConfig::exact(60, 3);
        cfg.l_smooth_override = Some(0.5);
        let run = sfwpo(&mdp, &cfg).unwrap();
        for s in 0..mdp.num_states() {
            let w = run.policy.weights(s);
            assert!(w.iter().all(|&x| x >= -1e-12));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lsh_mode_gap_domination() {
        let mdp = gridworld(4, 4, 0.9).unwrap();
        let mut cfg = SfwpoConfig::exact(80, 11);
        cfg.search = SfwpoSearch::Lsh {
            hash: HashFamilyConfig::new(4, 8, 19),
            fallback: FallbackPolicy::LinearScan,
        };
        cfg.audit = true;
        cfg.l_smooth_override = Some(1.0);
        let run = sfwpo(&mdp, &cfg).unwrap();
        let mut total = 0usize;
        let mut dominated = 0usize;
        for r in &run.trace {
            let exact = r.exact_gaps.as_ref().unwrap();
            for (g_hat, g) in r.gaps.iter().zip(exact) {
                if *g > 1e-9 {
                    total += 1;
                    if *g_hat >= 0.9 * g - 1e-9 {
                        dominated += 1;
                    }
                }
            }
        }
        assert!(total > 0);
        assert!(
            dominated as f64 >= 0.95 * total as f64,
            "domination {dominated}/{total}"
        );
    }

    #[test]
    fn sum_squared_gaps_mostly_non_increasing() {
        // The proof treats sum_s g_k(s)^2 as non-increasing; verified
        // empirically, violations logged rather than failed.
        let mdp = gridworld(4, 4, 0.9).unwrap();
        let mut cfg = SfwpoConfig::exact(100, 13);
        cfg.l_smooth_override = Some(1.0);
        let run = sfwpo(&mdp, &cfg).unwrap();
        let sums: Vec<f64> = run
            .trace
            .iter()
            .map(|r| r.gaps.iter().map(|g| g * g).sum::<f64>())
            .collect();
        let mut violations = 0;
        for pair in sums.windows(2) {
            if pair[1] > pair[0] + 1e-9 {
                violations += 1;
            }
        }
        if violations > 0 {
            eprintln!(
                "sum g^2 increased {violations} times over {} steps",
                sums.len() - 1
            );
        }
    }

    #[test]
    fn average_gap_examples() {
        let rec = SfwpoIterRecord {
            k: 0,
            j_mu: 0.0,
            gaps: vec![0.0, 0.0],
            alphas: vec![0.0, 0.0],
            alpha_clamped: vec![false, false],
            fallbacks: vec![false, false],
            exact_gaps: None,
            mu_min_used: 0.1,
            candidates_touched: 0,
        };
        assert_eq!(rec.average_gap(), 0.0);
        let rec = SfwpoIterRecord {
            gaps: vec![3.0, 4.0],
            ..rec
        };
        assert_eq!(rec.average_gap(), 5.0);
        assert_eq!(average_gap(&[rec], 0), Some(5.0));
    }

    #[test]
    fn mdp_json_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mdp.json");
        let mdp = gridworld(3, 4, 0.7).unwrap();
        mdp.to_json(&path).unwrap();
        let back = Acmdp::from_json(&path).unwrap();
        assert_eq!(back.num_states(), 12);
        assert_eq!(back.num_actions(), 8);
        assert_eq!(back.gamma(), 0.7);
        assert_eq!(back.state_names(), mdp.state_names());

        // Broken transition row must be rejected.
        let mut value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        value["transition"][0][0][0] = serde_json::json!(0.5);
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, serde_json::to_string(&value).unwrap()).unwrap();
        assert!(Acmdp::from_json(&bad).is_err());
    }

    #[test]
    fn alpha_clamp_is_recorded() {
        let mdp = gridworld(2, 2, 0.5).unwrap();
        let mut cfg = SfwpoConfig::exact(5, 2);
        // Tiny L makes the raw step size huge.
        cfg.l_smooth_override = Some(1e-9);
        let run = sfwpo(&mdp, &cfg).unwrap();
        let clamped = run
            .trace
            .iter()
            .flat_map(|r| r.alpha_clamped.iter())
            .any(|&b| b);
        assert!(clamped);
        for r in &run.trace {
            assert!(r.alphas.iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
    }
}
