//! Exact planning: policy evaluation, value iteration, policy iteration,
//! and the gap / next-state statistics derived from `V*`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Mdp, Policy};
use crate::error::{Error, Result};

/// Default Bellman-residual tolerance for evaluation.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Two Q-values closer than this are considered tied.
pub const TIE_TOL: f64 = 1e-9;

/// Iteration cap for sweeps of a Bellman operator.
pub const MAX_SWEEPS: usize = 1_000_000;

const MAX_POLICY_ITERATIONS: usize = 10_000;

/// Exact solution of an MDP and the statistics of `V*` that drive the
/// hardness terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub num_states: usize,
    pub num_actions: usize,
    pub policy: Policy,
    pub v_star: Vec<f64>,
    /// `Q*(s,a)`, flat `[s][a]`.
    pub q_star: Vec<f64>,
    /// `Delta_sa = max_b Q*(s,b) - Q*(s,a)`; exactly zero at `pi*(s)`.
    pub gaps: Vec<f64>,
    /// Minimum gap over suboptimal pairs (`+inf` when `A = 1`).
    pub delta_min: f64,
    pub var_next: Vec<f64>,
    pub md_next: Vec<f64>,
    pub var_max_star: f64,
    pub md_max_star: f64,
    pub unique_optimum: bool,
}

impl SolveResult {
    #[inline]
    pub fn idx(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    pub fn gap(&self, s: usize, a: usize) -> f64 {
        self.gaps[self.idx(s, a)]
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q_star[self.idx(s, a)]
    }

    pub fn is_optimal_pair(&self, s: usize, a: usize) -> bool {
        self.policy.action(s) == a
    }

    /// Suboptimal pairs `(s, a != pi*(s))` in lexicographic order.
    pub fn suboptimal_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_states)
            .flat_map(move |s| (0..self.num_actions).map(move |a| (s, a)))
            .filter(move |&(s, a)| !self.is_optimal_pair(s, a))
    }
}

#[inline]
fn q_value(mdp: &Mdp, v: &[f64], s: usize, a: usize) -> f64 {
    let ev: f64 = mdp.transition(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
    mdp.reward_mean(s, a) + mdp.gamma() * ev
}

fn policy_residual(mdp: &Mdp, pi: &Policy, v: &[f64]) -> f64 {
    (0..mdp.num_states()).map(|s| (v[s] - q_value(mdp, v, s, pi.action(s))).abs()).fold(0.0, f64::max)
}

/// `V^pi` with `||V - B^pi V||_inf <= tol`.
///
/// Solves `(I - gamma P_pi) V = r_pi` directly, then sweeps the policy
/// Bellman operator if round-off leaves the residual above `tol`.
pub fn policy_value(mdp: &Mdp, pi: &Policy, tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance {tol} must be positive")));
    }
    pi.check(mdp)?;
    let ns = mdp.num_states();
    let gamma = mdp.gamma();
    let mut m = DMatrix::<f64>::identity(ns, ns);
    let mut r = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        let a = pi.action(s);
        for (t, p) in mdp.transition(s, a).iter().enumerate() {
            m[(s, t)] -= gamma * p;
        }
        r[s] = mdp.reward_mean(s, a);
    }
    let mut v: Vec<f64> = match m.lu().solve(&r) {
        Some(x) if x.iter().all(|v| v.is_finite()) => x.iter().copied().collect(),
        _ => vec![0.0; ns],
    };
    let mut sweeps = 0;
    while policy_residual(mdp, pi, &v) > tol {
        if sweeps >= MAX_SWEEPS {
            return Err(Error::NonConvergence { what: "policy evaluation", iterations: sweeps });
        }
        v = (0..ns).map(|s| q_value(mdp, &v, s, pi.action(s))).collect();
        sweeps += 1;
    }
    Ok(v)
}

/// Lowest-index action whose Q-value is within `TIE_TOL` of the maximum,
/// and whether that maximum is unique.
fn greedy_action(q_row: &[f64]) -> (usize, bool) {
    let best = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut chosen = None;
    let mut ties = 0;
    for (a, &q) in q_row.iter().enumerate() {
        if q >= best - TIE_TOL {
            ties += 1;
            chosen.get_or_insert(a);
        }
    }
    (chosen.unwrap_or(0), ties == 1)
}

/// Optimal values by value iteration, stopped once the Bellman optimality
/// residual is at most `tol`. Returns `V*` and a greedy policy.
pub fn value_iteration(mdp: &Mdp, tol: f64) -> Result<(Vec<f64>, Policy)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance {tol} must be positive")));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut v = vec![0.0; ns];
    for sweep in 0..=MAX_SWEEPS {
        let next: Vec<f64> =
            (0..ns).map(|s| (0..na).map(|a| q_value(mdp, &v, s, a)).fold(f64::NEG_INFINITY, f64::max)).collect();
        let change = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = next;
        // ||V_{k+1} - B V_{k+1}|| <= gamma * change
        if change * mdp.gamma() <= tol {
            let policy = Policy(
                (0..ns)
                    .map(|s| {
                        let q: Vec<f64> = (0..na).map(|a| q_value(mdp, &v, s, a)).collect();
                        greedy_action(&q).0
                    })
                    .collect(),
            );
            return Ok((v, policy));
        }
        if sweep == MAX_SWEEPS {
            break;
        }
    }
    Err(Error::NonConvergence { what: "value iteration", iterations: MAX_SWEEPS })
}

/// Solves the MDP by policy iteration (see [`solve_warm`]).
pub fn solve(mdp: &Mdp, tol: f64) -> Result<SolveResult> {
    solve_warm(mdp, tol, None)
}

/// Policy iteration started from `init` (or the reward-greedy policy).
///
/// Improvement switches an action only on a strict Q increase, so the loop
/// terminates; the reported policy then takes the lowest-index action within
/// [`TIE_TOL`] of the best Q-value in every state.
pub fn solve_warm(mdp: &Mdp, tol: f64, init: Option<&Policy>) -> Result<SolveResult> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut pi = match init {
        Some(p) => {
            p.check(mdp)?;
            p.clone()
        }
        None => Policy(
            (0..ns)
                .map(|s| {
                    let r: Vec<f64> = (0..na).map(|a| mdp.reward_mean(s, a)).collect();
                    greedy_action(&r).0
                })
                .collect(),
        ),
    };
    let mut q = vec![0.0; ns * na];
    let mut v;
    let mut iterations = 0;
    loop {
        v = policy_value(mdp, &pi, tol)?;
        let mut changed = false;
        for s in 0..ns {
            let current = pi.action(s);
            for a in 0..na {
                q[s * na + a] = q_value(mdp, &v, s, a);
            }
            let row = &q[s * na..(s + 1) * na];
            let q_cur = row[current];
            let mut best = current;
            for (a, &qa) in row.iter().enumerate() {
                if qa > row[best] {
                    best = a;
                }
            }
            let scale = 1.0 + q_cur.abs();
            if row[best] > q_cur + 1e-13 * scale {
                pi.0[s] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        iterations += 1;
        if iterations >= MAX_POLICY_ITERATIONS {
            return Err(Error::NonConvergence { what: "policy iteration", iterations });
        }
    }

    let mut unique_optimum = true;
    let mut gaps = vec![0.0; ns * na];
    for s in 0..ns {
        let row = &q[s * na..(s + 1) * na];
        let (a_star, unique) = greedy_action(row);
        unique_optimum &= unique;
        pi.0[s] = a_star;
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for a in 0..na {
            gaps[s * na + a] = if a == a_star { 0.0 } else { (best - row[a]).max(0.0) };
        }
    }
    let delta_min =
        (0..ns * na).filter(|&i| pi.action(i / na) != i % na).map(|i| gaps[i]).fold(f64::INFINITY, f64::min);
    let (var_next, md_next) = next_state_stats(mdp, &v);
    let var_max_star = (0..ns).map(|s| var_next[s * na + pi.action(s)]).fold(0.0, f64::max);
    let md_max_star = (0..ns).map(|s| md_next[s * na + pi.action(s)]).fold(0.0, f64::max);

    Ok(SolveResult {
        num_states: ns,
        num_actions: na,
        policy: pi,
        v_star: v,
        q_star: q,
        gaps,
        delta_min,
        var_next,
        md_next,
        var_max_star,
        md_max_star,
        unique_optimum,
    })
}

/// Variance and maximum deviation of `v(s')` under `s' ~ p(.|s,a)` for
/// every pair, flat `[s][a]`. The maximum deviation ranges over all states,
/// not only the support of `p(.|s,a)`.
pub fn next_state_stats(mdp: &Mdp, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let (v_lo, v_hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let mut var = Vec::with_capacity(ns * na);
    let mut md = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let p = mdp.transition(s, a);
            let mean: f64 = p.iter().zip(v).map(|(p, x)| p * x).sum();
            let variance: f64 = p.iter().zip(v).map(|(p, x)| p * (x - mean) * (x - mean)).sum();
            var.push(variance);
            md.push((v_hi - mean).max(mean - v_lo));
        }
    }
    (var, md)
}
