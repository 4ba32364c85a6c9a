//! Desk-scale instruments for the lower-bound program
//! `inf_{psi in Alt(phi)} sum_sa w_sa KL_{phi|psi}(s,a)`: a one-sided
//! alternative search, the information cost of recorded runs, and a tester
//! for the variance/KL bound on `|(p_psi - p_phi)^T V*|`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::allocation::summarize;
use crate::engine::derive_seed;
use crate::error::{Error, Result};
use crate::mdp::divergence_internal::pair_kl_unchecked;
use crate::mdp::{is_alternative_under, solve, Mdp, Policy, RewardDist, SolveResult, DEFAULT_TOL};

/// Strict margin used for every feasibility test of the search.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// Logit assigned to next states outside the support of `phi`.
const ABSENT_LOGIT: f64 = -40.0;
const MEAN_CLAMP: f64 = 1e-6;
const BOUNDARY_BISECTIONS: usize = 30;
const LINE_SEARCH_EVALS: usize = 10;
const MAX_RAY_SCALE: f64 = 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltSearchConfig {
    /// Suboptimal pair `(s, a)` whose optimality condition the search tries
    /// to break.
    pub target: (usize, usize),
    pub restarts: usize,
    /// Coordinate-descent sweeps per restart; the step halves every sweep.
    pub refine_sweeps: usize,
    /// Standard deviation of random directions in logit coordinates.
    pub perturbation_scale: f64,
    pub seed: u64,
}

impl AltSearchConfig {
    pub fn new(s: usize, a: usize) -> Self {
        AltSearchConfig { target: (s, a), restarts: 200, refine_sweeps: 4, perturbation_scale: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltSearchResult {
    pub target: (usize, usize),
    pub best_psi: Mdp,
    /// `sum w KL_{phi|best_psi}`: an upper bound on the infimum.
    pub best_cost: f64,
    pub feasible_restarts: usize,
}

/// `sum_sa w_sa KL_{phi|psi}(s,a)`.
pub fn alternative_cost(phi: &Mdp, psi: &Mdp, omega: &[f64]) -> Result<f64> {
    phi.check_same_shape(psi)?;
    if omega.len() != phi.num_pairs() {
        return Err(Error::ShapeMismatch(format!("{} weights for {} pairs", omega.len(), phi.num_pairs())));
    }
    Ok(weighted_kl(phi, psi, omega, (0..phi.num_pairs()).map(|i| (i / phi.num_actions(), i % phi.num_actions()))))
}

fn weighted_kl(phi: &Mdp, psi: &Mdp, omega: &[f64], pairs: impl Iterator<Item = (usize, usize)>) -> f64 {
    pairs
        .map(|(s, a)| {
            let w = omega[phi.pair_index(s, a)];
            if w == 0.0 {
                0.0
            } else {
                w * pair_kl_unchecked(phi, psi, s, a)
            }
        })
        .sum()
}

/// Information accumulated against `psi` by the visit counts:
/// `sum_sa counts_sa KL_{phi|psi}(s,a)`.
pub fn wald_cost(phi: &Mdp, psi: &Mdp, counts: &[f64]) -> Result<f64> {
    if counts.iter().any(|&c| !(c >= 0.0)) {
        return Err(Error::InvalidInput("counts must be nonnegative".into()));
    }
    alternative_cost(phi, psi, counts)
}

/// Search space: the target pair and every optimal pair of `phi`. Each
/// pair contributes `S` transition logit offsets and one reward logit
/// offset.
struct Space<'a> {
    phi: &'a Mdp,
    pi_star: &'a Policy,
    pairs: Vec<(usize, usize)>,
    base_logits: Vec<f64>,
    base_reward_logits: Vec<f64>,
    omega: &'a [f64],
    scratch: Mdp,
    row: Vec<f64>,
}

impl<'a> Space<'a> {
    fn new(phi: &'a Mdp, pi_star: &'a Policy, target: (usize, usize), omega: &'a [f64]) -> Self {
        let mut pairs = vec![target];
        pairs.extend((0..phi.num_states()).map(|s| (s, pi_star.action(s))));
        let ns = phi.num_states();
        let mut base_logits = Vec::with_capacity(pairs.len() * ns);
        let mut base_reward_logits = Vec::with_capacity(pairs.len());
        for &(s, a) in &pairs {
            base_logits.extend(phi.transition(s, a).iter().map(|&p| if p > 0.0 { p.ln() } else { ABSENT_LOGIT }));
            let m = phi.reward_mean(s, a).clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP);
            base_reward_logits.push((m / (1.0 - m)).ln());
        }
        Space { phi, pi_star, pairs, base_logits, base_reward_logits, omega, scratch: phi.clone(), row: vec![0.0; ns] }
    }

    fn dim(&self) -> usize {
        self.pairs.len() * (self.phi.num_states() + 1)
    }

    /// Writes the model at offset `x` into `scratch`. A zero reward offset
    /// keeps the exact mean of `phi`.
    fn decode(&mut self, x: &[f64]) {
        let ns = self.phi.num_states();
        let stride = ns + 1;
        for (k, &(s, a)) in self.pairs.iter().enumerate() {
            let off = &x[k * stride..(k + 1) * stride];
            let logits = &self.base_logits[k * ns..(k + 1) * ns];
            let peak = logits.iter().zip(off).map(|(l, d)| l + d).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for ((r, l), d) in self.row.iter_mut().zip(logits).zip(off) {
                *r = (l + d - peak).exp();
                total += *r;
            }
            self.row.iter_mut().for_each(|r| *r /= total);
            let mean = if off[ns] == 0.0 {
                self.phi.reward_mean(s, a)
            } else {
                let z = self.base_reward_logits[k] + off[ns];
                (1.0 / (1.0 + (-z).exp())).clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP)
            };
            let kind = self.phi.reward(s, a).kind;
            self.scratch.set_pair(s, a, &self.row, RewardDist { kind, mean });
        }
    }

    fn feasible(&mut self, x: &[f64]) -> bool {
        self.decode(x);
        is_alternative_under(self.pi_star, &self.scratch, FEASIBILITY_TOL).unwrap_or(false)
    }

    fn cost(&mut self, x: &[f64]) -> f64 {
        self.decode(x);
        weighted_kl(self.phi, &self.scratch, self.omega, self.pairs.iter().copied())
    }

    /// Smallest feasible point on the ray `lambda * x`, `lambda` in
    /// `(0, MAX_RAY_SCALE]`, located by bisection.
    fn boundary(&mut self, x: &[f64]) -> Option<Vec<f64>> {
        let scaled = |l: f64| x.iter().map(|v| v * l).collect::<Vec<_>>();
        let mut hi = 1.0;
        while !self.feasible(&scaled(hi)) {
            hi *= 2.0;
            if hi > MAX_RAY_SCALE {
                return None;
            }
        }
        let mut lo = 0.0;
        for _ in 0..BOUNDARY_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if self.feasible(&scaled(mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(scaled(hi))
    }

    /// Cost of the boundary point on the ray through `x` (`+inf` if none).
    fn boundary_cost(&mut self, x: &[f64]) -> (f64, Option<Vec<f64>>) {
        match self.boundary(x) {
            Some(b) => (self.cost(&b), Some(b)),
            None => (f64::INFINITY, None),
        }
    }
}

/// Random-restart search for a cheap alternative model that breaks the
/// optimality of `cfg.target`. Only the target pair and the optimal pairs
/// of `phi` are perturbed. Each restart shoots a random direction to the
/// feasibility boundary, then runs golden-section line searches coordinate
/// by coordinate, re-projecting every trial point onto the boundary along
/// its ray from `phi`.
///
/// The returned cost is attained by a model that passes the strict
/// alternative test, so it upper-bounds the true infimum.
pub fn search_alternative(phi: &Mdp, omega: &[f64], cfg: &AltSearchConfig) -> Result<AltSearchResult> {
    let sr = solve(phi, DEFAULT_TOL)?;
    search_with_solution(phi, &sr, omega, cfg)
}

fn search_with_solution(phi: &Mdp, sr: &SolveResult, omega: &[f64], cfg: &AltSearchConfig) -> Result<AltSearchResult> {
    if !sr.unique_optimum {
        return Err(Error::NonUniqueOptimum { state: 0 });
    }
    let (s, a) = cfg.target;
    if s >= phi.num_states() || a >= phi.num_actions() || sr.policy.action(s) == a {
        return Err(Error::InvalidInput(format!("target ({s}, {a}) is not a suboptimal pair")));
    }
    if omega.len() != phi.num_pairs() || omega.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidInput("allocation must be strictly positive on every pair".into()));
    }
    let mut space = Space::new(phi, &sr.policy, cfg.target, omega);
    let dim = space.dim();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut feasible_restarts = 0;
    for r in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0, r));
        let dir: Vec<f64> = (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                cfg.perturbation_scale * z
            })
            .collect();
        let (mut cost, Some(mut x)) = space.boundary_cost(&dir) else {
            continue;
        };
        feasible_restarts += 1;
        let mut step = 0.5 * cfg.perturbation_scale;
        for _ in 0..cfg.refine_sweeps {
            for j in 0..dim {
                if let Some((c, p)) = golden_section(&mut space, &x, j, step) {
                    if c < cost {
                        cost = c;
                        x = p;
                    }
                }
            }
            step *= 0.5;
        }
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, x));
        }
    }
    let Some((best_cost, x)) = best else {
        return Err(Error::NoWitness { s, a });
    };
    space.decode(&x);
    Ok(AltSearchResult { target: cfg.target, best_psi: space.scratch.clone(), best_cost, feasible_restarts })
}

/// Golden-section search of the boundary cost along coordinate `j` over
/// `[x_j - step, x_j + step]`.
fn golden_section(space: &mut Space<'_>, x: &[f64], j: usize, step: f64) -> Option<(f64, Vec<f64>)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut eval = |u: f64| {
        let mut y = x.to_vec();
        y[j] = u;
        space.boundary_cost(&y)
    };
    let (mut lo, mut hi) = (x[j] - step, x[j] + step);
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = eval(c);
    let mut fd = eval(d);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut keep = |f: &(f64, Option<Vec<f64>>)| {
        if let (cost, Some(p)) = f {
            if best.as_ref().is_none_or(|(b, _)| cost < b) {
                best = Some((*cost, p.clone()));
            }
        }
    };
    keep(&fc);
    keep(&fd);
    for _ in 0..LINE_SEARCH_EVALS {
        if fc.0 <= fd.0 {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = eval(c);
            keep(&fc);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = eval(d);
            keep(&fd);
        }
    }
    best
}

/// Slack `min_{s,a} (RHS - LHS)` of
/// `|dp^T V*|^2 <= 8 KL Var + 4 sqrt(2) KL^{3/2} MD^2` where
/// `dp = p_psi(s,a) - p_phi(s,a)`, `KL = KL(p_phi(s,a) || p_psi(s,a))`, and
/// `V*`, `Var`, `MD` belong to `phi`. Pairs with zero or infinite KL are
/// skipped, so identical models give `+inf`.
pub fn check_hellinger(phi: &Mdp, psi: &Mdp) -> Result<f64> {
    phi.check_same_shape(psi)?;
    let sr = solve(phi, DEFAULT_TOL)?;
    Ok(hellinger_slack_with(phi, psi, &sr))
}

pub(crate) fn hellinger_slack_with(phi: &Mdp, psi: &Mdp, sr: &SolveResult) -> f64 {
    let mut slack = f64::INFINITY;
    for s in 0..phi.num_states() {
        for a in 0..phi.num_actions() {
            let (p, q) = (phi.transition(s, a), psi.transition(s, a));
            let kl = crate::mdp::categorical_kl(p, q);
            if !kl.is_finite() || kl == 0.0 {
                continue;
            }
            let dp_v: f64 = p.iter().zip(q).zip(&sr.v_star).map(|((x, y), v)| (y - x) * v).sum();
            let i = sr.idx(s, a);
            let rhs = 8.0 * kl * sr.var_next[i]
                + 4.0 * std::f64::consts::SQRT_2 * kl.powf(1.5) * sr.md_next[i] * sr.md_next[i];
            slack = slack.min(rhs - dp_v * dp_v);
        }
    }
    slack
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWitness {
    pub s: usize,
    pub a: usize,
    /// Best cost found, `None` when no restart reached the boundary.
    pub best_cost: Option<f64>,
    pub feasible_restarts: usize,
    pub hellinger_slack: Option<f64>,
}

/// Summary of the alternative search at `w = omega_bar(phi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub u_bound: f64,
    pub inverse_u: f64,
    pub v_program: f64,
    pub inverse_v_program: f64,
    pub omega_bar: Vec<f64>,
    pub pairs: Vec<PairWitness>,
    /// Minimum over pairs: an upper bound on `T(phi, omega_bar)^{-1}`.
    pub min_cost: Option<f64>,
    /// `min_cost >= 1/U - 1e-9`.
    pub consistent_with_bound: bool,
    pub min_hellinger_slack: Option<f64>,
}

pub fn oracle_report(phi: &Mdp, restarts: usize, seed: u64) -> Result<OracleReport> {
    let sr = solve(phi, DEFAULT_TOL)?;
    let h = summarize(&sr, phi.gamma())?;
    let mut pairs = Vec::new();
    for (s, a) in sr.suboptimal_pairs() {
        let cfg = AltSearchConfig { restarts, seed, ..AltSearchConfig::new(s, a) };
        match search_with_solution(phi, &sr, &h.omega_bar, &cfg) {
            Ok(res) => pairs.push(PairWitness {
                s,
                a,
                best_cost: Some(res.best_cost),
                feasible_restarts: res.feasible_restarts,
                hellinger_slack: Some(hellinger_slack_with(phi, &res.best_psi, &sr)),
            }),
            Err(Error::NoWitness { .. }) => {
                pairs.push(PairWitness { s, a, best_cost: None, feasible_restarts: 0, hellinger_slack: None })
            }
            Err(e) => return Err(e),
        }
    }
    let min_cost = pairs.iter().filter_map(|p| p.best_cost).reduce(f64::min);
    let min_hellinger_slack = pairs.iter().filter_map(|p| p.hellinger_slack).reduce(f64::min);
    Ok(OracleReport {
        u_bound: h.u_bound,
        inverse_u: 1.0 / h.u_bound,
        v_program: h.v_program,
        inverse_v_program: 1.0 / h.v_program,
        consistent_with_bound: min_cost.is_none_or(|c| c >= 1.0 / h.u_bound - 1e-9),
        omega_bar: h.omega_bar,
        pairs,
        min_cost,
        min_hellinger_slack,
    })
}
