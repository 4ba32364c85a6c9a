//! The track-and-stop loop: generative sampling, empirical model, per-round
//! re-solve, allocation, C-tracking and the KL-ball stopping test.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{summarize, HardnessSummary};
use crate::error::{Error, Result};
use crate::mdp::{solve, solve_warm, Mdp, Policy, RewardDist, SolveResult, DEFAULT_TOL};
use crate::stopping::{delta_prime, lhs_allows_stop, stopping_lhs, StopInputs};
use crate::tracking::{epsilon_t, project_clipped_simplex_into, TrackerState};

/// Default sample budget of a single run.
pub const DEFAULT_MAX_SAMPLES: u64 = 100_000_000;

/// Seeded generative model: returns `(s', R)` for any queried pair.
#[derive(Debug, Clone)]
pub struct GenerativeSampler {
    mdp: Mdp,
    cdf: Vec<f64>,
    rng: ChaCha8Rng,
}

impl GenerativeSampler {
    pub fn new(mdp: Mdp, seed: u64) -> Self {
        let ns = mdp.num_states();
        let mut cdf = Vec::with_capacity(mdp.num_pairs() * ns);
        for s in 0..ns {
            for a in 0..mdp.num_actions() {
                let mut acc = 0.0;
                for &p in mdp.transition(s, a) {
                    acc += p;
                    cdf.push(acc);
                }
            }
        }
        GenerativeSampler { mdp, cdf, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn sample(&mut self, s: usize, a: usize) -> (usize, f64) {
        let ns = self.mdp.num_states();
        let start = self.mdp.pair_index(s, a) * ns;
        let row = &self.cdf[start..start + ns];
        let u: f64 = self.rng.random();
        // Skip zero-probability states so a point mass is never missed.
        let p = self.mdp.transition(s, a);
        let mut next = ns - 1;
        for (t, &c) in row.iter().enumerate() {
            if u < c && p[t] > 0.0 {
                next = t;
                break;
            }
        }
        if p[next] == 0.0 {
            next = (0..ns).rev().find(|&t| p[t] > 0.0).unwrap_or(next);
        }
        let reward = self.mdp.reward(s, a).sample(&mut self.rng);
        (next, reward)
    }
}

/// Visit counts, transition counts and reward sums, with the derived
/// empirical MDP `phi_hat` (Bernoulli rewards with the empirical means).
#[derive(Debug, Clone)]
pub struct EmpiricalModel {
    num_states: usize,
    num_actions: usize,
    visits: Vec<u64>,
    transition_counts: Vec<u64>,
    reward_sums: Vec<f64>,
    scratch: Vec<f64>,
}

impl EmpiricalModel {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        let pairs = num_states * num_actions;
        EmpiricalModel {
            num_states,
            num_actions,
            visits: vec![0; pairs],
            transition_counts: vec![0; pairs * num_states],
            reward_sums: vec![0.0; pairs],
            scratch: vec![0.0; num_states],
        }
    }

    pub fn record(&mut self, s: usize, a: usize, next: usize, reward: f64) {
        let i = s * self.num_actions + a;
        self.visits[i] += 1;
        self.transition_counts[i * self.num_states + next] += 1;
        self.reward_sums[i] += reward;
    }

    pub fn visits(&self) -> &[u64] {
        &self.visits
    }

    pub fn transition_counts(&self, s: usize, a: usize) -> &[u64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition_counts[start..start + self.num_states]
    }

    pub fn reward_mean(&self, s: usize, a: usize) -> f64 {
        let i = s * self.num_actions + a;
        (self.reward_sums[i] / self.visits[i] as f64).clamp(0.0, 1.0)
    }

    fn row(&self, s: usize, a: usize) -> Vec<f64> {
        let n = self.visits[s * self.num_actions + a] as f64;
        self.transition_counts(s, a).iter().map(|&c| c as f64 / n).collect()
    }

    /// Empirical MDP. Every pair must have been visited.
    pub fn to_mdp(&self, gamma: f64) -> Result<Mdp> {
        if let Some(i) = self.visits.iter().position(|&n| n == 0) {
            return Err(Error::InvalidInput(format!(
                "pair ({}, {}) has no samples",
                i / self.num_actions,
                i % self.num_actions
            )));
        }
        let mut transitions = Vec::with_capacity(self.transition_counts.len());
        let mut rewards = Vec::with_capacity(self.visits.len());
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                transitions.extend(self.row(s, a));
                rewards.push(RewardDist::bernoulli(self.reward_mean(s, a)));
            }
        }
        Mdp::from_flat(self.num_states, self.num_actions, gamma, transitions, rewards)
    }

    /// Refreshes pair `(s, a)` of a previously built empirical MDP.
    pub(crate) fn refresh_pair(&mut self, phi_hat: &mut Mdp, s: usize, a: usize) {
        let i = s * self.num_actions + a;
        let n = self.visits[i] as f64;
        let start = i * self.num_states;
        for (dst, &c) in self.scratch.iter_mut().zip(&self.transition_counts[start..start + self.num_states]) {
            *dst = c as f64 / n;
        }
        let reward = RewardDist::bernoulli(self.reward_mean(s, a));
        phi_hat.set_pair(s, a, &self.scratch, reward);
    }
}

/// Which target allocation the tracker follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingRule {
    /// Closed-form allocation of the current empirical model.
    KlbTs,
    /// Uniform allocation `1/SA`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub max_samples: u64,
    /// Re-solve every `stride` rounds; `None` picks 1 for `SA <= 8`, else 32.
    pub stride: Option<u64>,
    /// When false the loop runs until the budget is spent.
    pub stopping: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_samples: DEFAULT_MAX_SAMPLES, stride: None, stopping: true }
    }
}

impl Limits {
    pub fn resolved_stride(&self, num_pairs: usize) -> u64 {
        self.stride.unwrap_or(if num_pairs <= 8 { 1 } else { 32 }).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: u64,
    /// Most recent stopping statistic.
    pub lhs: f64,
    /// `max_{s,a} |n_t(s,a)/t - w_sa|` against the ground-truth target.
    pub freq_error: f64,
}

/// Outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rule: SamplingRule,
    pub seed: u64,
    pub delta: f64,
    /// Total generative calls, including the initial sweep.
    pub tau: u64,
    pub returned_policy: Policy,
    pub correct: bool,
    pub budget_exhausted: bool,
    pub snapshots: Vec<Snapshot>,
    pub final_counts: Vec<u64>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        let mut a = self.clone();
        a.wall_time_secs = other.wall_time_secs;
        a == *other
    }
}

/// Runs the track-and-stop algorithm on the generative model of `mdp`.
pub fn run_klbts(mdp: &Mdp, delta: f64, seed: u64, limits: &Limits) -> Result<RunRecord> {
    run_with_rule(mdp, delta, seed, limits, SamplingRule::KlbTs)
}

/// Ground truth for a run: optimal policy and (for the tracked rule) the
/// target allocation.
fn ground_truth(mdp: &Mdp) -> Result<(SolveResult, HardnessSummary)> {
    let sr = solve(mdp, DEFAULT_TOL)?;
    if !sr.unique_optimum {
        let state = (0..mdp.num_states())
            .find(|&s| sr.suboptimal_pairs().any(|(x, a)| x == s && sr.gap(s, a) <= crate::mdp::TIE_TOL))
            .unwrap_or(0);
        return Err(Error::NonUniqueOptimum { state });
    }
    let h = summarize(&sr, mdp.gamma())?;
    Ok((sr, h))
}

/// The shared loop: initial sweep, then per round re-solve (every
/// `stride` rounds), stopping test, projection of the target allocation on
/// the clipped simplex, C-tracking, one generative call.
pub fn run_with_rule(mdp: &Mdp, delta: f64, seed: u64, limits: &Limits, rule: SamplingRule) -> Result<RunRecord> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta = {delta} outside (0, 1)")));
    }
    let started = Instant::now();
    let (truth, truth_h) = ground_truth(mdp)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let pairs = ns * na;
    let gamma = mdp.gamma();
    let uniform = vec![1.0 / pairs as f64; pairs];
    let snapshot_target = match rule {
        SamplingRule::KlbTs => truth_h.omega_bar.clone(),
        SamplingRule::Uniform => uniform.clone(),
    };

    let mut sampler = GenerativeSampler::new(mdp.clone(), seed);
    let mut emp = EmpiricalModel::new(ns, na);
    for s in 0..ns {
        for a in 0..na {
            let (next, r) = sampler.sample(s, a);
            emp.record(s, a, next, r);
        }
    }
    let mut phi_hat = emp.to_mdp(gamma)?;
    let mut tracker = TrackerState::after_initial_sweep(pairs);
    let dp = delta_prime(delta, ns, na);
    let stride = limits.resolved_stride(pairs);

    let mut sr = solve(&phi_hat, DEFAULT_TOL)?;
    let mut h = summarize(&sr, gamma)?;
    let mut fresh = true;
    let mut lhs = f64::INFINITY;
    let mut snapshots = Vec::new();
    let mut next_snapshot = pairs as u64;
    let mut buf = vec![0.0; pairs];
    let mut stopped = false;
    let mut budget_exhausted = false;

    loop {
        let t = tracker.t;
        if (t - pairs as u64).is_multiple_of(stride) {
            if !fresh {
                sr = solve_warm(&phi_hat, DEFAULT_TOL, Some(&sr.policy))?;
                h = summarize(&sr, gamma)?;
                fresh = true;
            }
            if limits.stopping {
                lhs = stopping_lhs(&StopInputs { hardness: &h, counts: &tracker.counts, delta_prime: dp });
                stopped = lhs_allows_stop(lhs);
            }
        }
        if t == next_snapshot {
            snapshots.push(Snapshot { t, lhs, freq_error: tracker.max_frequency_error(&snapshot_target) });
            next_snapshot *= 2;
        }
        if stopped {
            break;
        }
        if t >= limits.max_samples {
            budget_exhausted = true;
            break;
        }
        let target = match rule {
            SamplingRule::KlbTs => &h.omega_bar,
            SamplingRule::Uniform => &uniform,
        };
        project_clipped_simplex_into(target, epsilon_t(ns, na, t), &mut buf)?;
        let i = tracker.next_pair(&buf);
        let (s, a) = (i / na, i % na);
        let (next, r) = sampler.sample(s, a);
        emp.record(s, a, next, r);
        emp.refresh_pair(&mut phi_hat, s, a);
        fresh = false;
    }
    if !fresh {
        sr = solve_warm(&phi_hat, DEFAULT_TOL, Some(&sr.policy))?;
    }
    if snapshots.last().is_none_or(|last| last.t < tracker.t) {
        snapshots.push(Snapshot { t: tracker.t, lhs, freq_error: tracker.max_frequency_error(&snapshot_target) });
    }

    Ok(RunRecord {
        rule,
        seed,
        delta,
        tau: tracker.t,
        correct: sr.policy == truth.policy,
        returned_policy: sr.policy,
        budget_exhausted,
        snapshots,
        final_counts: tracker.counts,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Per-run seed derived from the sweep seed and the run coordinates.
pub fn derive_seed(seed_base: u64, delta_index: usize, run_index: usize) -> u64 {
    let mut z = seed_base
        ^ (delta_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (run_index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub deltas: Vec<f64>,
    pub runs_per_delta: usize,
    pub seed_base: u64,
    pub limits: Limits,
    pub rule: SamplingRule,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
}

/// Statistics of the runs at one confidence level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub delta: f64,
    pub runs: usize,
    pub mean_tau: f64,
    /// Sample standard deviation (zero for a single run).
    pub std_tau: f64,
    /// Runs that stopped with a wrong policy.
    pub errors: usize,
    pub budget_exhausted: usize,
    /// `4 U(phi) ln(1/delta)` of the ground-truth model.
    pub bound_4u_log: f64,
}

pub fn aggregate(delta: f64, u_bound: f64, runs: &[RunRecord]) -> SweepAggregate {
    let n = runs.len();
    let mean = if n == 0 { f64::NAN } else { runs.iter().map(|r| r.tau as f64).sum::<f64>() / n as f64 };
    let std = if n < 2 {
        0.0
    } else {
        (runs.iter().map(|r| (r.tau as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    SweepAggregate {
        delta,
        runs: n,
        mean_tau: mean,
        std_tau: std,
        errors: runs.iter().filter(|r| !r.budget_exhausted && !r.correct).count(),
        budget_exhausted: runs.iter().filter(|r| r.budget_exhausted).count(),
        bound_4u_log: 4.0 * u_bound * (1.0 / delta).ln(),
    }
}

/// Independent runs at every confidence level. Run records come back in
/// `(delta, run)` order regardless of scheduling.
pub fn run_sweep(mdp: &Mdp, cfg: &SweepConfig) -> Result<(Vec<SweepAggregate>, Vec<RunRecord>)> {
    if let Some(d) = cfg.deltas.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
        return Err(Error::InvalidInput(format!("delta = {d} outside (0, 1)")));
    }
    let (_, truth_h) = ground_truth(mdp)?;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.deltas.len()).flat_map(|i| (0..cfg.runs_per_delta).map(move |r| (i, r))).collect();
    let work = || {
        jobs.par_iter()
            .map(|&(i, r)| run_with_rule(mdp, cfg.deltas[i], derive_seed(cfg.seed_base, i, r), &cfg.limits, cfg.rule))
            .collect::<Result<Vec<_>>>()
    };
    let records = if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(work)?
    } else {
        work()?
    };
    let aggregates = if cfg.runs_per_delta == 0 {
        Vec::new()
    } else {
        cfg.deltas
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let chunk = &records[i * cfg.runs_per_delta..(i + 1) * cfg.runs_per_delta];
                aggregate(d, truth_h.u_bound, chunk)
            })
            .collect()
    };
    Ok((aggregates, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;

    #[test]
    fn sampler_respects_point_masses_and_seed() {
        let mdp = crate::mdp::nonconvex_example(0.175, 0.6925, 0.65).unwrap();
        let mut a = GenerativeSampler::new(mdp.clone(), 9);
        let mut b = GenerativeSampler::new(mdp, 9);
        for _ in 0..1000 {
            assert_eq!(a.sample(0, 1).0, 0);
            assert_eq!(a.sample(1, 0).0, 1);
            let x = a.sample(0, 0);
            b.sample(0, 1);
            b.sample(1, 0);
            assert_eq!(x, b.sample(0, 0));
        }
    }

    #[test]
    fn empirical_model_invariants() {
        let mdp = random_mdp(3, 2, 0.7, 4).unwrap();
        let mut sampler = GenerativeSampler::new(mdp.clone(), 1);
        let mut emp = EmpiricalModel::new(3, 2);
        assert!(emp.to_mdp(0.7).is_err());
        for k in 0..6000 {
            let (s, a) = ((k / 2) % 3, k % 2);
            let (next, r) = sampler.sample(s, a);
            emp.record(s, a, next, r);
        }
        let hat = emp.to_mdp(0.7).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                let n: u64 = emp.transition_counts(s, a).iter().sum();
                assert_eq!(n, emp.visits()[s * 2 + a]);
                let l1: f64 = hat.transition(s, a).iter().zip(mdp.transition(s, a)).map(|(x, y)| (x - y).abs()).sum();
                assert!(l1 < 0.1);
                assert!((hat.reward_mean(s, a) - mdp.reward_mean(s, a)).abs() < 0.05);
            }
        }
    }

    #[test]
    fn same_seed_same_record() {
        let mdp = random_mdp(2, 2, 0.5, 3).unwrap();
        let limits = Limits { max_samples: 200_000, ..Limits::default() };
        let a = run_klbts(&mdp, 0.1, 17, &limits).unwrap();
        let b = run_klbts(&mdp, 0.1, 17, &limits).unwrap();
        assert!(a.same_outcome(&b));
        assert_eq!(a.final_counts.iter().sum::<u64>(), a.tau);
        assert!(a.snapshots.windows(2).all(|w| w[0].t < w[1].t));
        assert_eq!(a.snapshots[0].t, 4);
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let mdp = random_mdp(2, 2, 0.5, 3).unwrap();
        let limits = Limits { max_samples: 50, stride: None, stopping: true };
        let rec = run_klbts(&mdp, 1e-12, 5, &limits).unwrap();
        assert!(rec.budget_exhausted);
        assert_eq!(rec.tau, 50);
    }

    #[test]
    fn rejects_bad_delta_and_tied_truth() {
        let mdp = random_mdp(2, 2, 0.5, 3).unwrap();
        assert!(run_klbts(&mdp, 0.0, 1, &Limits::default()).is_err());
        assert!(run_klbts(&mdp, 1.0, 1, &Limits::default()).is_err());
        let tied = Mdp::new(
            0.5,
            vec![vec![vec![1.0], vec![1.0]]],
            vec![vec![RewardDist::bernoulli(0.4), RewardDist::bernoulli(0.4)]],
        )
        .unwrap();
        assert!(matches!(run_klbts(&tied, 0.1, 1, &Limits::default()), Err(Error::NonUniqueOptimum { .. })));
    }

    #[test]
    fn aggregate_statistics() {
        let rec = |tau: u64, correct: bool, budget: bool| RunRecord {
            rule: SamplingRule::KlbTs,
            seed: 0,
            delta: 0.1,
            tau,
            returned_policy: Policy(vec![0]),
            correct,
            budget_exhausted: budget,
            snapshots: vec![],
            final_counts: vec![],
            wall_time_secs: 0.0,
        };
        let agg = aggregate(0.1, 10.0, &[rec(10, true, false), rec(20, false, false), rec(30, false, true)]);
        assert_eq!(agg.mean_tau, 20.0);
        assert_eq!(agg.std_tau, 10.0);
        assert_eq!(agg.errors, 1);
        assert_eq!(agg.budget_exhausted, 1);
        assert!((agg.bound_4u_log - 40.0 * 10f64.ln()).abs() < 1e-12);
        let same = aggregate(0.1, 1.0, &[rec(7, true, false), rec(7, true, false)]);
        assert_eq!(same.std_tau, 0.0);
    }

    #[test]
    fn empty_sweeps() {
        let mdp = random_mdp(2, 2, 0.5, 3).unwrap();
        let cfg = SweepConfig {
            deltas: vec![0.1, 0.01],
            runs_per_delta: 0,
            seed_base: 1,
            limits: Limits::default(),
            rule: SamplingRule::KlbTs,
            jobs: 1,
        };
        let (agg, runs) = run_sweep(&mdp, &cfg).unwrap();
        assert!(agg.is_empty() && runs.is_empty());
        let cfg = SweepConfig { deltas: vec![], runs_per_delta: 3, ..cfg };
        assert!(run_sweep(&mdp, &cfg).unwrap().0.is_empty());
    }

    #[test]
    fn derived_seeds_differ() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..10 {
            for r in 0..10 {
                assert!(seen.insert(derive_seed(7, i, r)));
            }
        }
    }
}
