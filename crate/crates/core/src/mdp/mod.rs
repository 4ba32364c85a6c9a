//! Finite discounted MDPs: representation, JSON IO, exact planning, and
//! divergences between two models sharing a state/action space.
//!
//! Arrays are stored flat in row-major `[state][action][next_state]` order.
//! Every action is available in every state.

mod divergence;
mod generate;
mod planning;

pub(crate) mod divergence_internal {
    pub(crate) use super::divergence::pair_kl_unchecked;
}

pub use divergence::{bernoulli_kl, categorical_kl, is_alternative, is_alternative_under, kl_at_pair};
pub use generate::{nonconvex_example, random_mdp, NONCONVEX_GAMMA, NONCONVEX_OFFSET};
pub use planning::{
    next_state_stats, policy_value, solve, solve_warm, value_iteration, SolveResult, DEFAULT_TOL, MAX_SWEEPS, TIE_TOL,
};

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest accepted discount factor. Powers of `1/(1-gamma)` feed the
/// hardness terms and must stay finite.
pub const MAX_GAMMA: f64 = 0.999;

/// Row sums of transition kernels must be within this distance of 1.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Bernoulli,
    Deterministic,
}

/// Reward distribution of a state-action pair, supported on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardDist {
    pub kind: RewardKind,
    pub mean: f64,
}

impl RewardDist {
    pub fn bernoulli(mean: f64) -> Self {
        RewardDist { kind: RewardKind::Bernoulli, mean }
    }

    pub fn deterministic(mean: f64) -> Self {
        RewardDist { kind: RewardKind::Deterministic, mean }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            RewardKind::Bernoulli => {
                if rng.random::<f64>() < self.mean {
                    1.0
                } else {
                    0.0
                }
            }
            RewardKind::Deterministic => self.mean,
        }
    }
}

/// Deterministic stationary policy: one action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn constant(num_states: usize, action: usize) -> Self {
        Policy(vec![action; num_states])
    }

    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub(crate) fn check(&self, mdp: &Mdp) -> Result<()> {
        if self.0.len() != mdp.num_states() {
            return Err(Error::ShapeMismatch(format!(
                "policy has {} entries for {} states",
                self.0.len(),
                mdp.num_states()
            )));
        }
        if let Some((s, &a)) = self.0.iter().enumerate().find(|(_, &a)| a >= mdp.num_actions()) {
            return Err(Error::InvalidInput(format!(
                "policy action {a} at state {s} out of range (A = {})",
                mdp.num_actions()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "]")
    }
}

/// A finite discounted MDP `(p, q, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    transitions: Vec<f64>,
    rewards: Vec<RewardDist>,
}

impl Mdp {
    /// Builds and validates an MDP from nested `[s][a][s']` / `[s][a]` arrays.
    pub fn new(gamma: f64, transitions: Vec<Vec<Vec<f64>>>, rewards: Vec<Vec<RewardDist>>) -> Result<Self> {
        let num_states = transitions.len();
        let num_actions = transitions.first().map_or(0, Vec::len);
        check_nested_shape(num_states, num_actions, &transitions, &rewards)?;
        let transitions = transitions.into_iter().flatten().flatten().collect();
        let rewards = rewards.into_iter().flatten().collect();
        Self::from_flat(num_states, num_actions, gamma, transitions, rewards)
    }

    /// Builds and validates an MDP from flat row-major arrays.
    pub fn from_flat(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        transitions: Vec<f64>,
        rewards: Vec<RewardDist>,
    ) -> Result<Self> {
        let mdp = Mdp { num_states, num_actions, gamma, transitions, rewards };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks every invariant and reports the first violation with indices.
    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.num_states, self.num_actions);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidMdp(format!("S = {ns} and A = {na} must both be positive")));
        }
        if !(self.gamma > 0.0 && self.gamma <= MAX_GAMMA) {
            return Err(Error::InvalidMdp(format!("gamma = {} outside (0, {MAX_GAMMA}]", self.gamma)));
        }
        if self.transitions.len() != ns * na * ns {
            return Err(Error::InvalidMdp(format!(
                "transitions hold {} entries, expected {}",
                self.transitions.len(),
                ns * na * ns
            )));
        }
        if self.rewards.len() != ns * na {
            return Err(Error::InvalidMdp(format!(
                "rewards hold {} entries, expected {}",
                self.rewards.len(),
                ns * na
            )));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.transition(s, a);
                if let Some((t, p)) = row.iter().enumerate().find(|(_, p)| !(**p >= 0.0 && p.is_finite())) {
                    return Err(Error::InvalidMdp(format!(
                        "transitions[{s}][{a}][{t}] = {p} is not a nonnegative probability"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidMdp(format!("transitions[{s}][{a}] sums to {sum}, expected 1")));
                }
                let mean = self.reward(s, a).mean;
                if !(0.0..=1.0).contains(&mean) {
                    return Err(Error::InvalidMdp(format!("rewards[{s}][{a}].mean = {mean} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    /// Next-state distribution `p(.|s,a)`.
    #[inline]
    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let start = self.pair_index(s, a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> RewardDist {
        self.rewards[self.pair_index(s, a)]
    }

    #[inline]
    pub fn reward_mean(&self, s: usize, a: usize) -> f64 {
        self.rewards[self.pair_index(s, a)].mean
    }

    pub fn same_shape(&self, other: &Mdp) -> bool {
        self.num_states == other.num_states && self.num_actions == other.num_actions
    }

    pub(crate) fn check_same_shape(&self, other: &Mdp) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.num_states, self.num_actions, other.num_states, other.num_actions
            )))
        }
    }

    /// Copy of `self` with the model of pair `(s, a)` replaced.
    pub fn with_pair(&self, s: usize, a: usize, row: &[f64], reward: RewardDist) -> Result<Mdp> {
        if s >= self.num_states || a >= self.num_actions || row.len() != self.num_states {
            return Err(Error::ShapeMismatch(format!("pair ({s}, {a}) with row of length {}", row.len())));
        }
        let mut out = self.clone();
        out.set_pair(s, a, row, reward);
        out.validate()?;
        Ok(out)
    }

    /// Overwrites pair `(s, a)` without validation. Callers guarantee the
    /// row is a distribution and the mean lies in `[0, 1]`.
    pub(crate) fn set_pair(&mut self, s: usize, a: usize, row: &[f64], reward: RewardDist) {
        let idx = self.pair_index(s, a);
        let start = idx * self.num_states;
        self.transitions[start..start + self.num_states].copy_from_slice(row);
        self.rewards[idx] = reward;
    }

    /// Convex combination `(1 - lambda) * self + lambda * other`, taken
    /// entrywise over transition probabilities and reward means.
    pub fn mix(&self, other: &Mdp, lambda: f64) -> Result<Mdp> {
        self.check_same_shape(other)?;
        if (self.gamma - other.gamma).abs() > 0.0 {
            return Err(Error::InvalidInput("cannot mix MDPs with different discount factors".into()));
        }
        let transitions =
            self.transitions.iter().zip(&other.transitions).map(|(x, y)| (1.0 - lambda) * x + lambda * y).collect();
        let rewards = self
            .rewards
            .iter()
            .zip(&other.rewards)
            .map(|(x, y)| RewardDist { kind: x.kind, mean: (1.0 - lambda) * x.mean + lambda * y.mean })
            .collect();
        Mdp::from_flat(self.num_states, self.num_actions, self.gamma, transitions, rewards)
    }

    pub fn from_json_str(text: &str) -> Result<Mdp> {
        Ok(serde_json::from_str(text)?)
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn to_json_string(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("MDP serialization is infallible");
        out.push('\n');
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Mdp> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Mdp::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string())
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
    }
}

fn check_nested_shape(ns: usize, na: usize, transitions: &[Vec<Vec<f64>>], rewards: &[Vec<RewardDist>]) -> Result<()> {
    for (s, row) in transitions.iter().enumerate() {
        if row.len() != na {
            return Err(Error::InvalidMdp(format!("transitions[{s}] has {} actions, expected {na}", row.len())));
        }
        for (a, dist) in row.iter().enumerate() {
            if dist.len() != ns {
                return Err(Error::InvalidMdp(format!(
                    "transitions[{s}][{a}] has {} entries, expected {ns}",
                    dist.len()
                )));
            }
        }
    }
    if rewards.len() != ns {
        return Err(Error::InvalidMdp(format!("rewards has {} states, expected {ns}", rewards.len())));
    }
    for (s, row) in rewards.iter().enumerate() {
        if row.len() != na {
            return Err(Error::InvalidMdp(format!("rewards[{s}] has {} actions, expected {na}", row.len())));
        }
    }
    Ok(())
}

/// On-disk JSON layout.
#[derive(Serialize, Deserialize)]
struct MdpFile {
    #[serde(rename = "S")]
    num_states: usize,
    #[serde(rename = "A")]
    num_actions: usize,
    gamma: f64,
    transitions: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<RewardDist>>,
}

impl TryFrom<MdpFile> for Mdp {
    type Error = Error;

    fn try_from(file: MdpFile) -> Result<Mdp> {
        if file.transitions.len() != file.num_states {
            return Err(Error::InvalidMdp(format!(
                "transitions has {} states, header says S = {}",
                file.transitions.len(),
                file.num_states
            )));
        }
        check_nested_shape(file.num_states, file.num_actions, &file.transitions, &file.rewards)?;
        Mdp::from_flat(
            file.num_states,
            file.num_actions,
            file.gamma,
            file.transitions.into_iter().flatten().flatten().collect(),
            file.rewards.into_iter().flatten().collect(),
        )
    }
}

impl From<Mdp> for MdpFile {
    fn from(mdp: Mdp) -> MdpFile {
        let (ns, na) = (mdp.num_states, mdp.num_actions);
        let transitions = (0..ns).map(|s| (0..na).map(|a| mdp.transition(s, a).to_vec()).collect()).collect();
        let rewards = (0..ns).map(|s| (0..na).map(|a| mdp.reward(s, a)).collect()).collect();
        MdpFile { num_states: ns, num_actions: na, gamma: mdp.gamma, transitions, rewards }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> Mdp {
        Mdp::new(
            0.5,
            vec![vec![vec![0.3, 0.7], vec![1.0, 0.0]], vec![vec![0.5, 0.5], vec![0.0, 1.0]]],
            vec![
                vec![RewardDist::bernoulli(0.2), RewardDist::bernoulli(0.9)],
                vec![RewardDist::deterministic(0.4), RewardDist::bernoulli(0.0)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let mdp = two_by_two();
        let text = mdp.to_json_string();
        let back = Mdp::from_json_str(&text).unwrap();
        assert_eq!(back, mdp);
        assert_eq!(back.to_json_string(), text);
        assert!(text.contains("\"kind\": \"deterministic\""));
        assert!(text.contains("\"S\": 2"));
    }

    #[test]
    fn loader_reports_first_violation_with_indices() {
        let bad = r#"{"S":2,"A":1,"gamma":0.5,
            "transitions":[[[0.5,0.5]],[[0.5,0.6]]],
            "rewards":[[{"kind":"bernoulli","mean":0.5}],[{"kind":"bernoulli","mean":1.5}]]}"#;
        let err = Mdp::from_json_str(bad).unwrap_err().to_string();
        assert!(err.contains("transitions[1][0] sums to"), "{err}");

        let bad_mean = r#"{"S":1,"A":1,"gamma":0.5,"transitions":[[[1.0]]],
            "rewards":[[{"kind":"bernoulli","mean":1.5}]]}"#;
        let err = Mdp::from_json_str(bad_mean).unwrap_err().to_string();
        assert!(err.contains("rewards[0][0].mean"), "{err}");

        let bad_kind = r#"{"S":1,"A":1,"gamma":0.5,"transitions":[[[1.0]]],
            "rewards":[[{"kind":"gaussian","mean":0.5}]]}"#;
        assert!(Mdp::from_json_str(bad_kind).is_err());
    }

    #[test]
    fn gamma_cap_enforced() {
        let rows = vec![vec![vec![1.0]]];
        let rewards = vec![vec![RewardDist::bernoulli(0.5)]];
        assert!(Mdp::new(0.999, rows.clone(), rewards.clone()).is_ok());
        assert!(Mdp::new(0.9995, rows.clone(), rewards.clone()).is_err());
        assert!(Mdp::new(0.0, rows.clone(), rewards.clone()).is_err());
        assert!(Mdp::new(1.0, rows, rewards).is_err());
    }

    #[test]
    fn negative_probability_rejected() {
        let err = Mdp::new(
            0.5,
            vec![vec![vec![1.5, -0.5]], vec![vec![0.0, 1.0]]],
            vec![vec![RewardDist::bernoulli(0.5)], vec![RewardDist::bernoulli(0.5)]],
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("transitions[0][0][1]"), "{err}");
    }

    #[test]
    fn mix_is_entrywise() {
        let a = two_by_two();
        let b = a.with_pair(0, 0, &[0.9, 0.1], RewardDist::bernoulli(0.6)).unwrap();
        let m = a.mix(&b, 0.5).unwrap();
        assert!((m.transition(0, 0)[0] - 0.6).abs() < 1e-15);
        assert!((m.reward_mean(0, 0) - 0.4).abs() < 1e-15);
        assert_eq!(m.transition(1, 1), a.transition(1, 1));
    }

    #[test]
    fn bernoulli_sampling_matches_mean() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let dist = RewardDist::bernoulli(0.3);
        let n = 100_000;
        let mut total = 0.0;
        for _ in 0..n {
            let r = dist.sample(&mut rng);
            assert!(r == 0.0 || r == 1.0);
            total += r;
        }
        assert!((total / n as f64 - 0.3).abs() < 0.01);
        assert_eq!(RewardDist::deterministic(0.25).sample(&mut rng), 0.25);
    }
}
