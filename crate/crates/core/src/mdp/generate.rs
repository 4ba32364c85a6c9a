use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use super::planning::{solve, DEFAULT_TOL};
use super::{Mdp, RewardDist};
use crate::error::{Error, Result};

const MAX_DRAWS: usize = 1000;

/// Random uniquely-optimal MDP: every transition row drawn from a symmetric
/// Dirichlet(1), Bernoulli reward means uniform on `[0, 1]`. Redraws (from
/// the same seeded stream) until the optimal policy is unique.
pub fn random_mdp(num_states: usize, num_actions: usize, gamma: f64, seed: u64) -> Result<Mdp> {
    if num_states < 2 || num_actions < 2 {
        return Err(Error::InvalidInput(format!(
            "random MDPs need S >= 2 and A >= 2, got S = {num_states}, A = {num_actions}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DRAWS {
        let mut transitions = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            let row: Vec<f64> = (0..num_states).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = row.iter().sum();
            transitions.extend(row.iter().map(|x| x / total));
        }
        let rewards = (0..num_states * num_actions).map(|_| RewardDist::bernoulli(rng.random::<f64>())).collect();
        let mdp = Mdp::from_flat(num_states, num_actions, gamma, transitions, rewards)?;
        if solve(&mdp, DEFAULT_TOL)?.unique_optimum {
            return Ok(mdp);
        }
    }
    Err(Error::RetryCapExceeded(MAX_DRAWS))
}

/// Discount of the two-state non-convexity family.
pub const NONCONVEX_GAMMA: f64 = 0.9;

/// Reward shift applied to every pair that keeps the sink state's optimal
/// action unique without changing any comparison at `s1`.
pub const NONCONVEX_OFFSET: f64 = 0.05;

/// Two-state family parametrised by `(r2, r1, p1)` with `gamma = 0.9`.
///
/// State 0 (`s1`): action 0 (`a1`) earns `r1` and stays with probability
/// `p1`, otherwise moves to the sink; action 1 (`a2`) earns `r2` and stays
/// with probability 1. State 1 (`s2`) is absorbing with zero base reward.
/// All rewards of the optimal actions carry the offset [`NONCONVEX_OFFSET`],
/// so `a1` is optimal at `s1` iff `r1 / (1 - gamma p1) > r2 / (1 - gamma)`.
pub fn nonconvex_example(r2: f64, r1: f64, p1: f64) -> Result<Mdp> {
    let c = NONCONVEX_OFFSET;
    Mdp::new(
        NONCONVEX_GAMMA,
        vec![vec![vec![p1, 1.0 - p1], vec![1.0, 0.0]], vec![vec![0.0, 1.0], vec![0.0, 1.0]]],
        vec![
            vec![RewardDist::bernoulli(r1 + c), RewardDist::bernoulli(r2 + c)],
            vec![RewardDist::bernoulli(c), RewardDist::bernoulli(0.0)],
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = random_mdp(3, 4, 0.7, 42).unwrap();
        let b = random_mdp(3, 4, 0.7, 42).unwrap();
        assert_eq!(a.to_json_string(), b.to_json_string());
        assert_ne!(a, random_mdp(3, 4, 0.7, 43).unwrap());
    }

    #[test]
    fn generated_mdps_are_valid_and_unique() {
        for seed in 0..50 {
            let mdp = random_mdp(2 + (seed as usize % 4), 2 + (seed as usize % 3), 0.6, seed).unwrap();
            mdp.validate().unwrap();
            assert!(solve(&mdp, DEFAULT_TOL).unwrap().unique_optimum);
        }
    }

    #[test]
    fn small_shapes_rejected() {
        assert!(random_mdp(1, 2, 0.5, 0).is_err());
        assert!(random_mdp(2, 1, 0.5, 0).is_err());
        assert!(random_mdp(2, 2, 1.0, 0).is_err());
    }
}
