//! KL-ball stopping rule.

use crate::allocation::HardnessSummary;
use crate::error::{Error, Result};

/// Concentration threshold `x(delta, n, m) = ln(1/delta) + (m-1)(1 + ln(1 + n/(m-1)))`.
pub fn threshold_x(delta: f64, n: u64, m: usize) -> f64 {
    debug_assert!(m >= 2);
    let k = (m - 1) as f64;
    (1.0 / delta).ln() + k * (1.0 + (1.0 + n as f64 / k).ln())
}

/// Per-event confidence `delta / (4 S^3 A)`.
pub fn delta_prime(delta: f64, num_states: usize, num_actions: usize) -> f64 {
    delta / (4.0 * (num_states as f64).powi(3) * num_actions as f64)
}

/// Operands of the stopping statistic at round `t`.
#[derive(Debug, Clone, Copy)]
pub struct StopInputs<'a> {
    /// Hardness terms of the empirical model; its policy is the empirical
    /// optimal policy.
    pub hardness: &'a HardnessSummary,
    /// Visit counts, flat `[s][a]`, all at least one.
    pub counts: &'a [u64],
    pub delta_prime: f64,
}

impl<'a> StopInputs<'a> {
    pub fn new(hardness: &'a HardnessSummary, counts: &'a [u64], delta_prime: f64) -> Result<Self> {
        let n = hardness.num_states * hardness.num_actions;
        if counts.len() != n {
            return Err(Error::ShapeMismatch(format!("{} counts for {n} pairs", counts.len())));
        }
        if counts.contains(&0) {
            return Err(Error::InvalidInput("every pair must be sampled at least once".into()));
        }
        if !(delta_prime > 0.0 && delta_prime < 1.0) {
            return Err(Error::InvalidInput(format!("delta' = {delta_prime} outside (0, 1)")));
        }
        Ok(StopInputs { hardness, counts, delta_prime })
    }
}

/// Left-hand side of the KL-ball condition:
///
/// `max_{s,a != pi(s)} (sqrt(T1 x(d',n,2)) + sqrt(T2 x(d',n,S))) / sqrt(n)
///  + max_s (sqrt(T3 x(d',n*,2)) + sqrt(T4 x(d',n*,S))) / sqrt(n*)`
///
/// with `n = n_t(s,a)` and `n* = n_t(s, pi(s))`. Degenerate summaries give
/// `+inf`.
pub fn stopping_lhs(inp: &StopInputs<'_>) -> f64 {
    let h = inp.hardness;
    if h.degenerate {
        return f64::INFINITY;
    }
    let ns = h.num_states;
    let dp = inp.delta_prime;
    let radius = |ta: f64, tb: f64, n: u64| {
        ((ta * threshold_x(dp, n, 2)).sqrt() + (tb * threshold_x(dp, n, ns.max(2))).sqrt()) / (n as f64).sqrt()
    };
    let mut sub = 0.0f64;
    let mut opt = 0.0f64;
    for s in 0..ns {
        let a_star = h.policy.action(s);
        for a in 0..h.num_actions {
            let i = h.idx(s, a);
            if a == a_star {
                opt = opt.max(radius(h.t3, h.t4, inp.counts[i]));
            } else {
                sub = sub.max(radius(h.t1[i], h.t2[i], inp.counts[i]));
            }
        }
    }
    sub + opt
}

/// Stop iff the statistic is at most one.
pub fn should_stop(inp: &StopInputs<'_>) -> bool {
    lhs_allows_stop(stopping_lhs(inp))
}

#[inline]
pub fn lhs_allows_stop(lhs: f64) -> bool {
    lhs <= 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Policy;

    fn summary() -> HardnessSummary {
        // S = 2, A = 2, pi = (0, 1): suboptimal pairs (0,1) and (1,0).
        HardnessSummary {
            num_states: 2,
            num_actions: 2,
            gamma: 0.5,
            policy: Policy(vec![0, 1]),
            t1: vec![0.0, 8.0, 50.0, 0.0],
            t2: vec![0.0, 3.0, 12.0, 0.0],
            t3: 40.0,
            t4: 90.0,
            h_sub: vec![0.0, 11.0, 62.0, 0.0],
            h_star: 260.0,
            omega_bar: vec![0.25; 4],
            v_program: 0.0,
            u_bound: 0.0,
            degenerate: false,
        }
    }

    #[test]
    fn threshold_values() {
        assert!((threshold_x(0.01, 0, 2) - (100f64.ln() + 1.0)).abs() < 1e-14);
        assert!((threshold_x(0.01, 0, 2) - 5.605_170_185_988_091).abs() < 1e-12);
        for d in [0.3, 1e-3, 1e-9] {
            assert!((threshold_x(d, 0, 2) - (1.0 / d).ln() - 1.0).abs() < 1e-12);
        }
        assert!(threshold_x(0.1, 10, 3) < threshold_x(0.1, 11, 3));
        assert!(threshold_x(0.1, 10, 3) < threshold_x(0.01, 10, 3));
        // m = 3: ln(10) + 2 (1 + ln(1 + 4/2))
        assert!((threshold_x(0.1, 4, 3) - (10f64.ln() + 2.0 * (1.0 + 3f64.ln()))).abs() < 1e-14);
    }

    #[test]
    fn delta_prime_values() {
        assert!((delta_prime(0.1, 2, 2) - 0.0015625).abs() < 1e-18);
        assert!((delta_prime(0.1, 5, 10) - 2e-5).abs() < 1e-18);
        assert!(delta_prime(0.5, 1, 1) < 0.5);
    }

    #[test]
    fn lhs_matches_standalone_evaluation() {
        let h = summary();
        let counts = [40, 25, 70, 55];
        let dp = delta_prime(0.05, 2, 2);
        let inp = StopInputs::new(&h, &counts, dp).unwrap();
        // Standalone evaluation (S = 2, so both thresholds use m = 2).
        let x = |n: f64| (1.0 / dp).ln() + 1.0 + (1.0 + n).ln();
        let r01 = ((8.0 * x(25.0)).sqrt() + (3.0 * x(25.0)).sqrt()) / 25f64.sqrt();
        let r10 = ((50.0 * x(70.0)).sqrt() + (12.0 * x(70.0)).sqrt()) / 70f64.sqrt();
        let r00 = ((40.0 * x(40.0)).sqrt() + (90.0 * x(40.0)).sqrt()) / 40f64.sqrt();
        let r11 = ((40.0 * x(55.0)).sqrt() + (90.0 * x(55.0)).sqrt()) / 55f64.sqrt();
        let expected = r01.max(r10) + r00.max(r11);
        assert!((stopping_lhs(&inp) - expected).abs() < 1e-12);
    }

    #[test]
    fn transition_terms_use_m_equal_s() {
        let mut h = summary();
        h.num_states = 3;
        h.num_actions = 1;
        h.policy = Policy(vec![0, 0, 0]);
        h.t1 = vec![0.0; 3];
        h.t2 = vec![0.0; 3];
        h.t3 = 0.0;
        h.t4 = 5.0;
        let counts = [9, 9, 9];
        let dp = 1e-3;
        let inp = StopInputs::new(&h, &counts, dp).unwrap();
        let lhs = stopping_lhs(&inp);
        let expected = (5.0 * threshold_x(dp, 9, 3)).sqrt() / 3.0;
        assert!((lhs - expected).abs() < 1e-12 + f64::EPSILON, "{lhs} vs {expected}");
    }

    #[test]
    fn more_samples_lower_statistic() {
        let h = summary();
        let counts = [40u64, 25, 70, 55];
        let scaled: Vec<u64> = counts.iter().map(|c| c * 4).collect();
        let dp = delta_prime(0.1, 2, 2);
        let a = stopping_lhs(&StopInputs::new(&h, &counts, dp).unwrap());
        let b = stopping_lhs(&StopInputs::new(&h, &scaled, dp).unwrap());
        assert!(b < a);
        let huge = vec![1u64 << 40; 4];
        assert!(should_stop(&StopInputs::new(&h, &huge, dp).unwrap()));
    }

    #[test]
    fn boundary_semantics() {
        assert!(lhs_allows_stop(0.99));
        assert!(lhs_allows_stop(1.0));
        assert!(!lhs_allows_stop(1.01));
        assert!(!lhs_allows_stop(f64::INFINITY));
        assert!(!lhs_allows_stop(f64::NAN));
        let mut h = summary();
        h.degenerate = true;
        let counts = vec![1u64 << 40; 4];
        let inp = StopInputs::new(&h, &counts, 0.01).unwrap();
        assert_eq!(stopping_lhs(&inp), f64::INFINITY);
        assert!(!should_stop(&inp));
    }

    #[test]
    fn invalid_inputs_rejected() {
        let h = summary();
        assert!(StopInputs::new(&h, &[1, 1, 1], 0.01).is_err());
        assert!(StopInputs::new(&h, &[1, 0, 1, 1], 0.01).is_err());
        assert!(StopInputs::new(&h, &[1, 1, 1, 1], 1.0).is_err());
    }
}
