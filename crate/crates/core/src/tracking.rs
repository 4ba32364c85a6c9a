//! C-tracking: forced-exploration floor and cumulative-deficit pair choice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exploration floor `eps_t = (S^2 A^2 + t)^{-1/2} / 2`.
pub fn epsilon_t(num_states: usize, num_actions: usize, t: u64) -> f64 {
    let sa = (num_states * num_actions) as f64;
    0.5 / (sa * sa + t as f64).sqrt()
}

const BISECTION_TOL: f64 = 1e-14;

/// L-infinity projection of a simplex point onto
/// `{w in [eps, 1]^n : sum w = 1}`.
///
/// Entries below `eps` are raised to `eps`; the surplus is removed by the
/// smallest uniform shift `c >= 0` such that `sum max(eps, w_i - c) = 1`.
/// `c` is bracketed by bisection (to `1e-14`, or until the set of entries
/// above the floor is settled) and then fixed exactly on that set.
pub fn project_clipped_simplex(omega: &[f64], eps: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; omega.len()];
    project_clipped_simplex_into(omega, eps, &mut out)?;
    Ok(out)
}

/// In-place variant of [`project_clipped_simplex`] writing into `out`.
pub fn project_clipped_simplex_into(omega: &[f64], eps: f64, out: &mut [f64]) -> Result<()> {
    let n = omega.len();
    if n == 0 || out.len() != n {
        return Err(Error::InvalidInput("projection needs matching non-empty buffers".into()));
    }
    if !(eps >= 0.0) || eps * n as f64 > 1.0 + 1e-15 {
        return Err(Error::InvalidInput(format!("floor {eps} infeasible for {n} entries")));
    }
    if omega.iter().all(|&w| w >= eps) {
        out.copy_from_slice(omega);
        return Ok(());
    }
    let mut lo = 0.0;
    let mut hi = omega.iter().copied().fold(0.0, f64::max);
    // Bisection on the shift; it can end early once no entry changes
    // between floored and active inside the bracket.
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let mass: f64 = omega.iter().map(|&w| f64::max(eps, w - mid)).sum();
        if mass > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if !omega.iter().any(|&w| w - eps > lo && w - eps <= hi) {
            break;
        }
    }
    // Entries still above the floor at the bracketed shift share the
    // remaining mass exactly.
    let c = 0.5 * (lo + hi);
    let (mut active, mut active_mass) = (0usize, 0.0);
    for &w in omega {
        if w - c > eps {
            active += 1;
            active_mass += w;
        }
    }
    let c = if active > 0 { (active_mass + (n - active) as f64 * eps - 1.0) / active as f64 } else { c };
    for (o, &w) in out.iter_mut().zip(omega) {
        *o = f64::max(eps, w - c);
    }
    Ok(())
}

/// Running state of the C-tracking rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    /// Sum of the projected allocations fed so far, flat `[s][a]`.
    pub cumulative: Vec<f64>,
    /// Visit counts `n_t(s,a)`.
    pub counts: Vec<u64>,
    /// Total samples drawn.
    pub t: u64,
}

impl TrackerState {
    /// State after the initial sweep sampling every pair once. The
    /// cumulative sums start at one per pair, matching the counts.
    pub fn after_initial_sweep(num_pairs: usize) -> Self {
        TrackerState { cumulative: vec![1.0; num_pairs], counts: vec![1; num_pairs], t: num_pairs as u64 }
    }

    /// Adds `omega_eps` to the cumulative sums, picks the pair with the
    /// largest deficit `cumulative - counts` (lowest index on ties), and
    /// records one visit to it. Returns the flat pair index.
    pub fn next_pair(&mut self, omega_eps: &[f64]) -> usize {
        debug_assert_eq!(omega_eps.len(), self.cumulative.len());
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (i, (c, w)) in self.cumulative.iter_mut().zip(omega_eps).enumerate() {
            *c += w;
            let deficit = *c - self.counts[i] as f64;
            if deficit > best_deficit {
                best_deficit = deficit;
                best = i;
            }
        }
        self.counts[best] += 1;
        self.t += 1;
        best
    }

    /// `max_i |n_i / t - target_i|`.
    pub fn max_frequency_error(&self, target: &[f64]) -> f64 {
        let t = self.t as f64;
        self.counts.iter().zip(target).map(|(&n, &w)| (n as f64 / t - w).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_values() {
        assert_eq!(epsilon_t(2, 2, 0), 0.125);
        assert_eq!(epsilon_t(1, 1, 0), 0.5);
        let mut prev = f64::INFINITY;
        for t in [0, 1, 10, 1000, 1_000_000, 1_000_000_000] {
            let e = epsilon_t(3, 4, t);
            assert!(e < prev);
            prev = e;
        }
        assert!(epsilon_t(2, 2, 1 << 50) < 1e-7);
    }

    #[test]
    fn projection_hand_example() {
        // 0.9 + 0.1 + 0 + 0 raised to 1.1 mass; shift c = 0.05 removes 0.1.
        let out = project_clipped_simplex(&[0.9, 0.1, 0.0, 0.0], 0.05).unwrap();
        let expected = [0.85, 0.05, 0.05, 0.05];
        for (x, y) in out.iter().zip(expected) {
            assert!((x - y).abs() < 1e-14, "{out:?}");
        }
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn feasible_points_unchanged() {
        let w = [0.4, 0.3, 0.2, 0.1];
        assert_eq!(project_clipped_simplex(&w, 0.1).unwrap(), w.to_vec());
        let u = [0.25; 4];
        assert_eq!(project_clipped_simplex(&u, 0.25).unwrap(), u.to_vec());
    }

    #[test]
    fn infeasible_floor_rejected() {
        assert!(project_clipped_simplex(&[0.5, 0.5], 0.6).is_err());
        assert!(project_clipped_simplex(&[], 0.1).is_err());
    }

    #[test]
    fn uniform_allocation_round_robins() {
        let mut tr = TrackerState::after_initial_sweep(4);
        let uniform = [0.25; 4];
        let order: Vec<usize> = (0..8).map(|_| tr.next_pair(&uniform)).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 0, 1, 2, 3]);
        for _ in 0..10_000 {
            tr.next_pair(&uniform);
        }
        assert!(tr.max_frequency_error(&uniform) < 1e-3);
        assert_eq!(tr.counts.iter().sum::<u64>(), tr.t);
    }

    #[test]
    fn largest_deficit_selected() {
        let mut tr = TrackerState::after_initial_sweep(3);
        tr.cumulative = vec![1.0, 5.0, 2.0];
        assert_eq!(tr.next_pair(&[0.2, 0.2, 0.6]), 1);
        assert_eq!(tr.counts, vec![1, 2, 1]);
    }

    #[test]
    fn tracks_fixed_target_with_slack() {
        let target = [0.7, 0.1, 0.1, 0.1];
        let mut tr = TrackerState::after_initial_sweep(4);
        let mut buf = [0.0; 4];
        while tr.t < 100_000 {
            project_clipped_simplex_into(&target, epsilon_t(2, 2, tr.t), &mut buf).unwrap();
            tr.next_pair(&buf);
        }
        let bound = 3.0 * 3.0 * epsilon_t(2, 2, tr.t) + 2.0 * 4.0 / tr.t as f64;
        assert!(tr.max_frequency_error(&target) <= bound);
    }

    #[test]
    fn no_starvation_under_floor() {
        let target = [1.0, 0.0, 0.0, 0.0];
        let mut tr = TrackerState::after_initial_sweep(4);
        let mut buf = [0.0; 4];
        let mut floor_sum = 4.0 * epsilon_t(2, 2, 0);
        while tr.t < 100_000 {
            let eps = epsilon_t(2, 2, tr.t);
            floor_sum += eps;
            project_clipped_simplex_into(&target, eps, &mut buf).unwrap();
            tr.next_pair(&buf);
            let total: f64 = tr.cumulative.iter().sum();
            assert!((total - tr.t as f64).abs() <= tr.t as f64 * 1e-12);
        }
        assert!(tr.cumulative.iter().all(|&c| c >= floor_sum - 1e-9));
        let min_count = *tr.counts.iter().min().unwrap() as f64;
        assert!(min_count >= (tr.t as f64).sqrt() - 8.0, "min count {min_count}");
    }
}
