//! KL divergences between pair models and the alternative-set test.

use super::planning::{policy_value, solve, DEFAULT_TOL};
use super::{Mdp, Policy};
use crate::error::{Error, Result};

/// `kl(p, q)` between Bernoulli laws with means `p` and `q`, in nats.
/// Uses `0 log 0 = 0`; infinite when `q` puts no mass where `p` does.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    xlogx_ratio(p, q) + xlogx_ratio(1.0 - p, 1.0 - q)
}

#[inline]
fn xlogx_ratio(x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if y <= 0.0 {
        f64::INFINITY
    } else {
        x * (x / y).ln()
    }
}

/// `KL(p || q)` between categorical distributions on the same support.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter().zip(q).map(|(&x, &y)| xlogx_ratio(x, y)).sum::<f64>().max(0.0)
}

/// `KL_{phi|psi}(s,a)`: transition KL plus reward KL. Reward laws are
/// compared as Bernoulli laws with the stored means. Returns `+inf` when
/// `psi` lacks support where `phi` has mass.
pub fn kl_at_pair(phi: &Mdp, psi: &Mdp, s: usize, a: usize) -> Result<f64> {
    phi.check_same_shape(psi)?;
    if s >= phi.num_states() || a >= phi.num_actions() {
        return Err(Error::InvalidInput(format!("pair ({s}, {a}) out of range")));
    }
    Ok(pair_kl_unchecked(phi, psi, s, a))
}

#[inline]
pub(crate) fn pair_kl_unchecked(phi: &Mdp, psi: &Mdp, s: usize, a: usize) -> f64 {
    categorical_kl(phi.transition(s, a), psi.transition(s, a))
        + bernoulli_kl(phi.reward_mean(s, a), psi.reward_mean(s, a))
}

/// Whether `psi` belongs to the alternative set of `phi`: some suboptimal
/// action of `phi` strictly improves on `pi*_phi` when evaluated in `psi`.
pub fn is_alternative(phi: &Mdp, psi: &Mdp, tol: f64) -> Result<bool> {
    phi.check_same_shape(psi)?;
    let sr = solve(phi, DEFAULT_TOL)?;
    if !sr.unique_optimum {
        let state = (0..phi.num_states())
            .find(|&s| (0..phi.num_actions()).any(|a| a != sr.policy.action(s) && sr.gap(s, a) <= super::TIE_TOL))
            .unwrap_or(0);
        return Err(Error::NonUniqueOptimum { state });
    }
    is_alternative_under(&sr.policy, psi, tol)
}

/// Alternative test against a known optimal policy `pi_star` of the
/// reference model: true iff `Q^{pi}_psi(s,a) > V^{pi}_psi(s) + tol` for
/// some `s` and `a != pi(s)`.
pub fn is_alternative_under(pi_star: &Policy, psi: &Mdp, tol: f64) -> Result<bool> {
    let v = policy_value(psi, pi_star, DEFAULT_TOL.min(tol.max(1e-13)))?;
    let gamma = psi.gamma();
    for s in 0..psi.num_states() {
        for a in 0..psi.num_actions() {
            if a == pi_star.action(s) {
                continue;
            }
            let ev: f64 = psi.transition(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
            if psi.reward_mean(s, a) + gamma * ev > v[s] + tol {
                return Ok(true);
            }
        }
    }
    Ok(false)
}
