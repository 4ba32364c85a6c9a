//! Hardness terms `T1..T4`, aggregated hardness `H_sa`, `H*`, the closed-form
//! near-optimal allocation `omega_bar`, the program value `V_P` and the
//! explicit bound `U`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Policy, SolveResult};

/// Suboptimal gaps are clamped below at this value before entering the
/// hardness terms.
pub const GAP_FLOOR: f64 = 1e-9;

/// Constant of the minimax envelope `C S A / (Delta_min^2 (1-gamma)^3)`.
pub const ENVELOPE_CONSTANT: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessSummary {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    /// Optimal policy of the model the terms were computed on.
    pub policy: Policy,
    /// `T1(s,a)`, flat `[s][a]`; zero at optimal pairs.
    pub t1: Vec<f64>,
    /// `T2(s,a)`, flat `[s][a]`; zero at optimal pairs.
    pub t2: Vec<f64>,
    pub t3: f64,
    pub t4: f64,
    /// `H_sa = T1 + T2` at suboptimal pairs, zero at optimal pairs.
    pub h_sub: Vec<f64>,
    /// `H* = S (T3 + T4)`.
    pub h_star: f64,
    pub omega_bar: Vec<f64>,
    pub v_program: f64,
    pub u_bound: f64,
    /// Set when the source model has tied actions or gaps below
    /// [`GAP_FLOOR`]; stopping is suppressed on degenerate summaries.
    pub degenerate: bool,
}

impl HardnessSummary {
    #[inline]
    pub fn idx(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    #[inline]
    pub fn is_optimal_pair(&self, s: usize, a: usize) -> bool {
        self.policy.action(s) == a
    }

    pub fn sum_h(&self) -> f64 {
        self.h_sub.iter().sum()
    }

    /// Objective `max_{s,a != pi*(s)} H_sa / w_sa + H* / (S min_s w_{s,pi*(s)})`
    /// of the allocation program, evaluated at an arbitrary allocation.
    pub fn objective(&self, omega: &[f64]) -> f64 {
        let ns = self.num_states;
        let min_opt = (0..ns).map(|s| omega[self.idx(s, self.policy.action(s))]).fold(f64::INFINITY, f64::min);
        let worst_sub = (0..ns)
            .flat_map(|s| (0..self.num_actions).map(move |a| (s, a)))
            .filter(|&(s, a)| !self.is_optimal_pair(s, a))
            .map(|(s, a)| {
                let i = self.idx(s, a);
                self.h_sub[i] / omega[i]
            })
            .fold(f64::NEG_INFINITY, f64::max);
        worst_sub + self.h_star / (ns as f64 * min_opt)
    }
}

/// Hardness terms of a solved model. Allocation fields are left empty; see
/// [`optimal_allocation`] or [`summarize`].
///
/// With `Delta = Delta_sa`, `Dm = Delta_min`, `g = 1 - gamma`:
/// `T1 = 2/Delta^2`,
/// `T2 = max(16 Var/Delta^2, 6 MD^{4/3}/Delta^{4/3})`,
/// `T3 = 2/(Dm^2 g^2)`,
/// `T4 = min(27/(Dm^2 g^3), max(16 Var*/(Dm^2 g^2), 6 MD*^{4/3}/(Dm^{4/3} g^{4/3})))`.
pub fn hardness_terms(sr: &SolveResult, gamma: f64) -> Result<HardnessSummary> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidInput(format!("gamma = {gamma} outside (0, 1)")));
    }
    let (ns, na) = (sr.num_states, sr.num_actions);
    if na < 2 {
        return Err(Error::InvalidInput("hardness terms need at least two actions".into()));
    }
    let mut degenerate = !sr.unique_optimum;
    let mut t1 = vec![0.0; ns * na];
    let mut t2 = vec![0.0; ns * na];
    let mut h_sub = vec![0.0; ns * na];
    for (s, a) in sr.suboptimal_pairs() {
        let i = sr.idx(s, a);
        let raw = sr.gaps[i];
        if raw < GAP_FLOOR {
            degenerate = true;
        }
        let gap = raw.max(GAP_FLOOR);
        t1[i] = 2.0 / (gap * gap);
        t2[i] =
            f64::max(16.0 * sr.var_next[i] / (gap * gap), 6.0 * sr.md_next[i].powf(4.0 / 3.0) / gap.powf(4.0 / 3.0));
        h_sub[i] = t1[i] + t2[i];
    }
    let dm = sr.delta_min.max(GAP_FLOOR);
    let g = 1.0 - gamma;
    let t3 = 2.0 / (dm * dm * g * g);
    let t4 = f64::min(
        27.0 / (dm * dm * g.powi(3)),
        f64::max(
            16.0 * sr.var_max_star / (dm * dm * g * g),
            6.0 * sr.md_max_star.powf(4.0 / 3.0) / (dm.powf(4.0 / 3.0) * g.powf(4.0 / 3.0)),
        ),
    );
    Ok(HardnessSummary {
        num_states: ns,
        num_actions: na,
        gamma,
        policy: sr.policy.clone(),
        t1,
        t2,
        t3,
        t4,
        h_sub,
        h_star: ns as f64 * (t3 + t4),
        omega_bar: Vec::new(),
        v_program: f64::NAN,
        u_bound: f64::NAN,
        degenerate,
    })
}

/// Fills `omega_bar`, `v_program` and `u_bound` from the closed form
/// `omega_sa = H_sa / (sum H + sqrt(H* sum H))` at suboptimal pairs and
/// `omega_{s,pi*(s)} = sqrt(H* sum H) / (S (sum H + sqrt(H* sum H)))`.
pub fn optimal_allocation(h: &mut HardnessSummary) -> Result<()> {
    let sum_h = h.sum_h();
    let bad_sub = (0..h.num_states)
        .flat_map(|s| (0..h.num_actions).map(move |a| (s, a)))
        .filter(|&(s, a)| !h.is_optimal_pair(s, a))
        .any(|(s, a)| !(h.h_sub[h.idx(s, a)] > 0.0 && h.h_sub[h.idx(s, a)].is_finite()));
    if bad_sub || !(h.h_star > 0.0 && h.h_star.is_finite()) || !(sum_h > 0.0) {
        return Err(Error::InvalidInput("hardness terms must be finite and positive".into()));
    }
    let cross = (h.h_star * sum_h).sqrt();
    let denom = sum_h + cross;
    let opt_mass = cross / (h.num_states as f64 * denom);
    h.omega_bar = (0..h.num_states * h.num_actions)
        .map(|i| {
            let (s, a) = (i / h.num_actions, i % h.num_actions);
            if h.is_optimal_pair(s, a) {
                opt_mass
            } else {
                h.h_sub[i] / denom
            }
        })
        .collect();
    h.v_program = sum_h + h.h_star + 2.0 * cross;
    h.u_bound = 2.0 * (sum_h + h.h_star);
    Ok(())
}

/// [`hardness_terms`] followed by [`optimal_allocation`].
pub fn summarize(sr: &SolveResult, gamma: f64) -> Result<HardnessSummary> {
    let mut h = hardness_terms(sr, gamma)?;
    optimal_allocation(&mut h)?;
    Ok(h)
}

/// Both sides of `(max_sub (sqrt T1 + sqrt T2)/sqrt w + max_s (sqrt T3 + sqrt T4)/sqrt w*)^2 <= 4U`
/// at `w = omega_bar`. Returns `(lhs, 4U)`.
pub fn check_technical_bound(h: &HardnessSummary) -> (f64, f64) {
    let sub = (0..h.num_states)
        .flat_map(|s| (0..h.num_actions).map(move |a| (s, a)))
        .filter(|&(s, a)| !h.is_optimal_pair(s, a))
        .map(|(s, a)| {
            let i = h.idx(s, a);
            (h.t1[i].sqrt() + h.t2[i].sqrt()) / h.omega_bar[i].sqrt()
        })
        .fold(0.0, f64::max);
    let opt = (0..h.num_states)
        .map(|s| (h.t3.sqrt() + h.t4.sqrt()) / h.omega_bar[h.idx(s, h.policy.action(s))].sqrt())
        .fold(0.0, f64::max);
    ((sub + opt).powi(2), 4.0 * h.u_bound)
}

/// `C S A / (Delta_min^2 (1-gamma)^3)` with `C = ENVELOPE_CONSTANT`.
pub fn minimax_envelope(num_states: usize, num_actions: usize, gamma: f64, delta_min: f64) -> f64 {
    ENVELOPE_CONSTANT * (num_states * num_actions) as f64 / (delta_min * delta_min * (1.0 - gamma).powi(3))
}
