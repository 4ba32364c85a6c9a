//! Invariant suite behind the `verify` subcommand. Every check is
//! deterministic given the seed and finishes well under a minute on one
//! core.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{check_technical_bound, minimax_envelope, summarize, HardnessSummary};
use crate::engine::derive_seed;
use crate::error::Result;
use crate::mdp::{random_mdp, solve, value_iteration, Mdp, DEFAULT_TOL};
use crate::oracle::hellinger_slack_with;
use crate::tracking::{project_clipped_simplex, TrackerState};

pub const RANDOM_MDPS: usize = 100;
pub const LEMMA_VECTORS: usize = 1000;
pub const HELLINGER_PAIRS: usize = 1000;
pub const PROJECTION_CASES: usize = 200;
pub const TRACKING_STEPS: u64 = 100_000;

const REL_TOL: f64 = 1e-9;
const HELLINGER_TOL: f64 = -1e-12;
const PROJECTION_TOL: f64 = 1e-9;
const TRACKING_TOL: f64 = 0.02;
/// Grid resolution of the simplex enumeration in the square-root lemma.
const LEMMA_GRID: usize = 100;
/// Vectors whose `sum sqrt(rho)` lies this close to 1 are skipped: the grid
/// cannot resolve them.
const LEMMA_BAND: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Worst observed value, or the first failing case.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub first_failure: Option<String>,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    fn from_checks(checks: Vec<Check>) -> Self {
        let first_failure = checks.iter().find(|c| !c.passed).map(|c| c.name.clone());
        VerifyReport { passed: first_failure.is_none(), first_failure, checks }
    }
}

fn check(name: &str, passed: bool, cases: usize, detail: String) -> Check {
    Check { name: name.to_string(), passed, cases, detail }
}

struct Sample {
    mdp: Mdp,
    h: HardnessSummary,
    delta_min: f64,
}

fn random_set(seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(RANDOM_MDPS);
    for i in 0..RANDOM_MDPS {
        let ns = rng.random_range(2..=5);
        let na = rng.random_range(2..=5);
        let gamma = rng.random_range(0.3..0.95);
        let mdp = random_mdp(ns, na, gamma, derive_seed(seed, 1, i))?;
        let sr = solve(&mdp, DEFAULT_TOL)?;
        let h = summarize(&sr, gamma)?;
        out.push(Sample { mdp, h, delta_min: sr.delta_min });
    }
    Ok(out)
}

/// Runs the full suite on random models derived from `seed`, plus the
/// model-specific checks on `mdp` when one is given.
pub fn run_suite(mdp: Option<&Mdp>, seed: u64) -> Result<VerifyReport> {
    let set = random_set(seed)?;
    let mut checks = vec![
        check_delta_min(&set),
        check_technical(&set),
        check_envelope(&set),
        check_program(&set),
        check_pi_vi(&set)?,
        check_lemma_grid(seed),
        check_hellinger(seed)?,
        check_projection(seed),
    ];
    let tracking_target = match mdp {
        Some(m) => {
            let sr = solve(m, DEFAULT_TOL)?;
            let h = summarize(&sr, m.gamma())?;
            let sample = Sample { mdp: m.clone(), delta_min: sr.delta_min, h };
            let one = std::slice::from_ref(&sample);
            for mut c in [check_delta_min(one), check_technical(one), check_envelope(one), check_program(one)] {
                c.name = format!("model: {}", c.name);
                checks.push(c);
            }
            sample.h.omega_bar
        }
        None => set[0].h.omega_bar.clone(),
    };
    checks.push(check_tracking(&tracking_target));
    Ok(VerifyReport::from_checks(checks))
}

fn check_delta_min(set: &[Sample]) -> Check {
    let worst = set.iter().map(|s| s.delta_min).fold(0.0, f64::max);
    check("delta_min <= 1", worst <= 1.0, set.len(), format!("max delta_min = {worst:.16e}"))
}

fn check_technical(set: &[Sample]) -> Check {
    let worst = set
        .iter()
        .map(|s| {
            let (lhs, four_u) = check_technical_bound(&s.h);
            lhs / four_u
        })
        .fold(0.0, f64::max);
    check("technical bound lhs <= 4U", worst <= 1.0, set.len(), format!("max lhs/4U = {worst:.16e}"))
}

fn check_envelope(set: &[Sample]) -> Check {
    let worst = set
        .iter()
        .map(|s| {
            let env = minimax_envelope(s.mdp.num_states(), s.mdp.num_actions(), s.mdp.gamma(), s.delta_min);
            s.h.u_bound / env
        })
        .fold(0.0, f64::max);
    check("U <= minimax envelope", worst <= 1.0, set.len(), format!("max U/envelope = {worst:.16e}"))
}

fn check_program(set: &[Sample]) -> Check {
    let mut worst_rel = 0.0f64;
    let mut bad = None;
    for (i, s) in set.iter().enumerate() {
        let h = &s.h;
        let obj = h.objective(&h.omega_bar);
        let rel = (obj - h.v_program).abs() / h.v_program;
        worst_rel = worst_rel.max(rel);
        let sum: f64 = h.omega_bar.iter().sum();
        let ok = h.v_program <= h.u_bound
            && rel <= REL_TOL
            && (sum - 1.0).abs() <= 1e-12
            && h.omega_bar.iter().all(|&w| w > 0.0);
        if !ok && bad.is_none() {
            bad = Some(i);
        }
    }
    let detail = match bad {
        Some(i) => format!("model {i} violates V_P <= U, objective = V_P or simplex membership"),
        None => format!("max |objective - V_P|/V_P = {worst_rel:.16e}"),
    };
    check("V_P <= U and objective(omega_bar) = V_P", bad.is_none(), set.len(), detail)
}

fn check_pi_vi(set: &[Sample]) -> Result<Check> {
    let mut worst = 0.0f64;
    let mut mismatch = None;
    for (i, s) in set.iter().enumerate() {
        let sr = solve(&s.mdp, DEFAULT_TOL)?;
        let (v, pi) = value_iteration(&s.mdp, DEFAULT_TOL)?;
        let diff = v.iter().zip(&sr.v_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
        if (pi != sr.policy || diff > 1e-8) && mismatch.is_none() {
            mismatch = Some(i);
        }
    }
    let detail = match mismatch {
        Some(i) => format!("model {i}: value and policy iteration disagree"),
        None => format!("max |V_vi - V_pi| = {worst:.16e}"),
    };
    Ok(check("policy iteration agrees with value iteration", mismatch.is_none(), set.len(), detail))
}

/// Brute force over the grid of the 4-simplex: is there `alpha` with
/// `rho_i >= alpha_i^2` for every `i`?
fn grid_has_dominated_alpha(rho: &[f64; 4]) -> bool {
    let n = LEMMA_GRID;
    let step = 1.0 / n as f64;
    let fits = |k: usize, i: usize| {
        let a = k as f64 * step;
        rho[i] >= a * a
    };
    for i in 0..=n {
        if !fits(i, 0) {
            break;
        }
        for j in 0..=n - i {
            if !fits(j, 1) {
                break;
            }
            for k in 0..=n - i - j {
                if !fits(k, 2) {
                    break;
                }
                if fits(n - i - j - k, 3) {
                    return true;
                }
            }
        }
    }
    false
}

fn check_lemma_grid(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0));
    let (mut tested, mut skipped) = (0, 0);
    let mut failure = None;
    for i in 0..LEMMA_VECTORS {
        // Half the vectors are uniform on [0,1]^4; the rest are rescaled so
        // that `sum sqrt(rho)` spreads around 1.
        let mut rho = [0.0; 4];
        rho.iter_mut().for_each(|r| *r = rng.random::<f64>());
        if i % 2 == 1 {
            let roots: f64 = rho.iter().map(|r| r.sqrt()).sum();
            let target = rng.random_range(0.5..1.5);
            let k = target / roots;
            rho.iter_mut().for_each(|r| *r *= k * k);
        }
        let root_sum: f64 = rho.iter().map(|r| r.sqrt()).sum();
        if (root_sum - 1.0).abs() < LEMMA_BAND {
            skipped += 1;
            continue;
        }
        tested += 1;
        let every_alpha_escapes = !grid_has_dominated_alpha(&rho);
        if every_alpha_escapes != (root_sum < 1.0) && failure.is_none() {
            failure = Some(format!("rho = {rho:?}, sum sqrt = {root_sum:.16e}"));
        }
    }
    let passed = failure.is_none();
    let detail = failure.unwrap_or_else(|| format!("{skipped} vectors inside the grid band skipped"));
    check("square-root lemma matches simplex grid", passed, tested, detail)
}

fn check_hellinger(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, 0));
    let mut worst = f64::INFINITY;
    let mut phi_cache: Option<(Mdp, crate::mdp::SolveResult)> = None;
    for i in 0..HELLINGER_PAIRS {
        // A fresh reference model every ten pairs; alternatives range from
        // far (independent draw) to close (mixtures with small weight).
        if i % 10 == 0 {
            let ns = rng.random_range(2..=4);
            let na = rng.random_range(2..=3);
            let gamma = rng.random_range(0.3..0.95);
            let phi = random_mdp(ns, na, gamma, derive_seed(seed, 4, i))?;
            let sr = solve(&phi, DEFAULT_TOL)?;
            phi_cache = Some((phi, sr));
        }
        let (phi, sr) = phi_cache.as_ref().expect("reference model drawn at i = 0");
        let other = random_mdp(phi.num_states(), phi.num_actions(), phi.gamma(), derive_seed(seed, 5, i))?;
        let lambda = if i % 2 == 0 { 1.0 } else { 10f64.powf(-rng.random_range(0.0..6.0)) };
        let psi = phi.mix(&other, lambda)?;
        worst = worst.min(hellinger_slack_with(phi, &psi, sr));
    }
    Ok(check(
        "variance/KL bound slack >= -1e-12",
        worst >= HELLINGER_TOL,
        HELLINGER_PAIRS,
        format!("min slack = {worst:.16e}"),
    ))
}

/// Smallest sup-norm distance from `omega` to `{x : sum x = 1, x >= eps}`
/// for three coordinates, found by repeatedly zooming a grid over
/// `(x_0, x_1)`.
fn brute_force_linf(omega: &[f64; 3], eps: f64) -> f64 {
    const N: usize = 60;
    let dist = |x0: f64, x1: f64| {
        let x2 = 1.0 - x0 - x1;
        if x0 < eps || x1 < eps || x2 < eps {
            return f64::INFINITY;
        }
        (x0 - omega[0]).abs().max((x1 - omega[1]).abs()).max((x2 - omega[2]).abs())
    };
    let (mut c0, mut c1, mut half) = (1.0 / 3.0, 1.0 / 3.0, 0.5);
    let mut best = dist(c0, c1);
    for _ in 0..40 {
        let (b0, b1) = (c0, c1);
        for i in 0..=N {
            for j in 0..=N {
                let x0 = (b0 - half + 2.0 * half * i as f64 / N as f64).max(eps);
                let x1 = (b1 - half + 2.0 * half * j as f64 / N as f64).max(eps);
                let d = dist(x0, x1);
                if d < best {
                    best = d;
                    (c0, c1) = (x0, x1);
                }
            }
        }
        half *= 0.5;
    }
    best
}

fn check_projection(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 6, 0));
    let mut worst = 0.0f64;
    for i in 0..PROJECTION_CASES {
        let eps = rng.random_range(0.01..0.3);
        let mut w = [0.0; 3];
        w.iter_mut().for_each(|x| *x = rng.random::<f64>().powi(1 + (i % 4) as i32));
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let Ok(p) = project_clipped_simplex(&w, eps) else {
            return check("clipped-simplex projection matches brute force", false, i, format!("omega {w:?} rejected"));
        };
        let ours = p.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let feasible = p.iter().all(|&x| x >= eps - 1e-15) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
        let brute = brute_force_linf(&w, eps);
        let gap = if feasible { (ours - brute).abs() } else { f64::INFINITY };
        worst = worst.max(gap);
    }
    check(
        "clipped-simplex projection matches brute force",
        worst <= PROJECTION_TOL,
        PROJECTION_CASES,
        format!("max |d_ours - d_grid| = {worst:.16e}"),
    )
}

fn check_tracking(target: &[f64]) -> Check {
    let pairs = target.len();
    let mut tracker = TrackerState::after_initial_sweep(pairs);
    let mut projected = vec![0.0; pairs];
    while tracker.t < TRACKING_STEPS {
        let eps = crate::tracking::epsilon_t(1, pairs, tracker.t);
        crate::tracking::project_clipped_simplex_into(target, eps, &mut projected).expect("valid target");
        tracker.next_pair(&projected);
    }
    let err = tracker.max_frequency_error(target);
    check(
        "tracking frequencies reach the allocation",
        err <= TRACKING_TOL,
        1,
        format!("max |n/t - omega| at t = {} is {err:.16e}", tracker.t),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_agrees_away_from_boundary() {
        assert!(grid_has_dominated_alpha(&[0.25, 0.25, 0.25, 0.25]));
        assert!(!grid_has_dominated_alpha(&[0.01, 0.01, 0.01, 0.01]));
        assert!(grid_has_dominated_alpha(&[1.0, 0.0, 0.0, 0.0]));
        assert!(!grid_has_dominated_alpha(&[0.9, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn brute_force_projection_known_case() {
        let d = brute_force_linf(&[0.9, 0.05, 0.05], 0.1);
        assert!((d - 0.1).abs() < 1e-9, "{d}");
    }

    #[test]
    fn suite_passes() {
        let report = run_suite(None, 7).unwrap();
        assert!(report.passed, "{report:#?}");
        assert_eq!(report.checks.len(), 9);
    }
}
