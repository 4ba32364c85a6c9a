//! Comparison points: uniform sampling under the same stopping rule, and the
//! initialization cost of BESPOKE.

use serde::{Deserialize, Serialize};

use crate::engine::{run_with_rule, Limits, RunRecord, SamplingRule};
use crate::error::Result;
use crate::mdp::Mdp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub baseline: String,
    #[serde(flatten)]
    pub record: RunRecord,
}

/// Same loop as the tracked algorithm with the target fixed to `1/SA`.
pub fn run_uniform(mdp: &Mdp, delta: f64, seed: u64, limits: &Limits) -> Result<BaselineRecord> {
    Ok(BaselineRecord {
        baseline: "uniform".to_string(),
        record: run_with_rule(mdp, delta, seed, limits, SamplingRule::Uniform)?,
    })
}

/// Per-pair initialization count of BESPOKE:
/// `n_min = 2 * 625^2 * gamma^2 * S * ln(1/delta) / (1-gamma)^2`.
pub fn bespoke_nmin(gamma: f64, num_states: usize, delta: f64) -> f64 {
    2.0 * 625.0 * 625.0 * gamma * gamma * num_states as f64 * (1.0 / delta).ln() / ((1.0 - gamma) * (1.0 - gamma))
}

/// Total initialization cost `n_min * S * A`.
pub fn bespoke_initial_samples(gamma: f64, num_states: usize, num_actions: usize, delta: f64) -> f64 {
    bespoke_nmin(gamma, num_states, delta) * (num_states * num_actions) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;

    #[test]
    fn nmin_values() {
        let v = bespoke_nmin(0.5, 2, 0.1);
        let expected = 2.0 * 390_625.0 * 0.25 * 2.0 * 10f64.ln() / 0.25;
        assert!((v - expected).abs() < 1e-6);
        assert!((v - 3.597_789_3e6).abs() < 1.0, "{v}");
        assert!((bespoke_nmin(0.5, 2, 0.01) / v - 2.0).abs() < 1e-12);
        assert_eq!(bespoke_nmin(0.0, 2, 0.1), 0.0);
        assert!((bespoke_initial_samples(0.5, 2, 3, 0.1) - 6.0 * v).abs() < 1e-6);
    }

    #[test]
    fn uniform_frequencies() {
        let mdp = random_mdp(2, 2, 0.5, 3).unwrap();
        let limits = Limits { max_samples: 40_000, stride: None, stopping: false };
        let rec = run_uniform(&mdp, 0.1, 2, &limits).unwrap();
        assert_eq!(rec.baseline, "uniform");
        for &n in &rec.record.final_counts {
            assert!((n as f64 / rec.record.tau as f64 - 0.25).abs() < 1e-4);
        }
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.starts_with("{\"baseline\":\"uniform\",\"rule\":\"uniform\""));
    }
}
