use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use klbts::engine::DEFAULT_MAX_SAMPLES;
use klbts::{random_mdp, Limits, Mdp};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "KLBTS_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Uniform,
    BespokeNmin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MdpSource {
    Path { path: PathBuf },
    Generate { states: usize, actions: usize, gamma: f64, seed: u64 },
}

impl MdpSource {
    pub fn load(&self) -> Result<Mdp> {
        match self {
            MdpSource::Path { path } => Mdp::load(path).with_context(|| format!("loading {}", path.display())),
            MdpSource::Generate { states, actions, gamma, seed } => Ok(random_mdp(*states, *actions, *gamma, *seed)?),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Outputs {
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub jsonl: Option<PathBuf>,
}

/// Everything a sweep needs. Loaded from JSON with `--config`, or assembled
/// from flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    pub deltas: Vec<f64>,
    pub runs_per_delta: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_samples")]
    pub max_samples: u64,
    #[serde(default)]
    pub stride: Option<u64>,
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
}

fn default_max_samples() -> u64 {
    DEFAULT_MAX_SAMPLES
}

impl ExperimentConfig {
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.deltas.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            bail!("delta {d} is outside (0, 1)");
        }
        if self.deltas.windows(2).any(|w| w[1] >= w[0]) {
            bail!("deltas must be strictly decreasing");
        }
        if self.runs_per_delta < 1 {
            bail!("runs_per_delta must be at least 1");
        }
        if self.max_samples == 0 {
            bail!("max_samples must be positive");
        }
        Ok(())
    }

    pub fn limits(&self) -> Limits {
        Limits { max_samples: self.max_samples, stride: self.stride, stopping: true }
    }
}

/// `KLBTS_SEED` wins over any seed given on the command line or in a config.
pub fn effective_seed(seed: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not an unsigned integer")),
        Err(_) => Ok(seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig {
            mdp: MdpSource::Generate { states: 2, actions: 2, gamma: 0.5, seed: 0 },
            deltas: vec![0.1, 0.01],
            runs_per_delta: 3,
            seed: 1,
            max_samples: 1000,
            stride: None,
            jobs: 1,
            outputs: Outputs::default(),
            baselines: vec![Baseline::Uniform],
        }
    }

    #[test]
    fn validation() {
        assert!(base().validate().is_ok());
        let mut c = base();
        c.deltas = vec![0.01, 0.1];
        assert!(c.validate().is_err());
        c.deltas = vec![0.1, 0.1];
        assert!(c.validate().is_err());
        c.deltas = vec![1.0];
        assert!(c.validate().is_err());
        c = base();
        c.runs_per_delta = 0;
        assert!(c.validate().is_err());
        c = base();
        c.deltas.clear();
        assert!(c.validate().is_ok());
    }

    #[test]
    fn json_round_trip() {
        let c = base();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
        let minimal: ExperimentConfig =
            serde_json::from_str(r#"{"mdp": {"path": "m.json"}, "deltas": [0.1], "runs_per_delta": 2}"#).unwrap();
        assert_eq!(minimal.max_samples, DEFAULT_MAX_SAMPLES);
        assert_eq!(minimal.mdp, MdpSource::Path { path: "m.json".into() });
        assert!(minimal.baselines.is_empty());
    }
}
