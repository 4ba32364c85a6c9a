//! Best-policy identification in discounted MDPs with a generative model.
//!
//! The crate implements the KL-ball track-and-stop algorithm (KLB-TS):
//! the closed-form near-optimal sampling allocation built from four
//! hardness terms, C-tracking of that allocation, and a stopping rule that
//! compares threshold-scaled hardness radii against the visit counts.
//! Around it sit the planning primitives ([`mdp`]), desk-scale instruments
//! for the lower-bound program ([`oracle`]), baselines, a seeded sweep
//! harness with CSV/JSON-lines/SVG output ([`report`], [`plot`]) and an
//! invariant suite ([`verify`]).

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod baselines;
pub mod engine;
pub mod error;
pub mod mdp;
pub mod oracle;
pub mod plot;
pub mod report;
pub mod stopping;
pub mod tracking;
pub mod verify;

pub use allocation::{summarize, HardnessSummary};
pub use engine::{run_klbts, run_sweep, Limits, RunRecord, SamplingRule, SweepAggregate, SweepConfig};
pub use error::{Error, Result};
pub use mdp::{random_mdp, solve, Mdp, Policy, RewardDist, RewardKind, SolveResult};
