//! Desk-scale laboratory for plan-conditioned reasoning policies.
//!
//! A tabular autoregressive policy is trained in two stages on synthetic,
//! exactly verifiable arithmetic tasks: a supervised cold start on
//! plan-augmented oracle data, then group-relative policy optimization with
//! a composite reward (per-plan analytic reward, outcome reward, structure
//! bonus, length shaping). Every formula is exact 64-bit arithmetic with
//! analytic gradients, so the whole pipeline is testable against
//! finite-difference and brute-force oracles.

pub mod cold_start;
pub mod config;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod policy;
pub mod reward;
pub mod rollout;
pub mod tagged;
pub mod task;
pub mod theory;
pub mod trace;
pub mod vocab;

pub use error::{CoreError, Result};
pub use policy::{PolicySnapshot, PolicyTable, SamplingParams, SnapshotRole, TokenDistribution};
pub use tagged::{parse_tagged, TaggedResponse};
pub use task::{generate_task, oracle_plan_and_cot, verify, DomainConfig, Op, Task};
pub use vocab::{TokenId, Vocab};
