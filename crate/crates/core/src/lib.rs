//! Rollout-efficient RL with verifiable rewards on tabular softmax policies.
//!
//! Exact-match tasks, GRPO and DoPR trainers, an instance selector and a
//! convergence-bound checker for toy PL objectives.

pub mod error;
pub mod experiment;
pub mod grpo;
pub mod policy;
pub mod rng;
pub mod selector;
pub mod tasks;
mod textfmt;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use grpo::GrpoConfig;
pub use policy::{PolicyInit, PolicyParams, RolloutRecord};
pub use selector::{SelectorConfig, SelectorVariant};
pub use tasks::{generate_dataset, Dataset, Instance, TaskSpec, TokenId};
pub use trainer::{run, Algo, TrainConfig};
