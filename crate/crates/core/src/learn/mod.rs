//! Rewards and trainers for the help policy (and the learned agent).

pub mod bc;
pub mod gae;
pub mod help_ppo;
pub mod label;
pub mod ppo;
pub mod reward;

pub use bc::{bc_train, BcConfig, ClassWeight, Label, LabeledSample};
pub use gae::{compute_gae, normalize_advantages};
pub use help_ppo::{ppo_train, EpisodeSource, HelpGateEnv, SuiteSource, TrainingLogEntry};
pub use label::label_demonstration;
pub use ppo::PpoConfig;
pub use reward::{help_reward, total_reward, HelpRewardAccumulator, RewardConfig};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("no steps were taken")]
    ZeroSteps,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has no ASK labels to weight")]
    NoPositiveLabels,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("training diverged: non-finite {0}")]
    DivergedTraining(&'static str),
    #[error("agent weights changed during help-policy training")]
    FrozenViolation,
    #[error("agent must be frozen before help-policy training")]
    AgentNotFrozen,
    #[error("malformed trace: {0}")]
    MalformedTrace(alloc::string::String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}
