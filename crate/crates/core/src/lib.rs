//! Difficulty-adaptive length rewards for GRPO-trained reasoning models.
//!
//! The reward, difficulty and optimizer math is generic over [`scalar::Real`];
//! the aliases below fix it to `f64`, which is what the simulator and the CLI
//! use.

pub mod annotate;
pub mod cli;
pub mod config;
pub mod difficulty;
pub mod grpo;
pub mod label;
pub mod reward;
pub mod scalar;
pub mod sim;
pub mod train;

pub use label::DifficultyLabel;
pub use scalar::Real;

pub type RolloutSample = reward::RolloutSample<f64>;
pub type RewardConfig = reward::RewardConfig<f64>;
pub type RewardStack = reward::RewardStack<f64>;
pub type DifficultyScore = reward::DifficultyScore<f64>;
pub type RolloutGroup = difficulty::RolloutGroup<f64>;
pub type AttentionSnapshot = difficulty::AttentionSnapshot<f64>;
pub type DifficultyBatch = difficulty::DifficultyBatch<f64>;
pub type GrpoConfig = grpo::GrpoConfig<f64>;
pub type AdvantageSet = grpo::AdvantageSet<f64>;
pub type StepReport = grpo::StepReport<f64, sim::PolicyState>;
