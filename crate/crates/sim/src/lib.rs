//! The sender's optimization game: exact values, normalized strategies, and an
//! exhaustive oracle for tiny instances.

pub mod brute;
pub mod game;
pub mod instance;
pub mod theorems;

pub use brute::{brute_force_optimum, BruteResult, EpochPlan};
pub use game::{
    evaluate_strategy, optimal_value, rew_tilde, GameEnv, ScriptArchetype, SimError,
    StrategyProfile,
};
pub use instance::{random_tiny, Instance, TinySpec};
pub use theorems::{
    check_bounded_optimality, check_normalized_optimality, check_upper_bounded_optimality,
    BoundedReport, NormalizedReport,
};
