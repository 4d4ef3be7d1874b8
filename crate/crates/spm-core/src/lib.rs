//! Real-time stability-penalty-matching bandit learners, the environments
//! they are evaluated on, and numerical verifiers for the stability bounds
//! that drive their learning-rate updates.
//!
//! Layout:
//! - [`simplex`]: the per-round FTRL subproblem solver on the simplex.
//! - [`reservoir`]: uniform loss-history sampling for optimistic predictions.
//! - [`env`]: loss generators, including lower-bound instances.
//! - [`learner`]: the four bandit algorithms and their shared update rules.
//! - [`checks`]: independent oracles for the stability and regret lemmas.
//! - [`harness`]: experiment runner, regret accounting, serialization.

pub mod checks;
pub mod env;
pub mod harness;
pub mod learner;
pub mod reservoir;
pub mod simplex;
