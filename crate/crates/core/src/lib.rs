//! Auxiliary-data selection for few-shot training, cast as a multi-armed bandit.
//!
//! Each auxiliary dataset is an arm. A learner (EXP3 or UCB1) picks which
//! dataset to draw the next micro-batch from, and is rewarded with a signal
//! computed from how the auxiliary gradient relates to the target gradient.
//!
//! Modules, bottom-up:
//! - [`rewards`]: gradient alignment, magnitude similarity and their aggregate.
//! - [`policies`]: EXP3 and UCB1 learner state, plus static mixture samplers.
//! - [`model`]: a two-layer tanh classifier with hand-derived gradients.
//! - [`tasks`]: synthetic target/auxiliary task suites with controlled relatedness.
//! - [`harness`]: the training loops for the bandit methods and every baseline.
//! - [`cli`]: experiment plans, seeded sweeps and metric files.

pub mod cli;
pub mod error;
pub mod harness;
pub mod model;
pub mod policies;
pub mod rewards;
pub mod seed;
pub mod tasks;

pub use error::{FladError, Result};
