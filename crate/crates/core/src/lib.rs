//! Metacognitive test-time reasoning on toy games.
//!
//! An agent plays one of four grid games. A meta-level loop periodically
//! distills the recent trajectory into a bounded list of natural-language
//! rules; an action-level loop replays recent states, votes on a pseudo
//! label per state, and updates its policy with a clipped group-relative
//! policy gradient.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod backend;
pub mod config;
pub mod env;
pub mod error;
pub mod mctrl;
pub mod memory;
pub mod metareason;
pub mod policy;
pub mod protocol;
pub mod scheduler;
pub mod stats;
pub mod sweep;

pub use agent::{run, run_in_dir, Agent, RunOptions, RunReport};
pub use config::{Ablation, RunConfig};
pub use env::{ActionId, GameId, GameSpec, GameState};
pub use error::{Error, Result};
pub use memory::{KnowledgeMemory, TrajectoryMemory, TrajectoryStep};
pub use protocol::{MemoryOp, ParseError};
pub use scheduler::SchedulerState;
