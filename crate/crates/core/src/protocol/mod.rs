//! The blockwise reaching protocol.
//!
//! A session has `rounds` rounds; each round visits every perturbation level
//! once as a block, and a block ends after `successes_per_block` successful
//! reaches. Robot actions for a block are drawn up front from the block's
//! seed, one per trial, failed trials included.

mod agent;
mod config;
mod force;
mod log;
mod sim;

pub use agent::{AgentKind, AgentSpec};
pub use config::{Order, ProtocolConfig};
pub use force::{calibrate_disturbance, classify_action, synthesize_force_trace, ForceTrace};
pub use log::{parse_jsonl, LogLine};
pub use sim::{
    block_seed, generate_ra_sequence, outcome, simulate_block, simulate_session, BlockSeed, SessionLog, TrialRecord,
};
