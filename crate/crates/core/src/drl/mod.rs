//! Layer-sequential DDPG search over per-layer protection actions.

mod agent;
mod replay;
mod state;
mod train;

pub use agent::{
    act, actor_update, critic_update, q_value, Agent, AgentConfig, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use replay::{ReplayBuffer, Transition};
pub use state::{quantize_bitmask, quantize_topbits, Action, ActionMode, StateEncoder};
pub use train::{
    run_optimization, AccuracyReward, Candidate, DrlConfig, Feedback, LogRow, OptimizationResult,
    Problem, RewardSource,
};
