//! Replay storage and the three actor-critic learners.

mod actor_critic;
mod buffer;
mod config;

pub use actor_critic::{
    log_one_minus_tanh_sq, squashed_density, squashed_log_prob, target_policy_noise, ActorCriticAgent, Policy,
    UpdateStats, LOG_STD_MAX, LOG_STD_MIN,
};
pub use buffer::{Batch, ReplayBuffer};
pub use config::{AgentConfig, Variant};
