pub mod agents;
pub mod envs;
pub mod error;
pub mod harness;
pub mod macs;
pub mod mdp;
pub mod nn;

pub use error::{Error, Result};
