use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Ddpg,
    Sac,
    Td3,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Ddpg, Variant::Sac, Variant::Td3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ddpg => "ddpg",
            Variant::Sac => "sac",
            Variant::Td3 => "td3",
        }
    }

    pub fn n_critics(self) -> usize {
        match self {
            Variant::Ddpg => 1,
            Variant::Sac | Variant::Td3 => 2,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ddpg" => Ok(Variant::Ddpg),
            "sac" => Ok(Variant::Sac),
            "td3" => Ok(Variant::Td3),
            other => Err(Error::config(format!("unsupported variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub sigma_explore: f64,
    /// SAC entropy coefficient.
    pub alpha: f64,
    pub policy_delay: usize,
    pub target_noise: f64,
    pub noise_clip: f64,
    /// Exploring steps answered with uniform random actions before the actor
    /// takes over.
    pub warmup_steps: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 64,
            buffer_capacity: 100_000,
            hidden: 128,
            hidden_layers: 2,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            sigma_explore: 0.1,
            alpha: 0.2,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            warmup_steps: 0,
        }
    }
}

impl AgentConfig {
    /// Defaults, with the uniform warm-up switched on for TD3 only.
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            warmup_steps: if variant == Variant::Td3 { 500 } else { 0 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("tau", self.tau)?;
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(Error::config("batch_size must be in 1..=buffer_capacity"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        if self.policy_delay == 0 {
            return Err(Error::config("policy_delay must be positive"));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("sigma_explore", self.sigma_explore),
            ("alpha", self.alpha),
            ("target_noise", self.target_noise),
            ("noise_clip", self.noise_clip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub(crate) fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(self.hidden, self.hidden_layers));
        sizes.push(output);
        sizes
    }
}
