//! Counterfactual states, intervened rewards and the augmentation tuple.
//!
//! Every operation here works on branches of the environment, so the factual
//! rollout never observes that a counterfactual was computed.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::estimator::EstimatorConfig;
use crate::agents::{ActorCriticAgent, AgentConfig, ReplayBuffer, Variant};
use crate::error::{Error, Result};
use crate::mdp::{ActionVec, Environment, StateVec, Transition};
use crate::nn::Metadata;

#[derive(Debug, Clone, PartialEq)]
pub struct MacsConfig {
    /// Keeps the inverse-divergence bonus finite; the bonus never exceeds `1 / eps`.
    pub eps: f64,
    /// Weight on the environment reward in the shaped reward.
    pub lambda_base: f64,
    /// `None` derives the threshold from the environment (see [`MacsConfig::thresholds`]).
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    /// Episode cap for one round of counterfactual-policy training.
    pub max_cf_episodes: usize,
    /// Discount used by the counterfactual learner. Its action never changes
    /// the factual trajectory, so the choice does not move its optimum.
    pub cf_gamma: f64,
    /// Episodes in the running averages that gate the thresholds.
    pub avg_window: usize,
    /// Evaluation episodes used to qualify an expert.
    pub qualify_episodes: usize,
    pub estimator: EstimatorConfig,
}

impl Default for MacsConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            lambda_base: 1.0,
            eps1: None,
            eps2: None,
            delta1: None,
            delta2: None,
            max_cf_episodes: 200,
            cf_gamma: 0.0,
            avg_window: 10,
            qualify_episodes: 10,
            estimator: EstimatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub eps1: f64,
    pub eps2: f64,
    pub delta1: f64,
    pub delta2: f64,
}

impl Thresholds {
    /// Raises both thresholds after a completed counterfactual round.
    pub fn raise(&mut self) {
        self.eps1 += self.delta1;
        self.eps2 += self.delta2;
    }
}

impl MacsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("macs eps must be positive"));
        }
        if !self.lambda_base.is_finite() {
            return Err(Error::config("lambda_base must be finite"));
        }
        for (name, d) in [("delta1", self.delta1), ("delta2", self.delta2)] {
            if let Some(d) = d {
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(Error::config(format!("{name} must be finite and non-negative")));
                }
            }
        }
        if self.avg_window == 0 || self.qualify_episodes == 0 {
            return Err(Error::config("averaging windows must be positive"));
        }
        if !(0.0..=1.0).contains(&self.cf_gamma) {
            return Err(Error::config("cf_gamma outside [0, 1]"));
        }
        Ok(())
    }

    /// Upper bound of the shaped return over one episode.
    pub fn shaped_cap(&self, horizon: usize, reward_max: f64) -> f64 {
        horizon as f64 * (self.lambda_base.max(0.0) * reward_max + 1.0 / self.eps)
    }

    /// Gating thresholds: unset values default to 50% of the best episode
    /// return (`eps1`) and 60% of the shaped-return cap (`eps2`), with
    /// increments of 5% of the same scales.
    pub fn thresholds(&self, max_return: f64, shaped_cap: f64) -> Thresholds {
        Thresholds {
            eps1: self.eps1.unwrap_or(0.5 * max_return),
            eps2: self.eps2.unwrap_or(0.6 * shaped_cap),
            delta1: self.delta1.unwrap_or(0.05 * max_return),
            delta2: self.delta2.unwrap_or(0.05 * shaped_cap),
        }
    }
}

/// `lambda * base + 1 / (kl + eps)`.
pub fn shaped_reward(base: f64, kl: f64, cfg: &MacsConfig) -> f64 {
    cfg.lambda_base * base + 1.0 / (kl + cfg.eps)
}

/// Shaped reward with the bonus withheld until the divergence is available.
pub fn shaped_reward_opt(base: f64, kl: Option<f64>, cfg: &MacsConfig) -> f64 {
    match kl {
        Some(k) => shaped_reward(base, k, cfg),
        None => cfg.lambda_base * base,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfMode {
    Expert,
    Joint,
}

impl CfMode {
    fn tag(self) -> &'static str {
        match self {
            CfMode::Expert => "macs-expert",
            CfMode::Joint => "macs-joint",
        }
    }
}

/// The counterfactual synthesis policy and its private learning state.
#[derive(Debug, Clone)]
pub struct CounterfactualPolicy {
    pub agent: ActorCriticAgent,
    pub mode: CfMode,
    pub(crate) buffer: ReplayBuffer,
    pub(crate) rng: ChaCha8Rng,
    frozen: bool,
    converged: bool,
    episodes_trained: u64,
}

impl CounterfactualPolicy {
    pub fn new(
        variant: Variant,
        agent_cfg: &AgentConfig,
        macs: &MacsConfig,
        state_dim: usize,
        action_dim: usize,
        mode: CfMode,
        seed: u64,
    ) -> Result<Self> {
        let cfg = AgentConfig {
            gamma: macs.cf_gamma,
            ..agent_cfg.clone()
        };
        let buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
        let agent = ActorCriticAgent::new(variant, cfg, state_dim, action_dim, seed)?;
        Ok(Self {
            agent,
            mode,
            buffer,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xcf00_cf00),
            frozen: false,
            converged: false,
            episodes_trained: 0,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.agent.action_dim()
    }

    /// The synthesis action at `state`, without exploration.
    pub fn propose(&self, state: &[f64]) -> Result<ActionVec> {
        self.agent.act(state)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub(crate) fn set_converged(&mut self, c: bool) {
        self.converged = c;
    }

    pub fn episodes_trained(&self) -> u64 {
        self.episodes_trained
    }

    pub(crate) fn add_episode(&mut self) {
        self.episodes_trained += 1;
    }

    pub fn save<W: Write>(&self, meta: &Metadata, sink: W) -> Result<()> {
        let m = Metadata {
            tag: self.mode.tag().to_string(),
            ..meta.clone()
        };
        self.agent.save(&m, sink)
    }

    /// Restores a frozen policy written by [`save`](Self::save).
    pub fn load<R: Read>(
        variant: Variant,
        agent_cfg: &AgentConfig,
        macs: &MacsConfig,
        source: R,
        seed: u64,
    ) -> Result<Self> {
        let mut bytes = Vec::new();
        let mut source = source;
        source.read_to_end(&mut bytes)?;
        let sections = crate::nn::load_sections(&bytes[..])?;
        let mode = match sections.first().map(|c| c.meta.tag.split('/').next().unwrap_or("")) {
            Some("macs-expert") => CfMode::Expert,
            Some("macs-joint") => CfMode::Joint,
            _ => {
                return Err(Error::CorruptCheckpoint(
                    "not a counterfactual policy checkpoint".into(),
                ))
            }
        };
        let cfg = AgentConfig {
            gamma: macs.cf_gamma,
            ..agent_cfg.clone()
        };
        let agent = ActorCriticAgent::load(variant, cfg.clone(), &bytes[..], seed)?;
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            agent,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xcf00_cf00),
            frozen: true,
            converged: true,
            episodes_trained: 0,
        })
    }
}

/// The state a branch of `env` reaches when stepped with `a_c`.
pub fn counterfactual_state<E: Environment>(env: &E, a_c: &[f64]) -> Result<StateVec> {
    let mut branch = env.branch();
    Ok(branch.step(a_c)?.next_state)
}

/// Proposes `a_c` at `s_t` and steps a branch with it. `env` must be at `s_t`.
pub fn synthesize_counterfactual<E: Environment>(
    env: &E,
    s_t: &[f64],
    policy: &CounterfactualPolicy,
) -> Result<(ActionVec, StateVec)> {
    if policy.action_dim() != env.action_dim() {
        return Err(Error::dim(env.action_dim(), policy.action_dim()));
    }
    if *env.state() != *s_t {
        return Err(Error::StateMismatch);
    }
    let a_c = policy.propose(s_t)?;
    let s_c = counterfactual_state(env, &a_c)?;
    Ok((a_c, s_c))
}

/// Reward of action `a` on a branch of `env` forced into state `s_c`.
pub fn intervened_reward<E: Environment>(env: &E, s_c: &[f64], a: &[f64]) -> Result<f64> {
    let mut branch = env.branch();
    branch.force_state(s_c)?;
    Ok(branch.step(a)?.reward)
}

/// A counterfactual computed before the factual step it accompanies.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualSample {
    pub a_c: ActionVec,
    pub s_c: StateVec,
    pub r_c: f64,
}

impl CounterfactualSample {
    /// `(s_c, a_t, s_next, r_c)`.
    pub fn into_transition(self, a_t: ActionVec, s_next: StateVec, terminal: bool) -> Result<Transition> {
        Transition::new(self.s_c, a_t, s_next, self.r_c, terminal)
    }
}

pub fn counterfactual_sample<E: Environment>(
    env: &E,
    s_t: &[f64],
    a_t: &[f64],
    policy: &CounterfactualPolicy,
) -> Result<CounterfactualSample> {
    let (a_c, s_c) = synthesize_counterfactual(env, s_t, policy)?;
    let r_c = intervened_reward(env, &s_c, a_t)?;
    Ok(CounterfactualSample { a_c, s_c, r_c })
}

/// The augmentation tuple for a factual step `(s_t, a_t) -> s_next`. `env`
/// must still be at `s_t`, i.e. a copy taken before the factual step.
pub fn augment_step<E: Environment>(
    env: &E,
    s_t: &[f64],
    a_t: &ActionVec,
    s_next: &StateVec,
    terminal: bool,
    policy: &CounterfactualPolicy,
) -> Result<Transition> {
    counterfactual_sample(env, s_t, a_t, policy)?.into_transition(a_t.clone(), s_next.clone(), terminal)
}

/// Copy of `t` with each state element zeroed independently with probability `p`.
pub fn random_mask_augment<R: Rng + ?Sized>(t: &Transition, p: f64, rng: &mut R) -> Result<Transition> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("mask probability {p} outside [0, 1]")));
    }
    let state: Vec<f64> = t
        .state
        .iter()
        .map(|&v| if rng.random::<f64>() < p { 0.0 } else { v })
        .collect();
    Transition::new(
        StateVec::new(state)?,
        t.action.clone(),
        t.next_state.clone(),
        t.reward,
        t.terminal,
    )
}

/// Root-mean-square change of `s_c` against `s` over the essential and the
/// trivial index sets. An empty set scores 0.
pub fn essential_preservation_score(
    essential: &[usize],
    trivial: &[usize],
    s: &[f64],
    s_c: &[f64],
) -> Result<(f64, f64)> {
    if s.len() != s_c.len() {
        return Err(Error::dim(s.len(), s_c.len()));
    }
    let rms = |idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for &i in idx {
            if i >= s.len() {
                return Err(Error::dim(s.len(), i + 1));
            }
            acc += (s[i] - s_c[i]).powi(2);
        }
        Ok((acc / idx.len() as f64).sqrt())
    };
    Ok((rms(essential)?, rms(trivial)?))
}
