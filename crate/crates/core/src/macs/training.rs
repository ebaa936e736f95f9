//! Counterfactual-policy training and the augmented recommendation loop.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::estimator::{RewardDistEstimator, Window};
use super::synthesis::{
    counterfactual_sample, counterfactual_state, intervened_reward, random_mask_augment, shaped_reward_opt, CfMode,
    CounterfactualPolicy, MacsConfig, Thresholds,
};
use crate::agents::{ActorCriticAgent, AgentConfig, Policy, ReplayBuffer, UpdateStats, Variant};
use crate::error::{Error, Result};
use crate::mdp::{derive_seed, run_episode, ActionVec, Environment, Transition};

// Seed streams, so that no two consumers share a generator.
const STREAM_EPISODE: u64 = 1;
const STREAM_QUALIFY: u64 = 2;
const STREAM_CF: u64 = 3;
const STREAM_AUX: u64 = 4;
const STREAM_AGENT: u64 = 5;
const STREAM_CF_AGENT: u64 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct CfTrainReport {
    pub episodes: usize,
    /// Shaped return of every training episode.
    pub shaped_returns: Vec<f64>,
    /// Running average over the last `avg_window` episodes at the end.
    pub final_avg: f64,
    pub converged: bool,
    pub final_kl: Option<f64>,
}

/// Trains `policy` against `expert` on `env` until the running average of
/// the shaped episode return reaches `eps2` or the episode cap is hit.
///
/// Each step the expert acts at `s_t` and its reward enters the observational
/// window. The policy proposes `a_c`; a branch stepped with `a_c` gives `s_c`,
/// and the expert's same action on a branch forced to `s_c` gives the
/// intervened reward, which enters the other window and, shaped, is the
/// policy's training reward.
pub fn train_cf_policy<E, P>(
    expert: P,
    env: &mut E,
    policy: &mut CounterfactualPolicy,
    cfg: &MacsConfig,
    eps2: f64,
    max_steps: usize,
    seed: u64,
) -> Result<CfTrainReport>
where
    E: Environment,
    P: Fn(&[f64]) -> Result<ActionVec>,
{
    if policy.action_dim() != env.action_dim() || policy.agent.state_dim() != env.state_dim() {
        return Err(Error::dim(env.action_dim(), policy.action_dim()));
    }
    policy.unfreeze();
    let (lo, hi) = env.reward_range();
    let mut est = RewardDistEstimator::new(cfg.estimator.clone(), lo, hi)?;
    let batch = policy.agent.config().batch_size;
    let mut recent = VecDeque::with_capacity(cfg.avg_window);
    let mut returns = Vec::new();
    let mut converged = false;
    let mut kl = None;
    for e in 0..cfg.max_cf_episodes {
        let mut s = env.reset(derive_seed(seed, STREAM_CF, e as u64));
        let mut ret = 0.0;
        for _ in 0..max_steps {
            let a_t = expert(&s)?;
            let a_c = policy.agent.select_action(&s, true, &mut policy.rng)?;
            let s_c = counterfactual_state(env, &a_c)?;
            let r_i = intervened_reward(env, &s_c, &a_t)?;
            let out = env.step(&a_t)?;
            est.record(Window::Observational, out.reward)?;
            est.record(Window::Intervened, r_i)?;
            kl = est.divergence()?;
            let shaped = shaped_reward_opt(r_i, kl, cfg);
            ret += shaped;
            policy
                .buffer
                .push(Transition::new(s, a_c, out.next_state.clone(), shaped, out.terminal)?)?;
            if policy.buffer.len() >= batch {
                let b = policy.buffer.sample_batch(batch, &mut policy.rng)?;
                policy.agent.update(&b)?;
            }
            s = out.next_state;
            if out.terminal {
                break;
            }
        }
        policy.add_episode();
        returns.push(ret);
        if recent.len() == cfg.avg_window {
            recent.pop_front();
        }
        recent.push_back(ret);
        if recent.len() == cfg.avg_window && mean(&recent) >= eps2 {
            converged = true;
            break;
        }
    }
    policy.set_converged(converged);
    policy.freeze();
    Ok(CfTrainReport {
        episodes: returns.len(),
        final_avg: if recent.is_empty() { 0.0 } else { mean(&recent) },
        shaped_returns: returns,
        converged,
        final_kl: kl,
    })
}

fn mean(v: &VecDeque<f64>) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Average undiscounted return of a deterministic policy over `episodes`
/// seeded episodes.
pub fn average_return<E, P>(env: &mut E, policy: P, episodes: usize, max_steps: usize, seed: u64) -> Result<f64>
where
    E: Environment,
    P: Fn(&[f64]) -> Result<ActionVec>,
{
    let mut total = 0.0;
    for k in 0..episodes {
        total += run_episode(env, seed.wrapping_add(k as u64), |s| policy(s), max_steps)?.total_reward();
    }
    Ok(total / episodes.max(1) as f64)
}

/// Counterfactual-policy training from a frozen expert.
///
/// The expert must first average at least `eps1` over the qualification
/// episodes. The returned policy is frozen; it is flagged unconverged when the
/// episode cap ran out before the shaped return reached `eps2`.
pub fn train_macs_expert<E: Environment>(
    expert: &Policy,
    env: &E,
    variant: Variant,
    agent_cfg: &AgentConfig,
    cfg: &MacsConfig,
    max_steps: usize,
    seed: u64,
) -> Result<(CounterfactualPolicy, CfTrainReport)> {
    cfg.validate()?;
    let mut env = env.branch();
    let hi = env.reward_range().1;
    let th = cfg.thresholds(max_steps as f64 * hi, cfg.shaped_cap(max_steps, hi));
    let achieved = average_return(
        &mut env,
        |s| expert.act(s),
        cfg.qualify_episodes,
        max_steps,
        derive_seed(seed, STREAM_QUALIFY, 0),
    )?;
    if achieved < th.eps1 {
        return Err(Error::ExpertTooWeak {
            achieved,
            required: th.eps1,
        });
    }
    let mut policy = CounterfactualPolicy::new(
        variant,
        agent_cfg,
        cfg,
        env.state_dim(),
        env.action_dim(),
        CfMode::Expert,
        derive_seed(seed, STREAM_CF_AGENT, 0),
    )?;
    let report = train_cf_policy(|s| expert.act(s), &mut env, &mut policy, cfg, th.eps2, max_steps, seed)?;
    Ok((policy, report))
}

/// How the recommendation learner's replay buffer is supplemented.
#[derive(Debug, Clone)]
pub enum Augmentation {
    Off,
    /// A masked copy of each factual transition.
    RandomMask {
        prob: f64,
    },
    /// Counterfactuals from a policy trained beforehand.
    Expert(Box<CounterfactualPolicy>),
    /// Counterfactual policy trained on the fly from snapshots of the learner.
    /// Augmentation starts once the first training round has finished.
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub episode: u64,
    /// Environment steps taken so far, this episode included.
    pub steps: u64,
    pub ret: f64,
    pub mean_reward: f64,
    /// Augmented transitions stored so far.
    pub aug_count: u64,
    pub kl: Option<f64>,
    pub thresholds: Option<Thresholds>,
    /// Report of a counterfactual-policy round triggered after this episode.
    pub cf_round: Option<CfTrainReport>,
    pub last_update: Option<UpdateStats>,
}

/// One seeded training run of a recommendation learner, with optional
/// augmentation. Every random consumer draws from its own stream, so turning
/// augmentation on never changes what the factual loop draws.
#[derive(Debug, Clone)]
pub struct TrainingRun<E: Environment> {
    env: E,
    agent: ActorCriticAgent,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    aux_rng: ChaCha8Rng,
    mode: Augmentation,
    cf: Option<CounterfactualPolicy>,
    thresholds: Option<Thresholds>,
    agent_cfg: AgentConfig,
    macs: MacsConfig,
    variant: Variant,
    seed: u64,
    max_steps: usize,
    episode: u64,
    steps: u64,
    recent: VecDeque<f64>,
    aug_count: u64,
    cf_rounds: u64,
    live: Option<RewardDistEstimator>,
    learning: bool,
    log: Option<Vec<Transition>>,
}

impl<E: Environment> TrainingRun<E> {
    pub fn new(
        env: E,
        variant: Variant,
        agent_cfg: AgentConfig,
        macs: MacsConfig,
        mode: Augmentation,
        max_steps: usize,
        seed: u64,
    ) -> Result<Self> {
        macs.validate()?;
        let agent = ActorCriticAgent::new(
            variant,
            agent_cfg.clone(),
            env.state_dim(),
            env.action_dim(),
            derive_seed(seed, STREAM_AGENT, 0),
        )?;
        let (lo, hi) = env.reward_range();
        let mut thresholds = None;
        let mut cf = None;
        let mut live = None;
        match &mode {
            Augmentation::Off => {}
            Augmentation::RandomMask { prob } => {
                if !(0.0..=1.0).contains(prob) {
                    return Err(Error::config(format!("mask probability {prob} outside [0, 1]")));
                }
            }
            Augmentation::Expert(p) => {
                if p.action_dim() != env.action_dim() || p.agent.state_dim() != env.state_dim() {
                    return Err(Error::dim(env.state_dim(), p.agent.state_dim()));
                }
                let mut p = p.as_ref().clone();
                p.freeze();
                cf = Some(p);
                live = Some(RewardDistEstimator::new(macs.estimator.clone(), lo, hi)?);
            }
            Augmentation::Joint => {
                let th = macs.thresholds(max_steps as f64 * hi, macs.shaped_cap(max_steps, hi));
                thresholds = Some(th);
                live = Some(RewardDistEstimator::new(macs.estimator.clone(), lo, hi)?);
            }
        }
        Ok(Self {
            buffer: ReplayBuffer::new(agent_cfg.buffer_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_EPISODE, u64::MAX)),
            aux_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_AUX, 0)),
            env,
            agent,
            mode,
            cf,
            thresholds,
            agent_cfg,
            macs,
            variant,
            seed,
            max_steps,
            episode: 0,
            steps: 0,
            recent: VecDeque::new(),
            aug_count: 0,
            cf_rounds: 0,
            live,
            learning: true,
            log: None,
        })
    }

    /// Overrides the derived joint-training thresholds.
    pub fn set_thresholds(&mut self, th: Thresholds) {
        if matches!(self.mode, Augmentation::Joint) {
            self.thresholds = Some(th);
        }
    }

    /// With learning off the agent acts but is never updated.
    pub fn set_learning(&mut self, on: bool) {
        self.learning = on;
    }

    /// Starts recording every factual transition.
    pub fn record_factual(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn factual_log(&self) -> Option<&[Transition]> {
        self.log.as_deref()
    }

    pub fn agent(&self) -> &ActorCriticAgent {
        &self.agent
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn cf_policy(&self) -> Option<&CounterfactualPolicy> {
        self.cf.as_ref()
    }

    pub fn thresholds(&self) -> Option<Thresholds> {
        self.thresholds
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn aug_count(&self) -> u64 {
        self.aug_count
    }

    pub fn cf_rounds(&self) -> u64 {
        self.cf_rounds
    }

    pub fn episodes_done(&self) -> u64 {
        self.episode
    }

    pub fn total_steps(&self) -> u64 {
        self.steps
    }

    /// Seed of the environment reset for training episode `k` (zero-based).
    pub fn episode_seed(&self, k: u64) -> u64 {
        derive_seed(self.seed, STREAM_EPISODE, k)
    }

    pub fn run_episode(&mut self) -> Result<EpisodeSummary> {
        let mut s = self.env.reset(self.episode_seed(self.episode));
        let batch = self.agent_cfg.batch_size;
        let mut ret = 0.0;
        let mut n = 0usize;
        let mut last_update = None;
        for _ in 0..self.max_steps {
            let a = self.agent.select_action(&s, true, &mut self.rng)?;
            let cf_sample = match &self.cf {
                Some(p) => Some(counterfactual_sample(&self.env, &s, &a, p)?),
                None => None,
            };
            let out = self.env.step(&a)?;
            let factual = Transition::new(s, a.clone(), out.next_state.clone(), out.reward, out.terminal)?;
            let extra = match (&self.mode, cf_sample) {
                (Augmentation::RandomMask { prob }, _) => {
                    Some(random_mask_augment(&factual, *prob, &mut self.aux_rng)?)
                }
                (_, Some(sample)) => {
                    if let Some(est) = self.live.as_mut() {
                        est.record(Window::Observational, out.reward)?;
                        est.record(Window::Intervened, sample.r_c)?;
                    }
                    Some(sample.into_transition(a, out.next_state.clone(), out.terminal)?)
                }
                _ => None,
            };
            if let Some(log) = self.log.as_mut() {
                log.push(factual.clone());
            }
            self.buffer.push(factual)?;
            if let Some(t) = extra {
                self.buffer.push(t)?;
                self.aug_count += 1;
            }
            if self.learning && self.buffer.len() >= batch {
                let b = self.buffer.sample_batch(batch, &mut self.rng)?;
                last_update = Some(self.agent.update(&b)?);
            }
            ret += out.reward;
            n += 1;
            self.steps += 1;
            s = out.next_state;
            if out.terminal {
                break;
            }
        }
        self.episode += 1;
        if self.recent.len() == self.macs.avg_window {
            self.recent.pop_front();
        }
        self.recent.push_back(ret);

        let mut cf_round = None;
        if let (Augmentation::Joint, Some(th)) = (&self.mode, self.thresholds) {
            if self.recent.len() == self.macs.avg_window && mean(&self.recent) > th.eps1 {
                cf_round = Some(self.run_cf_round(th)?);
            }
        }
        let kl = match &self.live {
            Some(est) => est.divergence()?,
            None => None,
        };
        Ok(EpisodeSummary {
            episode: self.episode,
            steps: self.steps,
            ret,
            mean_reward: if n > 0 { ret / n as f64 } else { 0.0 },
            aug_count: self.aug_count,
            kl,
            thresholds: self.thresholds,
            cf_round,
            last_update,
        })
    }

    /// Stage two: the learner's current actor plays the expert while the
    /// counterfactual policy trains on a separate copy of the environment.
    fn run_cf_round(&mut self, th: Thresholds) -> Result<CfTrainReport> {
        let expert = self.agent.policy();
        if self.cf.is_none() {
            self.cf = Some(CounterfactualPolicy::new(
                self.variant,
                &self.agent_cfg,
                &self.macs,
                self.env.state_dim(),
                self.env.action_dim(),
                CfMode::Joint,
                derive_seed(self.seed, STREAM_CF_AGENT, 0),
            )?);
        }
        let policy = self.cf.as_mut().unwrap();
        let mut cf_env = self.env.branch();
        let report = train_cf_policy(
            |s| expert.act(s),
            &mut cf_env,
            policy,
            &self.macs,
            th.eps2,
            self.max_steps,
            derive_seed(self.seed, STREAM_CF, 1 + self.cf_rounds),
        )?;
        self.cf_rounds += 1;
        if let Some(t) = self.thresholds.as_mut() {
            t.raise();
        }
        Ok(report)
    }
}
