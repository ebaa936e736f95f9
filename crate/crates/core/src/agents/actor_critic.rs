//! DDPG, SAC and TD3 behind one agent type.
//!
//! Critics take `[state | action]` and return a scalar. DDPG and TD3 actors
//! end in tanh; the SAC actor emits `[mean | log_std]` for a tanh-squashed
//! Gaussian.

use std::f64::consts::{LN_2, PI};
use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::buffer::Batch;
use super::config::{AgentConfig, Variant};
use crate::error::{Error, Result};
use crate::mdp::ActionVec;
use crate::nn::{load_sections, polyak_update, save_checkpoint, Activation, AdamState, DenseNet, Metadata};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `ln(1 - tanh(u)^2)`, stable for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Log-density of the squashed sample `tanh(u)` where `u = mu + exp(log_std) * eps`.
pub fn squashed_log_prob(eps: f64, u: f64, log_std: f64) -> f64 {
    -0.5 * eps * eps - log_std - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh_sq(u)
}

/// Density of `a = tanh(mu + sigma * N(0, 1))` at `a` in (-1, 1).
pub fn squashed_density(a: f64, mu: f64, log_std: f64) -> f64 {
    let u = a.atanh();
    let eps = (u - mu) / log_std.exp();
    squashed_log_prob(eps, u, log_std).exp()
}

/// Gaussian target-policy noise, clipped elementwise to `[-clip, clip]`.
pub fn target_policy_noise<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    sigma: f64,
    clip: f64,
) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = rng.sample(StandardNormal);
        (sigma * z).clamp(-clip, clip)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// `None` on TD3 calls that skip the delayed actor step.
    pub actor_loss: Option<f64>,
    /// SAC only: minus the mean log-probability of the actor's samples.
    pub entropy: Option<f64>,
}

/// A frozen deterministic policy: the actor of a trained agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub variant: Variant,
    pub actor: DenseNet,
}

impl Policy {
    pub fn act(&self, state: &[f64]) -> Result<ActionVec> {
        deterministic_action(self.variant, &self.actor, state)
    }
}

fn deterministic_action(variant: Variant, actor: &DenseNet, state: &[f64]) -> Result<ActionVec> {
    let out = actor.forward(state)?;
    Ok(match variant {
        Variant::Ddpg | Variant::Td3 => ActionVec::clamped(out),
        Variant::Sac => {
            let a = out.len() / 2;
            ActionVec::clamped(out[..a].iter().map(|m| m.tanh()).collect())
        }
    })
}

struct SquashedSample {
    actions: Array2<f64>,
    log_prob: Vec<f64>,
    eps: Array2<f64>,
    log_std: Array2<f64>,
    clamped: Array2<bool>,
}

#[derive(Debug, Clone)]
pub struct ActorCriticAgent {
    variant: Variant,
    cfg: AgentConfig,
    state_dim: usize,
    action_dim: usize,
    pub actor: DenseNet,
    /// Absent for SAC, which bootstraps through the online actor.
    pub actor_target: Option<DenseNet>,
    pub critics: Vec<DenseNet>,
    pub critic_targets: Vec<DenseNet>,
    actor_opt: AdamState,
    critic_opts: Vec<AdamState>,
    updates: u64,
    explore_steps: u64,
    rng: ChaCha8Rng,
}

impl ActorCriticAgent {
    pub fn new(variant: Variant, cfg: AgentConfig, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::config("state and action dimensions must be positive"));
        }
        let (actor_out, actor_act) = match variant {
            Variant::Sac => (2 * action_dim, Activation::Identity),
            _ => (action_dim, Activation::Tanh),
        };
        let actor = DenseNet::new(&cfg.layer_sizes(state_dim, actor_out), actor_act, seed)?;
        let critic_sizes = cfg.layer_sizes(state_dim + action_dim, 1);
        let critics = (0..variant.n_critics())
            .map(|i| DenseNet::new(&critic_sizes, Activation::Identity, seed.wrapping_add(1 + i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let actor_opt = AdamState::new(actor.num_params(), cfg.actor_lr);
        let critic_opts = critics
            .iter()
            .map(|c| AdamState::new(c.num_params(), cfg.critic_lr))
            .collect();
        Ok(Self {
            variant,
            state_dim,
            action_dim,
            actor_target: (variant != Variant::Sac).then(|| actor.clone()),
            critic_targets: critics.clone(),
            actor,
            critics,
            actor_opt,
            critic_opts,
            updates: 0,
            explore_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xa9e7_0000_0000_0001),
            cfg,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    pub fn policy(&self) -> Policy {
        Policy {
            variant: self.variant,
            actor: self.actor.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.actor.all_finite()
            && self.critics.iter().all(DenseNet::all_finite)
            && self.critic_targets.iter().all(DenseNet::all_finite)
            && self.actor_target.as_ref().is_none_or(DenseNet::all_finite)
    }

    /// Action without exploration noise.
    pub fn act(&self, state: &[f64]) -> Result<ActionVec> {
        deterministic_action(self.variant, &self.actor, state)
    }

    pub fn select_action<R: Rng + ?Sized>(&mut self, state: &[f64], explore: bool, rng: &mut R) -> Result<ActionVec> {
        if state.len() != self.state_dim {
            return Err(Error::dim(self.state_dim, state.len()));
        }
        if !explore {
            return self.act(state);
        }
        self.explore_steps += 1;
        if self.explore_steps <= self.cfg.warmup_steps as u64 {
            return Ok(ActionVec::clamped(
                (0..self.action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            ));
        }
        let out = self.actor.forward(state)?;
        let a = match self.variant {
            Variant::Ddpg | Variant::Td3 => out
                .iter()
                .map(|m| m + self.cfg.sigma_explore * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Variant::Sac => (0..self.action_dim)
                .map(|j| {
                    let ls = out[self.action_dim + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let z: f64 = rng.sample(StandardNormal);
                    (out[j] + ls.exp() * z).tanh()
                })
                .collect(),
        };
        Ok(ActionVec::clamped(a))
    }

    /// One gradient step of the variant's algorithm.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        match self.variant {
            Variant::Ddpg => self.ddpg_update(batch),
            Variant::Sac => self.sac_update(batch),
            Variant::Td3 => self.td3_update(batch),
        }
    }

    fn require(&self, v: Variant) -> Result<()> {
        if self.variant != v {
            return Err(Error::config(format!(
                "{} update called on a {} agent",
                v, self.variant
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InsufficientData {
                needed: 1,
                available: 0,
            });
        }
        if batch.states.ncols() != self.state_dim {
            return Err(Error::dim(self.state_dim, batch.states.ncols()));
        }
        if batch.actions.ncols() != self.action_dim {
            return Err(Error::dim(self.action_dim, batch.actions.ncols()));
        }
        Ok(())
    }

    /// Bellman targets `y` for the batch. Draws target-policy noise (TD3) or
    /// policy samples (SAC) from the agent's generator.
    pub fn critic_targets_for(&mut self, batch: &Batch) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let n = batch.len();
        let next = batch.next_states.view();
        let value: Vec<f64> = match self.variant {
            Variant::Ddpg => {
                let a = self.actor_target.as_ref().unwrap().forward_batch(next)?;
                column(&self.critic_targets[0].forward_batch(concat(next, a.view()).view())?)
            }
            Variant::Td3 => {
                let mut a = self.actor_target.as_ref().unwrap().forward_batch(next)?;
                a += &target_policy_noise(
                    &mut self.rng,
                    n,
                    self.action_dim,
                    self.cfg.target_noise,
                    self.cfg.noise_clip,
                );
                a.mapv_inplace(|v| v.clamp(-1.0, 1.0));
                let x = concat(next, a.view());
                let q1 = column(&self.critic_targets[0].forward_batch(x.view())?);
                let q2 = column(&self.critic_targets[1].forward_batch(x.view())?);
                q1.iter().zip(&q2).map(|(a, b)| a.min(*b)).collect()
            }
            Variant::Sac => {
                let out = self.actor.forward_batch(next)?;
                let sample = self.squashed_sample(&out);
                let x = concat(next, sample.actions.view());
                let q1 = column(&self.critic_targets[0].forward_batch(x.view())?);
                let q2 = column(&self.critic_targets[1].forward_batch(x.view())?);
                (0..n)
                    .map(|i| q1[i].min(q2[i]) - self.cfg.alpha * sample.log_prob[i])
                    .collect()
            }
        };
        Ok((0..n)
            .map(|i| {
                if batch.terminals[i] {
                    batch.rewards[i]
                } else {
                    batch.rewards[i] + self.cfg.gamma * value[i]
                }
            })
            .collect())
    }

    /// Regresses every online critic onto `y`; returns the mean squared error
    /// averaged over critics, measured before the step.
    fn critic_step(&mut self, batch: &Batch, y: &[f64]) -> Result<f64> {
        let n = batch.len() as f64;
        let x = concat(batch.states.view(), batch.actions.view());
        let mut total = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(self.critic_opts.iter_mut()) {
            let cache = critic.forward_cached(x.view())?;
            let q = cache.output();
            let mut g = Array2::zeros(q.dim());
            let mut loss = 0.0;
            for i in 0..y.len() {
                let e = q[[i, 0]] - y[i];
                loss += e * e;
                g[[i, 0]] = 2.0 * e / n;
            }
            total += loss / n;
            let mut grads = vec![0.0; critic.num_params()];
            critic.backward_batch(&cache, g.view(), &mut grads)?;
            opt.step(critic.params_mut(), &grads)?;
        }
        Ok(total / self.critics.len() as f64)
    }

    /// Ascends `Q_1(s, mu(s))` for the tanh actors.
    fn deterministic_actor_step(&mut self, states: ArrayView2<'_, f64>) -> Result<f64> {
        let n = states.nrows() as f64;
        let a_cache = self.actor.forward_cached(states)?;
        let x = concat(states, a_cache.output().view());
        let critic = &self.critics[0];
        let q_cache = critic.forward_cached(x.view())?;
        let loss = -q_cache.output().sum() / n;
        let g = Array2::from_elem(q_cache.output().dim(), -1.0 / n);
        let mut scratch = vec![0.0; critic.num_params()];
        let dx = critic.backward_batch(&q_cache, g.view(), &mut scratch)?;
        let da = dx.slice(s![.., self.state_dim..]).to_owned();
        let mut grads = vec![0.0; self.actor.num_params()];
        self.actor.backward_batch(&a_cache, da.view(), &mut grads)?;
        self.actor_opt.step(self.actor.params_mut(), &grads)?;
        Ok(loss)
    }

    fn squashed_sample(&mut self, out: &Array2<f64>) -> SquashedSample {
        let (n, ad) = (out.nrows(), self.action_dim);
        let mut actions = Array2::zeros((n, ad));
        let mut eps = Array2::zeros((n, ad));
        let mut log_std = Array2::zeros((n, ad));
        let mut clamped = Array2::from_elem((n, ad), false);
        let mut log_prob = vec![0.0; n];
        for i in 0..n {
            for j in 0..ad {
                let raw = out[[i, ad + j]];
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let z: f64 = self.rng.sample(StandardNormal);
                let u = out[[i, j]] + ls.exp() * z;
                actions[[i, j]] = u.tanh();
                eps[[i, j]] = z;
                log_std[[i, j]] = ls;
                clamped[[i, j]] = ls != raw;
                log_prob[i] += squashed_log_prob(z, u, ls);
            }
        }
        SquashedSample {
            actions,
            log_prob,
            eps,
            log_std,
            clamped,
        }
    }

    pub fn ddpg_update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        self.require(Variant::Ddpg)?;
        let y = self.critic_targets_for(batch)?;
        let critic_loss = self.critic_step(batch, &y)?;
        let actor_loss = self.deterministic_actor_step(batch.states.view())?;
        self.updates += 1;
        self.sync_targets()?;
        Ok(UpdateStats {
            critic_loss,
            actor_loss: Some(actor_loss),
            entropy: None,
        })
    }

    pub fn td3_update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        self.require(Variant::Td3)?;
        let y = self.critic_targets_for(batch)?;
        let critic_loss = self.critic_step(batch, &y)?;
        self.updates += 1;
        let actor_loss = if self.updates.is_multiple_of(self.cfg.policy_delay as u64) {
            let l = self.deterministic_actor_step(batch.states.view())?;
            self.sync_targets()?;
            Some(l)
        } else {
            None
        };
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            entropy: None,
        })
    }

    pub fn sac_update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        self.require(Variant::Sac)?;
        let y = self.critic_targets_for(batch)?;
        let critic_loss = self.critic_step(batch, &y)?;

        let states = batch.states.view();
        let n = batch.len();
        let nf = n as f64;
        let ad = self.action_dim;
        let alpha = self.cfg.alpha;
        let a_cache = self.actor.forward_cached(states)?;
        let sample = self.squashed_sample(a_cache.output());
        let x = concat(states, sample.actions.view());
        let c1 = self.critics[0].forward_cached(x.view())?;
        let c2 = self.critics[1].forward_cached(x.view())?;
        let (q1, q2) = (c1.output(), c2.output());
        let first_is_min: Vec<bool> = (0..n).map(|i| q1[[i, 0]] <= q2[[i, 0]]).collect();
        let mut loss = 0.0;
        for i in 0..n {
            let qmin = if first_is_min[i] { q1[[i, 0]] } else { q2[[i, 0]] };
            loss += alpha * sample.log_prob[i] - qmin;
        }
        loss /= nf;
        let entropy = -sample.log_prob.iter().sum::<f64>() / nf;

        // dQmin/da per sample: only the critic achieving the minimum contributes.
        let mask1 = Array2::from_shape_fn((n, 1), |(i, _)| if first_is_min[i] { 1.0 } else { 0.0 });
        let mask2 = mask1.mapv(|m| 1.0 - m);
        let mut scratch = vec![0.0; self.critics[0].num_params()];
        let dx1 = self.critics[0].backward_batch(&c1, mask1.view(), &mut scratch)?;
        let dx2 = self.critics[1].backward_batch(&c2, mask2.view(), &mut scratch)?;
        let gq = &dx1.slice(s![.., self.state_dim..]) + &dx2.slice(s![.., self.state_dim..]);

        let mut out_grad = Array2::zeros((n, 2 * ad));
        for i in 0..n {
            for j in 0..ad {
                let a = sample.actions[[i, j]];
                let sigma_eps = sample.log_std[[i, j]].exp() * sample.eps[[i, j]];
                let dq_du = gq[[i, j]] * (1.0 - a * a);
                out_grad[[i, j]] = (alpha * 2.0 * a - dq_du) / nf;
                if !sample.clamped[[i, j]] {
                    out_grad[[i, ad + j]] = (alpha * (-1.0 + 2.0 * a * sigma_eps) - dq_du * sigma_eps) / nf;
                }
            }
        }
        let mut grads = vec![0.0; self.actor.num_params()];
        self.actor.backward_batch(&a_cache, out_grad.view(), &mut grads)?;
        self.actor_opt.step(self.actor.params_mut(), &grads)?;
        self.updates += 1;
        self.sync_targets()?;
        Ok(UpdateStats {
            critic_loss,
            actor_loss: Some(loss),
            entropy: Some(entropy),
        })
    }

    fn sync_targets(&mut self) -> Result<()> {
        let tau = self.cfg.tau;
        if let Some(t) = self.actor_target.as_mut() {
            polyak_update(t.params_mut(), self.actor.params(), tau)?;
        }
        for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
            polyak_update(t.params_mut(), c.params(), tau)?;
        }
        if !self.all_finite() {
            return Err(Error::Numerics(format!(
                "{} parameters became non-finite",
                self.variant
            )));
        }
        Ok(())
    }

    fn sections(&self) -> Vec<(String, &DenseNet)> {
        let v = self.variant.name();
        let mut out = vec![(format!("{v}:actor"), &self.actor)];
        if let Some(t) = &self.actor_target {
            out.push((format!("{v}:actor_target"), t));
        }
        for (i, (c, t)) in self.critics.iter().zip(&self.critic_targets).enumerate() {
            out.push((format!("{v}:critic{i}"), c));
            out.push((format!("{v}:critic{i}_target"), t));
        }
        out
    }

    /// Writes one checkpoint section per network. `meta.tag` is used as a
    /// prefix for the section tags.
    pub fn save<W: Write>(&self, meta: &Metadata, mut sink: W) -> Result<()> {
        for (tag, net) in self.sections() {
            let m = Metadata {
                tag: if meta.tag.is_empty() {
                    tag
                } else {
                    format!("{}/{tag}", meta.tag)
                },
                ..meta.clone()
            };
            save_checkpoint(net, &m, &mut sink)?;
        }
        Ok(())
    }

    /// Restores networks written by [`save`](Self::save). Optimizer moments
    /// start fresh.
    pub fn load<R: Read>(variant: Variant, cfg: AgentConfig, source: R, seed: u64) -> Result<Self> {
        let sections = load_sections(source)?;
        let find = |suffix: &str| {
            let want = format!("{}:{suffix}", variant.name());
            sections
                .iter()
                .find(|c| c.meta.tag.rsplit('/').next() == Some(want.as_str()))
                .map(|c| c.net.clone())
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing section {want}")))
        };
        let actor = find("actor")?;
        let state_dim = actor.input_dim();
        let action_dim = match variant {
            Variant::Sac => actor.output_dim() / 2,
            _ => actor.output_dim(),
        };
        let mut agent = Self::new(variant, cfg, state_dim, action_dim, seed)?;
        let replace = |slot: &mut DenseNet, net: DenseNet| -> Result<()> {
            if slot.sizes() != net.sizes() || slot.output_activation() != net.output_activation() {
                return Err(Error::CorruptCheckpoint(format!(
                    "network shape {:?} does not match agent configuration {:?}",
                    net.sizes(),
                    slot.sizes()
                )));
            }
            *slot = net;
            Ok(())
        };
        replace(&mut agent.actor, actor)?;
        if let Some(t) = agent.actor_target.as_mut() {
            replace(t, find("actor_target")?)?;
        }
        for i in 0..variant.n_critics() {
            replace(&mut agent.critics[i], find(&format!("critic{i}"))?)?;
            replace(&mut agent.critic_targets[i], find(&format!("critic{i}_target"))?)?;
        }
        Ok(agent)
    }

    /// Reads just the actor of an agent checkpoint.
    pub fn load_policy<R: Read>(source: R) -> Result<Policy> {
        let sections = load_sections(source)?;
        for c in sections {
            let tag = c.meta.tag.rsplit('/').next().unwrap_or("");
            if let Some(name) = tag.strip_suffix(":actor") {
                return Ok(Policy {
                    variant: name.parse()?,
                    actor: c.net,
                });
            }
        }
        Err(Error::CorruptCheckpoint("no actor section".into()))
    }
}

fn concat(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("row counts agree")
}

fn column(q: &Array2<f64>) -> Vec<f64> {
    q.column(0).to_vec()
}
