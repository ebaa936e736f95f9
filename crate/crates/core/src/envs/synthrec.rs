//! Synthetic recommendation simulator with a known essential/trivial split.
//!
//! State layout (`n_static + n_dynamic + m * item_dim` reals):
//!
//! ```text
//! [ static bits | dynamic interest | history slot 0 (most recent) | slot 1 | ... ]
//! ```
//!
//! The first `essential_static_count` static bits are fixed user attributes.
//! The remaining static bits are session context, redrawn every step from the
//! recommended item and fresh noise. The click probability reads only the
//! essential coordinates: essential static bits, the dynamic interest and the
//! most recent history slot.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mdp::{Environment, StateVec, StepOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecConfig {
    pub n_static: usize,
    pub n_dynamic: usize,
    pub item_dim: usize,
    pub history_len: usize,
    pub essential_static_count: usize,
    pub drift_rate: f64,
    /// Seeds the click model; per-episode users come from the reset seed.
    pub seed: u64,
    /// Multiplies every click weight, bias included. Zero gives p = 0.5.
    pub click_scale: f64,
    /// Std-dev of the per-attribute preference weights.
    pub preference_scale: f64,
    /// Std-dev of the dynamic-interest weights.
    pub interest_scale: f64,
    /// Total weight on agreement with the most recent item.
    pub coherence: f64,
    pub click_bias: f64,
    /// Slope of the context-bit response to the recommended item.
    pub context_sharpness: f64,
}

impl Default for SynthRecConfig {
    fn default() -> Self {
        Self {
            n_static: 88,
            n_dynamic: 3,
            item_dim: 27,
            history_len: 2,
            essential_static_count: 40,
            drift_rate: 0.05,
            seed: 0,
            click_scale: 1.0,
            preference_scale: 0.1,
            interest_scale: 0.5,
            coherence: 2.5,
            click_bias: -1.5,
            context_sharpness: 2.0,
        }
    }
}

impl SynthRecConfig {
    pub fn state_dim(&self) -> usize {
        self.n_static + self.n_dynamic + self.history_len * self.item_dim
    }

    pub fn essential_count(&self) -> usize {
        self.essential_static_count + self.n_dynamic + self.item_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_static == 0 || self.n_dynamic == 0 || self.item_dim == 0 || self.history_len == 0 {
            return Err(Error::config("synthrec dimensions must be positive"));
        }
        if self.essential_static_count > self.n_static {
            return Err(Error::config("essential_static_count exceeds n_static"));
        }
        if self.essential_count() >= self.state_dim() {
            return Err(Error::config("synthrec needs at least one trivial state dimension"));
        }
        if !(self.drift_rate >= 0.0 && self.drift_rate.is_finite()) {
            return Err(Error::config("drift_rate must be finite and non-negative"));
        }
        for (name, v) in [
            ("click_scale", self.click_scale),
            ("preference_scale", self.preference_scale),
            ("interest_scale", self.interest_scale),
            ("coherence", self.coherence),
            ("click_bias", self.click_bias),
            ("context_sharpness", self.context_sharpness),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Fixed parameters of the click and transition mechanisms.
///
/// `weights` has one entry per essential coordinate (static, dynamic, recent
/// history, in state order) followed by the bias. Direction matrices are
/// row-major with `item_dim` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickModel {
    pub weights: Vec<f64>,
    pub static_dirs: Vec<f64>,
    pub dynamic_dirs: Vec<f64>,
    pub context_dirs: Vec<f64>,
}

impl ClickModel {
    pub fn sample(cfg: &SynthRecConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c11c);
        let d = cfg.item_dim;
        let e = cfg.essential_static_count;
        let normal =
            |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let static_dirs = normal(e * d, &mut rng);
        let dynamic_dirs = normal(cfg.n_dynamic * d, &mut rng);
        let context_dirs = normal((cfg.n_static - e) * d, &mut rng);
        let mut weights = Vec::with_capacity(cfg.essential_count() + 1);
        weights.extend(normal(e, &mut rng).into_iter().map(|z| cfg.preference_scale * z));
        weights.extend(
            normal(cfg.n_dynamic, &mut rng)
                .into_iter()
                .map(|z| cfg.interest_scale * z),
        );
        weights.extend(std::iter::repeat_n(cfg.coherence / d as f64, d));
        weights.push(cfg.click_bias);
        weights.iter_mut().for_each(|w| *w *= cfg.click_scale);
        Self {
            weights,
            static_dirs,
            dynamic_dirs,
            context_dirs,
        }
    }

    fn validate(&self, cfg: &SynthRecConfig) -> Result<()> {
        let d = cfg.item_dim;
        let e = cfg.essential_static_count;
        let checks = [
            (cfg.essential_count() + 1, self.weights.len()),
            (e * d, self.static_dirs.len()),
            (cfg.n_dynamic * d, self.dynamic_dirs.len()),
            ((cfg.n_static - e) * d, self.context_dirs.len()),
        ];
        for (expected, got) in checks {
            if expected != got {
                return Err(Error::dim(expected, got));
            }
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct SynthRecEnv {
    cfg: SynthRecConfig,
    model: Arc<ClickModel>,
    user_static: Vec<f64>,
    user_dynamic: Vec<f64>,
    /// `history_len` slots of `item_dim`, most recent first.
    history: Vec<f64>,
    rng: ChaCha8Rng,
}

impl SynthRecEnv {
    pub fn new(cfg: SynthRecConfig) -> Result<Self> {
        cfg.validate()?;
        let model = ClickModel::sample(&cfg);
        Self::with_model(cfg, model)
    }

    pub fn with_model(cfg: SynthRecConfig, model: ClickModel) -> Result<Self> {
        cfg.validate()?;
        model.validate(&cfg)?;
        let mut env = Self {
            user_static: vec![0.0; cfg.n_static],
            user_dynamic: vec![0.0; cfg.n_dynamic],
            history: vec![0.0; cfg.history_len * cfg.item_dim],
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            model: Arc::new(model),
            cfg,
        };
        env.reset(env.cfg.seed);
        Ok(env)
    }

    pub fn config(&self) -> &SynthRecConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ClickModel {
        &self.model
    }

    pub fn user_dynamic(&self) -> &[f64] {
        &self.user_dynamic
    }

    /// Replaces the noise generator, keeping the state.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Essential and trivial index sets; they partition `0..state_dim`.
    pub fn ground_truth_masks(&self) -> (Vec<usize>, Vec<usize>) {
        let c = &self.cfg;
        let dyn_start = c.n_static;
        let hist_start = dyn_start + c.n_dynamic;
        let essential: Vec<usize> = (0..c.essential_static_count)
            .chain(dyn_start..hist_start)
            .chain(hist_start..hist_start + c.item_dim)
            .collect();
        let trivial: Vec<usize> = (c.essential_static_count..c.n_static)
            .chain(hist_start + c.item_dim..c.state_dim())
            .collect();
        (essential, trivial)
    }

    /// Click probability for an arbitrary state; reads essential coordinates only.
    pub fn click_probability(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let c = &self.cfg;
        if state.len() != c.state_dim() {
            return Err(Error::dim(c.state_dim(), state.len()));
        }
        if action.len() != c.item_dim {
            return Err(Error::dim(c.item_dim, action.len()));
        }
        let d = c.item_dim;
        let norm = (d as f64).sqrt();
        let w = &self.model.weights;
        let e = c.essential_static_count;
        let mut logit = *w.last().unwrap();
        for i in 0..e {
            let sign = 2.0 * state[i] - 1.0;
            logit += w[i] * sign * dot(&self.model.static_dirs[i * d..(i + 1) * d], action) / norm;
        }
        let dyn_start = c.n_static;
        for k in 0..c.n_dynamic {
            let g = &self.model.dynamic_dirs[k * d..(k + 1) * d];
            logit += w[e + k] * state[dyn_start + k] * dot(g, action) / norm;
        }
        let hist = &state[dyn_start + c.n_dynamic..dyn_start + c.n_dynamic + d];
        let hw = &w[e + c.n_dynamic..e + c.n_dynamic + d];
        for j in 0..d {
            logit += hw[j] * hist[j] * action[j];
        }
        Ok(logistic(logit))
    }

    fn write_state(&self, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.user_static);
        out.extend_from_slice(&self.user_dynamic);
        out.extend_from_slice(&self.history);
    }
}

impl Environment for SynthRecEnv {
    fn state_dim(&self) -> usize {
        self.cfg.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.cfg.item_dim
    }

    fn reset(&mut self, seed: u64) -> StateVec {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut self.rng;
        for x in self.user_static.iter_mut() {
            *x = if rng.random::<bool>() { 1.0 } else { 0.0 };
        }
        loop {
            for u in self.user_dynamic.iter_mut() {
                *u = rng.sample(StandardNormal);
            }
            let n = dot(&self.user_dynamic, &self.user_dynamic).sqrt();
            if n > 1e-6 {
                self.user_dynamic.iter_mut().for_each(|u| *u /= n);
                break;
            }
        }
        for h in self.history.iter_mut() {
            *h = rng.random_range(-1.0..=1.0);
        }
        self.state()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        self.check_action(action)?;
        let mut state = Vec::with_capacity(self.cfg.state_dim());
        self.write_state(&mut state);
        let p = self.click_probability(&state, action)?;

        // Fixed number of draws per step whatever the action, so branches
        // stepped with different actions stay aligned on the same noise.
        let click_u: f64 = self.rng.random();
        let reward = if click_u < p { 1.0 } else { 0.0 };

        let c = &self.cfg;
        let d = c.item_dim;
        let norm = (d as f64).sqrt();
        let e = c.essential_static_count;
        for j in 0..c.n_static - e {
            let xi: f64 = self.rng.random();
            let q = logistic(c.context_sharpness * dot(&self.model.context_dirs[j * d..(j + 1) * d], action) / norm);
            self.user_static[e + j] = if xi < q { 1.0 } else { 0.0 };
        }

        for k in 0..c.n_dynamic {
            let g = &self.model.dynamic_dirs[k * d..(k + 1) * d];
            self.user_dynamic[k] += c.drift_rate * dot(g, action) / norm;
        }
        let n = dot(&self.user_dynamic, &self.user_dynamic).sqrt();
        if n > 1e-12 {
            self.user_dynamic.iter_mut().for_each(|u| *u /= n);
        }

        self.history.copy_within(0..(c.history_len - 1) * d, d);
        self.history[..d].copy_from_slice(action);

        Ok(StepOutcome {
            next_state: self.state(),
            reward,
            terminal: false,
        })
    }

    fn state(&self) -> StateVec {
        let mut v = Vec::with_capacity(self.cfg.state_dim());
        self.write_state(&mut v);
        StateVec::new(v).expect("environment state is finite")
    }

    fn force_state(&mut self, state: &[f64]) -> Result<()> {
        let c = &self.cfg;
        if state.len() != c.state_dim() {
            return Err(Error::dim(c.state_dim(), state.len()));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("forced state is not finite".into()));
        }
        let (s, rest) = state.split_at(c.n_static);
        let (u, h) = rest.split_at(c.n_dynamic);
        self.user_static.copy_from_slice(s);
        self.user_dynamic.copy_from_slice(u);
        self.history.copy_from_slice(h);
        Ok(())
    }

    fn reward_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}
