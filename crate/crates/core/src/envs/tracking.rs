//! One-dimensional tracking task used to sanity-check the learners.
//!
//! The state is a target `x` drawn uniformly from `[-1, 1]`; the reward for
//! action `a` is `1 - (x - a)^2`, so the best possible episode return equals
//! the horizon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{Environment, StateVec, StepOutcome};

#[derive(Debug, Clone)]
pub struct TrackingEnv {
    horizon: usize,
    t: usize,
    x: f64,
    rng: ChaCha8Rng,
}

impl TrackingEnv {
    pub fn new(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::config("tracking horizon must be positive"));
        }
        let mut env = Self {
            horizon,
            t: 0,
            x: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        env.reset(0);
        Ok(env)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

impl Environment for TrackingEnv {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, seed: u64) -> StateVec {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.x = self.rng.random_range(-1.0..=1.0);
        self.state()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        self.check_action(action)?;
        let reward = 1.0 - (self.x - action[0]).powi(2);
        self.t += 1;
        self.x = self.rng.random_range(-1.0..=1.0);
        Ok(StepOutcome {
            next_state: self.state(),
            reward,
            terminal: self.t >= self.horizon,
        })
    }

    fn state(&self) -> StateVec {
        StateVec::new(vec![self.x]).expect("finite target")
    }

    fn force_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != 1 {
            return Err(Error::dim(1, state.len()));
        }
        if !state[0].is_finite() {
            return Err(Error::Numerics("forced state is not finite".into()));
        }
        self.x = state[0];
        Ok(())
    }

    fn reward_range(&self) -> (f64, f64) {
        (-3.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{run_episode, ActionVec};

    #[test]
    fn perfect_tracking_scores_the_horizon() {
        let mut env = TrackingEnv::new(10).unwrap();
        let traj = run_episode(&mut env, 3, |s| ActionVec::new(s.to_vec()), 50).unwrap();
        assert_eq!(traj.len(), 10);
        assert!(traj.transitions.last().unwrap().terminal);
        assert!((traj.total_reward() - 10.0).abs() < 1e-12);
        assert!(traj.is_chained());
    }

    #[test]
    fn reward_is_one_minus_squared_error() {
        let mut env = TrackingEnv::new(10).unwrap();
        let x = env.reset(1)[0];
        let r = env.step(&[0.25]).unwrap().reward;
        assert_eq!(r, 1.0 - (x - 0.25).powi(2));
    }
}
