//! MDP vocabulary and the environment contract.
//!
//! Environments own all of their randomness. Cloning one (see
//! [`Environment::branch`]) copies the generator state as well, so a branch
//! replays exactly the exogenous noise the original would see. That is how
//! interventions are realized: step a branch with a different action, or force
//! a branch into a different state, and compare against the untouched
//! original.

use std::ops::Deref;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StateVec(Vec<f64>);

impl StateVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerics(format!("state element {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for StateVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// An action with every element in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVec(Vec<f64>);

impl ActionVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_action_bounds(&values)?;
        Ok(Self(values))
    }

    /// Clamps into `[-1, 1]`; NaN maps to 0.
    pub fn clamped(mut values: Vec<f64>) -> Self {
        for v in &mut values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        }
        Self(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ActionVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn check_action_bounds(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(-1.0..=1.0).contains(v)) {
        Some(index) => Err(Error::ActionBounds {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVec,
    pub action: ActionVec,
    pub next_state: StateVec,
    pub reward: f64,
    pub terminal: bool,
}

impl Transition {
    pub fn new(state: StateVec, action: ActionVec, next_state: StateVec, reward: f64, terminal: bool) -> Result<Self> {
        if state.len() != next_state.len() {
            return Err(Error::dim(state.len(), next_state.len()));
        }
        if !reward.is_finite() {
            return Err(Error::InvalidReward);
        }
        Ok(Self {
            state,
            action,
            next_state,
            reward,
            terminal,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: StateVec,
    pub reward: f64,
    pub terminal: bool,
}

pub trait Environment: Clone + Send {
    fn state_dim(&self) -> usize;

    fn action_dim(&self) -> usize;

    /// Starts a new episode. The returned state depends only on `seed` and the
    /// environment's construction parameters.
    fn reset(&mut self, seed: u64) -> StateVec;

    /// Advances one step. Fails with `Dimension` on a wrong-length action and
    /// `ActionBounds` on an element outside `[-1, 1]`.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;

    /// The current state.
    fn state(&self) -> StateVec;

    /// Overwrites the current state, keeping the generator state. Used to
    /// evaluate `do(S := s)` on a branch.
    fn force_state(&mut self, state: &[f64]) -> Result<()>;

    /// Closed range every reward lies in.
    fn reward_range(&self) -> (f64, f64);

    /// Independent deep copy, generator state included.
    fn branch(&self) -> Self {
        self.clone()
    }

    fn check_action(&self, action: &[f64]) -> Result<()> {
        if action.len() != self.action_dim() {
            return Err(Error::dim(self.action_dim(), action.len()));
        }
        check_action_bounds(action)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    /// `next_state` of every step equals `state` of the step after it.
    pub fn is_chained(&self) -> bool {
        self.transitions.windows(2).all(|w| w[0].next_state == w[1].state)
    }
}

/// Σ_k γ^k r_k with the first reward undiscounted.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::config(format!("gamma {gamma} outside [0, 1]")));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidReward);
    }
    Ok(rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc))
}

/// Deterministic, well-mixed seed for item `index` of a named `stream`
/// derived from `base` (a splitmix64 finalizer over the combination).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Resets `env` with `seed` and rolls `policy` forward for at most
/// `max_steps`, stopping early on a terminal step.
pub fn run_episode<E, P>(env: &mut E, seed: u64, mut policy: P, max_steps: usize) -> Result<Trajectory>
where
    E: Environment,
    P: FnMut(&StateVec) -> Result<ActionVec>,
{
    let mut state = env.reset(seed);
    let mut transitions = Vec::with_capacity(max_steps);
    for _ in 0..max_steps {
        let action = policy(&state)?;
        let out = env.step(&action)?;
        let terminal = out.terminal;
        let next = out.next_state.clone();
        transitions.push(Transition::new(state, action, out.next_state, out.reward, terminal)?);
        state = next;
        if terminal {
            break;
        }
    }
    Ok(Trajectory { transitions, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct power-sum oracle.
    fn oracle_return(rewards: &[f64], gamma: f64) -> f64 {
        let mut total = 0.0;
        for (k, r) in rewards.iter().enumerate() {
            total += gamma.powi(k as i32) * r;
        }
        total
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[], 0.9).unwrap(), 0.0);
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.5).unwrap(), 1.75);
        // 0.2 - 0.09 + 0.567 + 0 + 0.19683, by direct summation
        let r = [0.2, -0.1, 0.7, 0.0, 0.3];
        let oracle = oracle_return(&r, 0.9);
        assert!((oracle - 0.87383).abs() < 1e-12);
        assert!((discounted_return(&r, 0.9).unwrap() - 0.87383).abs() < 1e-12);
    }

    #[test]
    fn discounted_return_errors() {
        assert!(matches!(
            discounted_return(&[1.0, f64::NAN], 0.9),
            Err(Error::InvalidReward)
        ));
        assert!(matches!(
            discounted_return(&[f64::INFINITY], 0.9),
            Err(Error::InvalidReward)
        ));
        assert!(matches!(discounted_return(&[1.0], 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn action_bounds() {
        assert!(ActionVec::new(vec![-1.0, 0.0, 1.0]).is_ok());
        assert!(matches!(
            ActionVec::new(vec![0.5, 1.2]),
            Err(Error::ActionBounds { index: 1, .. })
        ));
        assert_eq!(&*ActionVec::clamped(vec![3.0, -2.0, f64::NAN]), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn transition_invariants() {
        let s = StateVec::new(vec![0.0, 1.0]).unwrap();
        let a = ActionVec::new(vec![0.0]).unwrap();
        assert!(matches!(
            Transition::new(s.clone(), a.clone(), StateVec::new(vec![0.0]).unwrap(), 1.0, false),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            Transition::new(s.clone(), a, s, f64::NAN, false),
            Err(Error::InvalidReward)
        ));
        assert!(StateVec::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn derived_seeds_differ_across_streams_and_indices() {
        let mut seen = std::collections::HashSet::new();
        for stream in 0..4 {
            for index in 0..256 {
                assert!(seen.insert(derive_seed(7, stream, index)));
            }
        }
        assert_eq!(derive_seed(7, 1, 2), derive_seed(7, 1, 2));
    }

    proptest! {
        #[test]
        fn return_matches_oracle(rewards in prop::collection::vec(-5.0f64..5.0, 0..40), gamma in 0.0f64..=1.0) {
            let got = discounted_return(&rewards, gamma).unwrap();
            prop_assert!((got - oracle_return(&rewards, gamma)).abs() < 1e-9);
        }

        #[test]
        fn gamma_zero_is_first_reward(rewards in prop::collection::vec(-5.0f64..5.0, 1..20)) {
            prop_assert_eq!(discounted_return(&rewards, 0.0).unwrap(), rewards[0]);
        }

        #[test]
        fn return_is_linear(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 0..20),
            gamma in 0.0f64..=1.0,
            c in -3.0f64..3.0,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| c * x + y).collect();
            let lhs = discounted_return(&combo, gamma).unwrap();
            let rhs = c * discounted_return(&a, gamma).unwrap() + discounted_return(&b, gamma).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
