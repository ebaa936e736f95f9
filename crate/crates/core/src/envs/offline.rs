//! Offline recommendation environment over a rating log.
//!
//! Each episode samples a user. An action is a point in item-factor space and
//! recommends the nearest item not yet shown this episode. The reward is 1 when
//! the user's rating of that item (the logged one if present, else the model's
//! prediction) reaches the relevance threshold.
//!
//! State: `[user factor | mean of history factors | slot 0 | ... | slot m-1]`,
//! `(m + 2) * k` reals, most recent slot first.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mf::MfModel;
use super::ratings::{RatingsTable, MAX_RATING, MIN_RATING};
use crate::error::{Error, Result};
use crate::mdp::{Environment, StateVec, StepOutcome};

pub const DEFAULT_RELEVANCE_THRESHOLD: f64 = 4.0;

/// Index of the candidate closest to `target` in Euclidean distance. Ties go
/// to the smallest index, so the answer does not depend on iteration order.
pub fn nearest_item<'a, I>(candidates: I, target: &[f64]) -> Option<usize>
where
    I: IntoIterator<Item = (usize, &'a [f64])>,
{
    let mut best: Option<(f64, usize)> = None;
    for (idx, v) in candidates {
        let d: f64 = v.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        let better = match best {
            None => true,
            Some((bd, bi)) => d < bd || (d == bd && idx < bi),
        };
        if better {
            best = Some((d, idx));
        }
    }
    best.map(|(_, i)| i)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recommendation {
    pub item: usize,
    /// Logged rating, when the user rated this item.
    pub logged: Option<f64>,
    pub predicted: f64,
    pub relevant: bool,
}

#[derive(Debug)]
struct Shared {
    mf: MfModel,
    ratings: HashMap<(usize, usize), f64>,
    relevant_counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct OfflineRecEnv {
    shared: Arc<Shared>,
    m: usize,
    threshold: f64,
    user: usize,
    user_vec: Vec<f64>,
    /// `m` slots of `k`, most recent first.
    history: Vec<f64>,
    shown: Vec<bool>,
    last: Option<Recommendation>,
    rng: ChaCha8Rng,
}

pub fn make_offline_env(model: MfModel, table: &RatingsTable, m: usize, seed: u64) -> Result<OfflineRecEnv> {
    if m < 1 {
        return Err(Error::config("offline history length m must be at least 1"));
    }
    if model.k < 1 {
        return Err(Error::config("offline environment needs factor rank k >= 1"));
    }
    if model.n_users() != table.n_users() || model.n_items() != table.n_items() {
        return Err(Error::config("model was not trained on this table"));
    }
    let ratings: HashMap<(usize, usize), f64> = table.indexed().map(|(u, i, r)| ((u, i), r)).collect();
    let mut relevant_counts = vec![0; table.n_users()];
    for (&(u, _), &r) in &ratings {
        if r >= DEFAULT_RELEVANCE_THRESHOLD {
            relevant_counts[u] += 1;
        }
    }
    let k = model.k;
    let n_items = model.n_items();
    let mut env = OfflineRecEnv {
        shared: Arc::new(Shared {
            mf: model,
            ratings,
            relevant_counts,
        }),
        m,
        threshold: DEFAULT_RELEVANCE_THRESHOLD,
        user: 0,
        user_vec: vec![0.0; k],
        history: vec![0.0; m * k],
        shown: vec![false; n_items],
        last: None,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    env.reset(seed);
    Ok(env)
}

impl OfflineRecEnv {
    pub fn model(&self) -> &MfModel {
        &self.shared.mf
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Changes the relevance threshold; relevant-item counts follow.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        let mut counts = vec![0; self.shared.mf.n_users()];
        for (&(u, _), &r) in &self.shared.ratings {
            if r >= threshold {
                counts[u] += 1;
            }
        }
        self.shared = Arc::new(Shared {
            mf: self.shared.mf.clone(),
            ratings: self.shared.ratings.clone(),
            relevant_counts: counts,
        });
        self.threshold = threshold;
        self
    }

    pub fn current_user(&self) -> usize {
        self.user
    }

    /// Logged items this user rated at or above the threshold.
    pub fn relevant_item_count(&self, user: usize) -> usize {
        self.shared.relevant_counts[user]
    }

    pub fn last_recommendation(&self) -> Option<Recommendation> {
        self.last
    }

    /// Starts the episode of a specific user.
    pub fn reset_user(&mut self, user: usize) -> Result<StateVec> {
        if user >= self.shared.mf.n_users() {
            return Err(Error::config(format!("user index {user} out of range")));
        }
        self.user = user;
        self.user_vec.copy_from_slice(self.shared.mf.user_factor(user));
        self.history.iter_mut().for_each(|h| *h = 0.0);
        self.shown.iter_mut().for_each(|s| *s = false);
        self.last = None;
        Ok(self.state())
    }

    fn predicted(&self, item: usize) -> f64 {
        let mf = &self.shared.mf;
        let dot: f64 = self.user_vec.iter().zip(mf.item_factor(item)).map(|(a, b)| a * b).sum();
        (mf.global_mean + mf.user_bias[self.user] + mf.item_bias[item] + dot).clamp(MIN_RATING, MAX_RATING)
    }
}

impl Environment for OfflineRecEnv {
    fn state_dim(&self) -> usize {
        (self.m + 2) * self.shared.mf.k
    }

    fn action_dim(&self) -> usize {
        self.shared.mf.k
    }

    fn reset(&mut self, seed: u64) -> StateVec {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let user = self.rng.random_range(0..self.shared.mf.n_users());
        self.reset_user(user).expect("sampled user is in range")
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        self.check_action(action)?;
        let mf = &self.shared.mf;
        if self.shown.iter().all(|&s| s) {
            self.shown.iter_mut().for_each(|s| *s = false);
        }
        let shown = &self.shown;
        let item = nearest_item(
            (0..mf.n_items()).filter(|&i| !shown[i]).map(|i| (i, mf.item_factor(i))),
            action,
        )
        .expect("at least one unshown item");
        let logged = self.shared.ratings.get(&(self.user, item)).copied();
        let predicted = self.predicted(item);
        let relevant = logged.unwrap_or(predicted) >= self.threshold;
        self.shown[item] = true;
        self.last = Some(Recommendation {
            item,
            logged,
            predicted,
            relevant,
        });
        let k = mf.k;
        let factor = mf.item_factor(item).to_vec();
        self.history.copy_within(0..(self.m - 1) * k, k);
        self.history[..k].copy_from_slice(&factor);
        Ok(StepOutcome {
            next_state: self.state(),
            reward: if relevant { 1.0 } else { 0.0 },
            terminal: false,
        })
    }

    fn state(&self) -> StateVec {
        let k = self.shared.mf.k;
        let mut v = Vec::with_capacity(self.state_dim());
        v.extend_from_slice(&self.user_vec);
        for f in 0..k {
            v.push((0..self.m).map(|s| self.history[s * k + f]).sum::<f64>() / self.m as f64);
        }
        v.extend_from_slice(&self.history);
        StateVec::new(v).expect("offline state is finite")
    }

    /// The mean block is derived, so only the user and slot blocks are read.
    fn force_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_dim() {
            return Err(Error::dim(self.state_dim(), state.len()));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("forced state is not finite".into()));
        }
        let k = self.shared.mf.k;
        self.user_vec.copy_from_slice(&state[..k]);
        self.history.copy_from_slice(&state[2 * k..]);
        Ok(())
    }

    fn reward_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::ratings::Rating;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn tiny_model(n_users: usize, item_factors: Vec<f64>, k: usize) -> MfModel {
        let n_items = item_factors.len() / k;
        MfModel {
            k,
            user_factors: vec![0.0; n_users * k],
            item_factors,
            user_bias: vec![0.0; n_users],
            item_bias: vec![0.0; n_items],
            global_mean: 3.0,
        }
    }

    fn table(n_users: u64, n_items: u64, rating: impl Fn(u64, u64) -> f64) -> RatingsTable {
        let mut recs = Vec::new();
        for u in 0..n_users {
            for i in 0..n_items {
                recs.push(Rating {
                    user: u,
                    item: i,
                    rating: rating(u, i),
                    timestamp: 0,
                });
            }
        }
        RatingsTable::from_records(recs).unwrap()
    }

    #[test]
    fn config_errors() {
        let t = table(2, 3, |_, _| 3.0);
        let m = tiny_model(2, vec![0.1, 0.2, 0.3], 1);
        assert!(matches!(make_offline_env(m.clone(), &t, 0, 0), Err(Error::Config(_))));
        let env = make_offline_env(m, &t, 2, 0).unwrap();
        assert_eq!(env.state_dim(), 4);
        assert_eq!(env.action_dim(), 1);
    }

    #[test]
    fn exact_factor_selects_that_item() {
        let t = table(1, 4, |_, _| 5.0);
        let factors = vec![0.5, -0.5, 0.2, 0.9, -0.7, 0.1, 0.0, 0.0];
        let mut env = make_offline_env(tiny_model(1, factors, 2), &t, 2, 1).unwrap();
        env.reset(0);
        env.step(&[-0.7, 0.1]).unwrap();
        assert_eq!(env.last_recommendation().unwrap().item, 2);
        // item 2 is now shown; the same action falls to the next nearest
        env.step(&[-0.7, 0.1]).unwrap();
        assert_ne!(env.last_recommendation().unwrap().item, 2);
    }

    #[test]
    fn user_without_relevant_items_never_rewarded() {
        let t = table(1, 6, |_, _| 2.0);
        let factors: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 0.8).collect();
        let mut env = make_offline_env(tiny_model(1, factors, 1), &t, 1, 0).unwrap();
        env.reset(3);
        assert_eq!(env.relevant_item_count(0), 0);
        for t in 0..12 {
            let a = [((t as f64) * 0.7).sin()];
            assert_eq!(env.step(&a).unwrap().reward, 0.0);
        }
    }

    #[test]
    fn nearest_matches_linear_scan_on_twenty_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = 3;
        let factors: Vec<f64> = (0..20 * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..200 {
            let target: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            // brute force: compute all distances, take the first minimum
            let dists: Vec<f64> = (0..20)
                .map(|i| (0..k).map(|f| (factors[i * k + f] - target[f]).powi(2)).sum())
                .collect();
            let mut oracle = 0;
            for i in 1..20 {
                if dists[i] < dists[oracle] {
                    oracle = i;
                }
            }
            let got = nearest_item((0..20).map(|i| (i, &factors[i * k..(i + 1) * k])), &target);
            assert_eq!(got, Some(oracle));
        }
    }

    #[test]
    fn ties_go_to_smallest_index() {
        let f = [1.0, -1.0, 1.0];
        let got = nearest_item([(2, &f[2..3]), (0, &f[0..1]), (1, &f[1..2])], &[0.0]);
        assert_eq!(got, Some(0));
    }

    #[test]
    fn logged_rating_takes_precedence() {
        // user 0 logged 5 on item 0 although the model predicts 3
        let t = table(1, 2, |_, i| if i == 0 { 5.0 } else { 1.0 });
        let mut env = make_offline_env(tiny_model(1, vec![0.5, -0.5], 1), &t, 1, 0).unwrap();
        env.reset(0);
        let out = env.step(&[0.5]).unwrap();
        let rec = env.last_recommendation().unwrap();
        assert_eq!(rec.logged, Some(5.0));
        assert_eq!(rec.predicted, 3.0);
        assert_eq!(out.reward, 1.0);
        assert_eq!(env.step(&[0.5]).unwrap().reward, 0.0);
    }

    #[test]
    fn state_layout_tracks_history() {
        let t = table(1, 3, |_, _| 3.0);
        let mut env = make_offline_env(tiny_model(1, vec![0.2, 0.4, 0.8], 1), &t, 2, 0).unwrap();
        env.reset(0);
        env.step(&[0.2]).unwrap();
        let s = env.step(&[0.8]).unwrap().next_state;
        assert_eq!(&*s, &[0.0, 0.5, 0.8, 0.2]);
    }

    proptest! {
        #[test]
        fn nearest_is_permutation_invariant(
            factors in prop::collection::vec(-1.0f64..1.0, 2..40),
            target in -1.0f64..1.0,
            seed in 0u64..1000,
        ) {
            // one-dim factors rounded to a coarse grid so ties are common
            let f: Vec<f64> = factors.iter().map(|x| (x * 4.0).round() / 4.0).collect();
            let t = [(target * 4.0).round() / 4.0];
            let mut order: Vec<usize> = (0..f.len()).collect();
            let base = nearest_item(order.iter().map(|&i| (i, &f[i..i + 1])), &t);
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled = nearest_item(order.iter().map(|&i| (i, &f[i..i + 1])), &t);
            prop_assert_eq!(base, shuffled);
        }
    }
}
