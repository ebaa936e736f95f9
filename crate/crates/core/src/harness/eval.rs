//! Frozen-policy evaluation: click-through rate and offline ranking metrics.

use std::collections::HashSet;

use crate::envs::OfflineRecEnv;
use crate::error::{Error, Result};
use crate::mdp::{derive_seed, ActionVec, Environment};

const STREAM_EVAL: u64 = 0xe7a1;

/// Reset seed of evaluation episode `k`. The same episodes are replayed at
/// every evaluation point, so successive points are comparable.
pub fn eval_episode_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, STREAM_EVAL, k as u64)
}

/// One evaluation step, for the optional evaluation log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStep {
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
}

/// Mean per-step reward over `eval_episodes` episodes, each on a fresh copy
/// of `env` reset with its own derived seed.
pub fn evaluate_ctr<E, P>(policy: P, env: &E, eval_episodes: usize, max_steps: usize, seed: u64) -> Result<f64>
where
    E: Environment,
    P: Fn(&[f64]) -> Result<ActionVec>,
{
    Ok(evaluate_ctr_logged(policy, env, eval_episodes, max_steps, seed)?.0)
}

/// [`evaluate_ctr`], also returning every step it took.
pub fn evaluate_ctr_logged<E, P>(
    policy: P,
    env: &E,
    eval_episodes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<(f64, Vec<EvalStep>)>
where
    E: Environment,
    P: Fn(&[f64]) -> Result<ActionVec>,
{
    if eval_episodes == 0 {
        return Err(Error::config("eval_episodes must be at least 1"));
    }
    let mut log = Vec::with_capacity(eval_episodes * max_steps);
    for k in 0..eval_episodes {
        let mut e = env.clone();
        let mut s = e.reset(eval_episode_seed(seed, k));
        for t in 0..max_steps {
            let out = e.step(&policy(&s)?)?;
            log.push(EvalStep {
                episode: k,
                step: t,
                reward: out.reward,
            });
            s = out.next_state;
            if out.terminal {
                break;
            }
        }
    }
    let ctr = if log.is_empty() {
        0.0
    } else {
        log.iter().map(|s| s.reward).sum::<f64>() / log.len() as f64
    };
    Ok((ctr, log))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineMetrics {
    /// Relevant recommendations over all recommendations.
    pub precision: f64,
    /// Per-episode share of the user's logged relevant items that were
    /// recommended, averaged over episodes.
    pub recall: f64,
    /// Share of steps where the model's relevance call (predicted rating at
    /// or above the threshold) agrees with the realized reward.
    pub accuracy: f64,
    pub episodes: usize,
    /// Episodes whose user holds no relevant item; they add 0 to the recall sum.
    pub degenerate_episodes: usize,
}

pub fn evaluate_offline_metrics<P>(
    policy: P,
    env: &OfflineRecEnv,
    eval_episodes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<OfflineMetrics>
where
    P: Fn(&[f64]) -> Result<ActionVec>,
{
    if eval_episodes == 0 {
        return Err(Error::config("eval_episodes must be at least 1"));
    }
    let mut recs = 0usize;
    let mut hits = 0usize;
    let mut agree = 0usize;
    let mut recall_sum = 0.0;
    let mut degenerate = 0usize;
    for k in 0..eval_episodes {
        let mut e = env.clone();
        let mut s = e.reset(eval_episode_seed(seed, k));
        let user = e.current_user();
        let mut found = HashSet::new();
        for _ in 0..max_steps {
            let out = e.step(&policy(&s)?)?;
            let rec = e.last_recommendation().expect("a step records its recommendation");
            recs += 1;
            if out.reward > 0.0 {
                hits += 1;
            }
            if (rec.predicted >= e.threshold()) == (out.reward > 0.0) {
                agree += 1;
            }
            if rec.logged.is_some_and(|r| r >= e.threshold()) {
                found.insert(rec.item);
            }
            s = out.next_state;
            if out.terminal {
                break;
            }
        }
        let held = e.relevant_item_count(user);
        if held == 0 {
            degenerate += 1;
        } else {
            recall_sum += found.len() as f64 / held as f64;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(OfflineMetrics {
        precision: ratio(hits, recs),
        recall: recall_sum / eval_episodes as f64,
        accuracy: ratio(agree, recs),
        episodes: eval_episodes,
        degenerate_episodes: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use std::cell::{Cell, RefCell};

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::envs::{make_offline_env, MfModel, Rating, RatingsTable, SynthRecConfig, SynthRecEnv};
    use crate::mdp::{StateVec, StepOutcome};

    #[derive(Debug, Clone)]
    struct ConstEnv(f64);

    impl Environment for ConstEnv {
        fn state_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn reset(&mut self, _seed: u64) -> StateVec {
            self.state()
        }
        fn step(&mut self, _a: &[f64]) -> Result<StepOutcome> {
            Ok(StepOutcome {
                next_state: self.state(),
                reward: self.0,
                terminal: false,
            })
        }
        fn state(&self) -> StateVec {
            StateVec::new(vec![0.0]).unwrap()
        }
        fn force_state(&mut self, _s: &[f64]) -> Result<()> {
            Ok(())
        }
        fn reward_range(&self) -> (f64, f64) {
            (0.0, 1.0)
        }
    }

    fn zero(_: &[f64]) -> Result<ActionVec> {
        ActionVec::new(vec![0.0])
    }

    #[test]
    fn constant_rewards_give_extreme_ctr() {
        assert_eq!(evaluate_ctr(zero, &ConstEnv(1.0), 3, 7, 0).unwrap(), 1.0);
        assert_eq!(evaluate_ctr(zero, &ConstEnv(0.0), 3, 7, 0).unwrap(), 0.0);
        assert!(evaluate_ctr(zero, &ConstEnv(1.0), 0, 7, 0).is_err());
        let (_, log) = evaluate_ctr_logged(zero, &ConstEnv(1.0), 3, 7, 0).unwrap();
        assert_eq!(log.len(), 21);
    }

    #[test]
    fn random_policy_without_click_weights_is_a_fair_coin() {
        let env = SynthRecEnv::new(SynthRecConfig {
            click_scale: 0.0,
            ..Default::default()
        })
        .unwrap();
        let rng = RefCell::new(ChaCha8Rng::seed_from_u64(11));
        let policy = |_: &[f64]| ActionVec::new((0..27).map(|_| rng.borrow_mut().random_range(-1.0..=1.0)).collect());
        let (ctr, log) = evaluate_ctr_logged(policy, &env, 120, 20, 4).unwrap();
        let n = log.len() as f64;
        assert!(n >= 2000.0);
        let sigma = (0.25 / n).sqrt();
        assert!((ctr - 0.5).abs() <= 3.0 * sigma, "ctr {ctr}, sigma {sigma}");
    }

    /// Two users and five one-dimensional items at -1, -0.5, 0, 0.5, 1.
    /// User 0 rated items 0, 1, 2 with 5 and item 3 with 2; user 1 rated item 4 with 1.
    fn hand_env() -> OfflineRecEnv {
        let rec = |user, item, rating| Rating {
            user,
            item,
            rating,
            timestamp: 0,
        };
        let table = RatingsTable::from_records(vec![
            rec(0, 0, 5.0),
            rec(0, 1, 5.0),
            rec(0, 2, 5.0),
            rec(0, 3, 2.0),
            rec(1, 4, 1.0),
        ])
        .unwrap();
        let model = MfModel {
            k: 1,
            user_factors: vec![0.0, 0.0],
            item_factors: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            user_bias: vec![0.0, 0.0],
            // Predicted ratings 4.5, 3, 3, 3, 3.
            item_bias: vec![1.5, 0.0, 0.0, 0.0, 0.0],
            global_mean: 3.0,
        };
        make_offline_env(model, &table, 2, 0).unwrap()
    }

    #[test]
    fn hand_episode_metrics() {
        let env = hand_env();
        // A seed whose first evaluation episode draws user 0.
        let seed = (0..)
            .find(|&s| {
                let mut e = env.clone();
                e.reset(eval_episode_seed(s, 0));
                e.current_user() == 0
            })
            .unwrap();
        // Items 0, 3, 1, 4: hit, miss, hit, miss (item 4 is unlogged and predicted 3).
        let targets = [-1.0, 0.5, -0.5, 1.0];
        let step = Cell::new(0);
        let policy = |_: &[f64]| {
            let a = targets[step.get()];
            step.set(step.get() + 1);
            ActionVec::new(vec![a])
        };
        let m = evaluate_offline_metrics(policy, &env, 1, 4, seed).unwrap();
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 2.0 / 3.0);
        // Predicted relevance agrees on items 0, 3 and 4 but not on item 1.
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.degenerate_episodes, 0);
    }

    #[test]
    fn user_without_relevant_items_is_degenerate() {
        let env = hand_env();
        let seed = (0..)
            .find(|&s| {
                let mut e = env.clone();
                e.reset(eval_episode_seed(s, 0));
                e.current_user() == 1
            })
            .unwrap();
        let m = evaluate_offline_metrics(|_: &[f64]| ActionVec::new(vec![1.0]), &env, 1, 3, seed).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.degenerate_episodes, 1);
        for v in [m.precision, m.recall, m.accuracy] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn all_relevant_recommendations_give_unit_precision() {
        let env = hand_env().with_threshold(1.0);
        let m = evaluate_offline_metrics(|_: &[f64]| ActionVec::new(vec![0.0]), &env, 6, 5, 3).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.accuracy, 1.0);
    }
}
