//! Biased matrix factorization trained by SGD; the offline reward oracle.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ratings::{RatingsTable, MAX_RATING, MIN_RATING};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MfModel {
    pub k: usize,
    /// `n_users x k`, row-major.
    pub user_factors: Vec<f64>,
    /// `n_items x k`, row-major.
    pub item_factors: Vec<f64>,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub global_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfParams {
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub reg: f64,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for MfParams {
    fn default() -> Self {
        Self {
            k: 16,
            epochs: 20,
            lr: 0.01,
            reg: 0.05,
            holdout_frac: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfReport {
    /// `None` when the holdout split is empty.
    pub holdout_rmse: Option<f64>,
    /// Regularized training objective after each epoch, per training sample.
    pub train_loss: Vec<f64>,
}

impl MfModel {
    pub fn n_users(&self) -> usize {
        self.user_bias.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_bias.len()
    }

    pub fn user_factor(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.k..(u + 1) * self.k]
    }

    pub fn item_factor(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.k..(i + 1) * self.k]
    }

    fn raw(&self, u: usize, i: usize) -> f64 {
        let dot: f64 = self
            .user_factor(u)
            .iter()
            .zip(self.item_factor(i))
            .map(|(a, b)| a * b)
            .sum();
        self.global_mean + self.user_bias[u] + self.item_bias[i] + dot
    }

    /// Predicted rating, clipped to the rating scale.
    pub fn predict(&self, u: usize, i: usize) -> f64 {
        self.raw(u, i).clamp(MIN_RATING, MAX_RATING)
    }

    fn objective(&self, data: &[(usize, usize, f64)], reg: f64) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let total: f64 = data
            .iter()
            .map(|&(u, i, r)| {
                let e = r - self.raw(u, i);
                e * e
                    + reg
                        * (self.user_bias[u].powi(2)
                            + self.item_bias[i].powi(2)
                            + sq(self.user_factor(u))
                            + sq(self.item_factor(i)))
            })
            .sum();
        total / data.len() as f64
    }

    pub fn rmse(&self, data: &[(usize, usize, f64)]) -> Option<f64> {
        if data.is_empty() {
            return None;
        }
        let se: f64 = data.iter().map(|&(u, i, r)| (r - self.predict(u, i)).powi(2)).sum();
        Some((se / data.len() as f64).sqrt())
    }
}

/// `(user index, item index, rating)`.
pub type IndexedRating = (usize, usize, f64);

/// Shuffles the table with `seed` and splits off the first `holdout_frac`
/// share as the holdout set. Returns `(train, holdout)`.
pub fn split_holdout(table: &RatingsTable, holdout_frac: f64, seed: u64) -> (Vec<IndexedRating>, Vec<IndexedRating>) {
    let mut all: Vec<_> = table.indexed().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let n_hold = (holdout_frac * all.len() as f64).floor() as usize;
    let train = all.split_off(n_hold);
    (train, all)
}

pub fn train_mf(table: &RatingsTable, p: &MfParams) -> Result<(MfModel, MfReport)> {
    if table.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..1.0).contains(&p.holdout_frac) {
        return Err(Error::config("holdout_frac must lie in [0, 1)"));
    }
    if !(p.lr > 0.0 && p.lr.is_finite()) || !(p.reg >= 0.0 && p.reg.is_finite()) {
        return Err(Error::config("lr must be positive and reg non-negative"));
    }
    let (mut train, holdout) = split_holdout(table, p.holdout_frac, p.seed);
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_add(1));
    let init = Normal::new(0.0, 0.1).unwrap();
    let k = p.k;
    let mut model = MfModel {
        k,
        user_factors: (0..table.n_users() * k).map(|_| init.sample(&mut rng)).collect(),
        item_factors: (0..table.n_items() * k).map(|_| init.sample(&mut rng)).collect(),
        user_bias: vec![0.0; table.n_users()],
        item_bias: vec![0.0; table.n_items()],
        global_mean: train.iter().map(|t| t.2).sum::<f64>() / train.len() as f64,
    };
    let mut train_loss = Vec::with_capacity(p.epochs);
    for _ in 0..p.epochs {
        train.shuffle(&mut rng);
        for &(u, i, r) in &train {
            let e = r - model.raw(u, i);
            model.user_bias[u] += p.lr * (e - p.reg * model.user_bias[u]);
            model.item_bias[i] += p.lr * (e - p.reg * model.item_bias[i]);
            for f in 0..k {
                let pu = model.user_factors[u * k + f];
                let qi = model.item_factors[i * k + f];
                model.user_factors[u * k + f] += p.lr * (e * qi - p.reg * pu);
                model.item_factors[i * k + f] += p.lr * (e * pu - p.reg * qi);
            }
        }
        let loss = model.objective(&train, p.reg);
        if !loss.is_finite() {
            return Err(Error::Numerics("matrix factorization diverged".into()));
        }
        train_loss.push(loss);
    }
    let report = MfReport {
        holdout_rmse: model.rmse(&holdout),
        train_loss,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::ratings::Rating;

    /// r = 1 + 4 * a_u * b_i with a, b in [0, 1]: exactly rank one.
    fn rank_one_table(n_users: u64, n_items: u64) -> RatingsTable {
        let a = |u: u64| 0.2 + 0.8 * ((u * 37 % 101) as f64 / 100.0);
        let b = |i: u64| 0.1 + 0.9 * ((i * 53 % 97) as f64 / 96.0);
        let mut recs = Vec::new();
        for u in 0..n_users {
            for i in 0..n_items {
                recs.push(Rating {
                    user: u,
                    item: i,
                    rating: 1.0 + 4.0 * a(u) * b(i),
                    timestamp: (u * n_items + i) as i64,
                });
            }
        }
        RatingsTable::from_records(recs).unwrap()
    }

    #[test]
    fn bias_only_model_when_rank_zero() {
        let table = rank_one_table(10, 8);
        let (m, _) = train_mf(
            &table,
            &MfParams {
                k: 0,
                epochs: 5,
                ..Default::default()
            },
        )
        .unwrap();
        for u in 0..10 {
            for i in 0..8 {
                let expected = (m.global_mean + m.user_bias[u] + m.item_bias[i]).clamp(1.0, 5.0);
                assert_eq!(m.predict(u, i), expected);
            }
        }
    }

    #[test]
    fn rank_one_instance_is_recovered() {
        let table = rank_one_table(60, 40);
        let (m, rep) = train_mf(
            &table,
            &MfParams {
                k: 2,
                epochs: 300,
                lr: 0.02,
                reg: 1e-5,
                holdout_frac: 0.2,
                seed: 3,
            },
        )
        .unwrap();
        let rmse = rep.holdout_rmse.unwrap();
        assert!(rmse <= 0.05, "holdout rmse {rmse}");
        for u in 0..m.n_users() {
            for i in 0..m.n_items() {
                assert!((1.0..=5.0).contains(&m.predict(u, i)));
            }
        }
    }

    #[test]
    fn loss_non_increasing_at_small_lr() {
        let table = rank_one_table(30, 20);
        let (_, rep) = train_mf(
            &table,
            &MfParams {
                k: 2,
                epochs: 40,
                lr: 1e-3,
                reg: 0.01,
                holdout_frac: 0.2,
                seed: 5,
            },
        )
        .unwrap();
        for w in rep.train_loss.windows(2) {
            assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn predictions_clipped_and_errors() {
        let table = rank_one_table(5, 5);
        let (m, rep) = train_mf(
            &table,
            &MfParams {
                k: 3,
                epochs: 2,
                lr: 0.5,
                reg: 0.0,
                holdout_frac: 0.0,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(rep.holdout_rmse, None);
        for u in 0..5 {
            for i in 0..5 {
                assert!((1.0..=5.0).contains(&m.predict(u, i)));
            }
        }
        assert!(matches!(
            train_mf(
                &table,
                &MfParams {
                    holdout_frac: 1.0,
                    ..Default::default()
                }
            ),
            Err(Error::Config(_))
        ));
    }
}
