//! Paired sliding-window reward histograms and the divergence between them.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Observational,
    Intervened,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub bins: usize,
    /// Additive count per bin.
    pub smoothing: f64,
    pub capacity: usize,
    /// Samples each window must hold before a divergence is reported.
    pub warmup: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            bins: 20,
            smoothing: 1.0,
            capacity: 512,
            warmup: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RewardDistEstimator {
    cfg: EstimatorConfig,
    lo: f64,
    hi: f64,
    observational: VecDeque<f64>,
    intervened: VecDeque<f64>,
}

impl RewardDistEstimator {
    pub fn new(cfg: EstimatorConfig, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config(format!("estimator range [{lo}, {hi}] is empty")));
        }
        if cfg.bins == 0 || cfg.capacity == 0 {
            return Err(Error::config(
                "estimator needs at least one bin and a positive capacity",
            ));
        }
        if cfg.warmup > cfg.capacity {
            return Err(Error::config("estimator warm-up exceeds window capacity"));
        }
        if !(cfg.smoothing >= 0.0 && cfg.smoothing.is_finite()) {
            return Err(Error::config("smoothing must be finite and non-negative"));
        }
        Ok(Self {
            observational: VecDeque::with_capacity(cfg.capacity),
            intervened: VecDeque::with_capacity(cfg.capacity),
            cfg,
            lo,
            hi,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn window(&self, w: Window) -> &VecDeque<f64> {
        match w {
            Window::Observational => &self.observational,
            Window::Intervened => &self.intervened,
        }
    }

    pub fn len(&self, w: Window) -> usize {
        self.window(w).len()
    }

    /// Appends a reward, clamped into range, evicting the oldest when full.
    pub fn record(&mut self, w: Window, reward: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::InvalidReward);
        }
        let v = reward.clamp(self.lo, self.hi);
        let cap = self.cfg.capacity;
        let win = match w {
            Window::Observational => &mut self.observational,
            Window::Intervened => &mut self.intervened,
        };
        if win.len() == cap {
            win.pop_front();
        }
        win.push_back(v);
        Ok(())
    }

    /// Equal-width bin of `v`; the top edge belongs to the last bin.
    pub fn bin_of(&self, v: f64) -> usize {
        let b = self.cfg.bins;
        let x = ((v - self.lo) / (self.hi - self.lo) * b as f64).floor();
        if x.is_nan() || x < 0.0 {
            0
        } else {
            (x as usize).min(b - 1)
        }
    }

    /// Smoothed histogram `(count_i + a) / (n + bins * a)`.
    pub fn histogram(&self, w: Window) -> Result<Vec<f64>> {
        let win = self.window(w);
        if win.is_empty() {
            return Err(Error::InsufficientData {
                needed: 1,
                available: 0,
            });
        }
        let mut counts = vec![0.0; self.cfg.bins];
        for &v in win {
            counts[self.bin_of(v)] += 1.0;
        }
        let a = self.cfg.smoothing;
        let total = win.len() as f64 + self.cfg.bins as f64 * a;
        Ok(counts.into_iter().map(|c| (c + a) / total).collect())
    }

    pub fn is_warm(&self) -> bool {
        self.observational.len() >= self.cfg.warmup && self.intervened.len() >= self.cfg.warmup
    }

    /// KL(intervened || observational), or `None` before warm-up.
    pub fn divergence(&self) -> Result<Option<f64>> {
        if !self.is_warm() || self.observational.is_empty() || self.intervened.is_empty() {
            return Ok(None);
        }
        let p = self.histogram(Window::Intervened)?;
        let q = self.histogram(Window::Observational)?;
        kl_divergence(&p, &q).map(Some)
    }
}

/// `sum_i p_i ln(p_i / q_i)` in nats, with `0 ln(0 / q) = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim(p.len(), q.len()));
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::Support(i));
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kl_reference_values() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1)
        let oracle = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let forward = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((forward - oracle).abs() < 1e-15);
        assert!((forward - 0.5108).abs() < 1e-4);
        let backward = kl_divergence(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        assert!((backward - 0.3681).abs() < 1e-4);
    }

    #[test]
    fn kl_errors() {
        assert!(matches!(
            kl_divergence(&[1.0], &[0.5, 0.5]),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::Support(1))
        ));
        assert_eq!(kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 2f64.ln());
    }

    #[test]
    fn one_hot_without_smoothing() {
        let cfg = EstimatorConfig {
            bins: 4,
            smoothing: 0.0,
            ..Default::default()
        };
        let mut e = RewardDistEstimator::new(cfg, 0.0, 1.0).unwrap();
        for _ in 0..10 {
            e.record(Window::Observational, 0.6).unwrap();
        }
        assert_eq!(e.histogram(Window::Observational).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            e.histogram(Window::Intervened),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn out_of_range_values_clamp_to_edge_bins() {
        let mut e = RewardDistEstimator::new(
            EstimatorConfig {
                bins: 5,
                smoothing: 0.0,
                ..Default::default()
            },
            -1.0,
            1.0,
        )
        .unwrap();
        e.record(Window::Intervened, -7.0).unwrap();
        e.record(Window::Intervened, 3.0).unwrap();
        e.record(Window::Intervened, 1.0).unwrap();
        assert_eq!(
            e.histogram(Window::Intervened).unwrap(),
            vec![1.0 / 3.0, 0.0, 0.0, 0.0, 2.0 / 3.0]
        );
        assert!(matches!(
            e.record(Window::Intervened, f64::NAN),
            Err(Error::InvalidReward)
        ));
    }

    #[test]
    fn window_is_bounded_fifo() {
        let cfg = EstimatorConfig {
            bins: 2,
            smoothing: 0.0,
            capacity: 3,
            warmup: 2,
        };
        let mut e = RewardDistEstimator::new(cfg, 0.0, 1.0).unwrap();
        for v in [0.0, 0.0, 0.0, 1.0, 1.0] {
            e.record(Window::Observational, v).unwrap();
        }
        assert_eq!(e.len(Window::Observational), 3);
        assert_eq!(e.histogram(Window::Observational).unwrap(), vec![1.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn divergence_waits_for_warmup() {
        let cfg = EstimatorConfig {
            warmup: 3,
            ..Default::default()
        };
        let mut e = RewardDistEstimator::new(cfg, 0.0, 1.0).unwrap();
        for i in 0..3 {
            assert_eq!(e.divergence().unwrap(), None);
            e.record(Window::Observational, 1.0).unwrap();
            if i < 2 {
                e.record(Window::Intervened, 0.0).unwrap();
            }
        }
        assert_eq!(e.divergence().unwrap(), None);
        e.record(Window::Intervened, 0.0).unwrap();
        assert!(e.divergence().unwrap().unwrap() > 0.0);
    }

    #[test]
    fn uniform_samples_fill_bins_evenly() {
        let cfg = EstimatorConfig {
            capacity: 10_000,
            smoothing: 0.0,
            ..Default::default()
        };
        let mut e = RewardDistEstimator::new(cfg, -2.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10_000 {
            e.record(Window::Observational, rng.random_range(-2.0..3.0)).unwrap();
        }
        for p in e.histogram(Window::Observational).unwrap() {
            assert!((p - 0.05).abs() <= 0.01, "{p}");
        }
    }

    fn distribution() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, 2..12).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn kl_is_non_negative_and_zero_on_equality(p in distribution(), seed in 0u64..1000) {
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q: Vec<f64> = {
                let raw: Vec<f64> = p.iter().map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            };
            let d = kl_divergence(&p, &q).unwrap();
            prop_assert!(d >= 0.0);
            if p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-6) {
                prop_assert!(d > 0.0);
            }
        }

        #[test]
        fn smoothed_histograms_are_distributions(
            values in prop::collection::vec(-5.0f64..5.0, 1..300),
            smoothing in 0.01f64..3.0,
        ) {
            let cfg = EstimatorConfig { smoothing, ..Default::default() };
            let mut e = RewardDistEstimator::new(cfg, -1.0, 1.0).unwrap();
            for v in &values {
                e.record(Window::Intervened, *v).unwrap();
            }
            let h = e.histogram(Window::Intervened).unwrap();
            prop_assert!(h.iter().all(|&x| x > 0.0));
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // Gibbs: cross-entropy against anything else is at least the entropy
            let entropy: f64 = -h.iter().map(|p| p * p.ln()).sum::<f64>();
            let uniform = vec![1.0 / h.len() as f64; h.len()];
            let cross: f64 = -h.iter().zip(&uniform).map(|(p, q)| p * q.ln()).sum::<f64>();
            prop_assert!(cross >= entropy - 1e-12);
            prop_assert_eq!(kl_divergence(&h, &h).unwrap(), 0.0);
        }
    }
}
