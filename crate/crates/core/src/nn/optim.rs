use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update, applied in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dim(self.m.len(), params.len()));
        }
        if grads.len() != params.len() {
            return Err(Error::dim(params.len(), grads.len()));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerics(format!("non-finite gradient at index {i}")));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn polyak_update(target: &mut [f64], online: &[f64], tau: f64) -> Result<()> {
    if target.len() != online.len() {
        return Err(Error::dim(target.len(), online.len()));
    }
    if tau == 1.0 {
        target.copy_from_slice(online);
        return Ok(());
    }
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut adam = AdamState::new(3, 0.1);
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // f(x) = x^2 at x = 1: g = 2, m_hat = 2, v_hat = 4, update = lr * 2 / (2 + eps)
        let mut x = vec![1.0];
        let mut adam = AdamState::new(1, 0.1);
        let g = [2.0 * x[0]];
        adam.step(&mut x, &g).unwrap();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((x[0] - expected).abs() < 1e-15);
        assert!((x[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn counter_increments_once_per_call() {
        let mut p = vec![0.5];
        let mut adam = AdamState::new(1, 1e-3);
        for k in 1..=5 {
            adam.step(&mut p, &[0.1]).unwrap();
            assert_eq!(adam.step_count(), k);
        }
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = vec![0.5, 0.5];
        let mut adam = AdamState::new(2, 1e-3);
        assert!(matches!(adam.step(&mut p, &[0.1, f64::NAN]), Err(Error::Numerics(_))));
        assert_eq!(p, vec![0.5, 0.5]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn polyak_edge_cases() {
        let mut t = vec![2.0];
        polyak_update(&mut t, &[4.0], 0.5).unwrap();
        assert_eq!(t, vec![3.0]);
        let mut t = vec![2.0, 1.0];
        polyak_update(&mut t, &[4.0, 5.0], 0.0).unwrap();
        assert_eq!(t, vec![2.0, 1.0]);
        polyak_update(&mut t, &[4.0, 5.0], 1.0).unwrap();
        assert_eq!(t, vec![4.0, 5.0]);
        assert!(matches!(
            polyak_update(&mut t, &[1.0], 0.5),
            Err(Error::Dimension { .. })
        ));
    }

    proptest! {
        #[test]
        fn polyak_contracts_toward_online(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..32),
            tau in 0.0f64..=1.0,
        ) {
            let (mut target, online): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let before: f64 = target.iter().zip(&online).map(|(t, o)| (t - o).powi(2)).sum::<f64>().sqrt();
            polyak_update(&mut target, &online, tau).unwrap();
            let after: f64 = target.iter().zip(&online).map(|(t, o)| (t - o).powi(2)).sum::<f64>().sqrt();
            prop_assert!((after - (1.0 - tau) * before).abs() <= 1e-9 * (1.0 + before));
        }
    }
}
