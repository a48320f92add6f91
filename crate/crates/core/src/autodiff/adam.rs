//! Adam with bias correction.

use super::{AutodiffError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. Gradients are checked before anything is mutated,
    /// so a rejected step leaves both the parameters and the moments intact.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<(), AutodiffError> {
        if self.config.lr <= 0.0 || !self.config.lr.is_finite() {
            return Err(AutodiffError::InvalidLearningRate(self.config.lr));
        }
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(AutodiffError::ParamCount {
                params: params.len(),
                grads: grads.len(),
            });
        }
        for ((_, name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(AutodiffError::shape("adam_step", p, g));
            }
            if !g.all_finite() {
                return Err(AutodiffError::NonFiniteGradient(name.to_string()));
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(value));
        store
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = single(0.7);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            adam.step(&mut store, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(store.get(store.id_of("w").unwrap()).item(), 0.7);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // m = 0.1, v = 0.001; bias correction gives m_hat = v_hat = 1,
        // so the update is -lr / (1 + eps).
        let mut store = single(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store, &[Tensor::scalar(1.0)]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        let got = store.get(store.id_of("w").unwrap()).item();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert!((got + 0.000999999).abs() < 1e-9);
    }

    #[test]
    fn defaults_match_reported_betas() {
        let c = AdamConfig::default();
        assert_eq!((c.beta1, c.beta2, c.lr), (0.9, 0.999, 1e-3));
    }

    #[test]
    fn rejects_non_finite_gradient_without_mutation() {
        let mut store = single(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        let err = adam.step(&mut store, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(adam.step, 0);
        assert_eq!(store.get(store.id_of("w").unwrap()).item(), 1.0);
    }
}
