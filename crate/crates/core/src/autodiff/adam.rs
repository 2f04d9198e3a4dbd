use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

/// Adam with bias correction.
///
/// State is kept per parameter and advanced only when that parameter takes
/// part in a step, so latent codes outside a minibatch stay frozen.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: BTreeMap<ParamId, AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: BTreeMap::new(),
        }
    }

    pub fn state(&self, id: ParamId) -> Option<&AdamState> {
        self.states.get(&id)
    }

    /// Updates `params` from their stored gradients, then clears those gradients.
    pub fn step(&mut self, store: &mut ParamStore, params: &[ParamId]) -> Result<(), AutodiffError> {
        let lr = self.config.lr;
        self.step_with_lr(store, params, lr)
    }

    pub fn step_with_lr(
        &mut self,
        store: &mut ParamStore,
        params: &[ParamId],
        lr: f64,
    ) -> Result<(), AutodiffError> {
        for &id in params {
            if store.grad(id).is_none() {
                return Err(AutodiffError::MissingGradient(store.get(id).name.clone()));
            }
        }
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        for &id in params {
            let p = store.get_mut(id);
            let grad = p.grad.take().expect("checked above");
            let n = p.value.len();
            let state = self.states.entry(id).or_insert_with(|| AdamState {
                first_moment: vec![0.0; n],
                second_moment: vec![0.0; n],
                step_count: 0,
            });
            state.step_count += 1;
            let t = state.step_count as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let values = p.value.data_mut();
            for i in 0..n {
                let g = grad.data()[i];
                let m = &mut state.first_moment[i];
                let v = &mut state.second_moment[i];
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.grad = Some(super::Tensor::zeros(p.value.shape()));
        }
        Ok(())
    }
}
