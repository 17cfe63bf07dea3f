use serde::{Deserialize, Serialize};

use super::params::{GradStore, ParamStore};
use super::{NumError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for every parameter of one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.v
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One bias-corrected Adam update. A non-finite gradient leaves both the
    /// parameters and the state untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore) -> Result<(), NumError> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(NumError::Shape("optimizer state does not match parameters".into()));
        }
        if !grads.all_finite() {
            return Err(NumError::Divergence("non-finite gradient".into()));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.get(id).data();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    params: &mut ParamStore,
    grads: &GradStore,
    state: &mut AdamState,
) -> Result<(), NumError> {
    state.step(params, grads)
}
