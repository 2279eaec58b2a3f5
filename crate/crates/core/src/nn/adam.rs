use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update of `params` at step `t >= 1`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamMoments,
    cfg: &AdamConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("adam step counter starts at 1".into()));
    }
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::Shape(
            "adam: parameter, gradient and moment lengths differ".into(),
        ));
    }
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over every parameter of a store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    moments: Vec<AdamMoments>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        Self {
            config,
            t: 0,
            moments: params
                .iter()
                .map(|p| AdamMoments::zeros(p.value.len()))
                .collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies the accumulated gradients. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some(p) = params
            .iter()
            .find(|p| p.grad.data().iter().any(|g| !g.is_finite()))
        {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        if params.len() != self.moments.len() {
            return Err(Error::Contract(
                "optimizer built for a different parameter set".into(),
            ));
        }
        self.t += 1;
        for (p, state) in params.iter_mut().zip(&mut self.moments) {
            let grad = p.grad.data().to_vec();
            adam_step(p.value.data_mut(), &grad, state, &self.config, self.t)?;
        }
        Ok(())
    }
}
