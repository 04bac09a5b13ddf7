use serde::{Deserialize, Serialize};

use super::params::{ParamStore, Parameter};
use super::tensor::Real;
use crate::error::{Error, Result};

/// Adam hyperparameters and step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: f64,
}

impl Default for OptimizerState {
    fn default() -> Self {
        OptimizerState {
            step: 0,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 2.0,
        }
    }
}

impl OptimizerState {
    pub fn with_lr(lr: f64) -> Self {
        OptimizerState {
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::invalid("eps must be > 0"));
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            return Err(Error::invalid("max_grad_norm must be > 0"));
        }
        Ok(())
    }
}

/// Scale all gradients jointly so their L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<F: Real>(params: &mut ParamStore<F>, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm {
        let s = F::lit(max_norm / norm);
        for p in params.iter_mut() {
            p.grad.scale_in_place(s);
        }
    }
    norm
}

/// Bias-corrected Adam update over every parameter, then zero the gradients.
/// Non-finite gradients abort the step before anything is modified.
pub fn adam_step<F: Real>(params: &mut ParamStore<F>, state: &mut OptimizerState) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", p.name)));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (F::lit(state.beta1), F::lit(state.beta2));
    let (one_b1, one_b2) = (F::lit(1.0 - state.beta1), F::lit(1.0 - state.beta2));
    let (bc1, bc2) = (F::lit(bc1), F::lit(bc2));
    let (lr, eps) = (F::lit(state.lr), F::lit(state.eps));
    for p in params.iter_mut() {
        let Parameter { value, grad, m, v, .. } = p;
        let (value, grad, m, v) = (value.data_mut(), grad.data(), m.data_mut(), v.data_mut());
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + one_b1 * g;
            v[i] = b2 * v[i] + one_b2 * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.zero_grad();
    Ok(())
}
