//! Adam optimizer as a pure state transition.

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates and step counter. At `t = 0` both moments are all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub hyper: AdamParams,
}

impl OptimizerState {
    pub fn new(param_len: usize, hyper: AdamParams) -> Self {
        OptimizerState {
            t: 0,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            hyper,
        }
    }
}

/// One Adam update with bias correction. Returns the updated model and
/// state; inputs are untouched, so identical inputs give bit-identical
/// outputs.
pub fn adam_step(
    model: &ModelParams,
    state: &OptimizerState,
    grad: &[f64],
) -> Result<(ModelParams, OptimizerState)> {
    let n = model.params.len();
    if grad.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: grad.len(),
        });
    }
    if state.m.len() != n || state.v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: state.m.len(),
        });
    }
    let AdamParams {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    let t = state.t + 1;
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);

    let mut params = model.params.clone();
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    for i in 0..n {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok((
        ModelParams {
            arch: model.arch.clone(),
            params,
        },
        OptimizerState {
            t,
            m,
            v,
            hyper: state.hyper,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchDescriptor, Activation, TaskKind};

    fn scalar_model(theta: f64) -> ModelParams {
        // 1-input regression with no bias usage beyond the layout: 2 params.
        let arch =
            ArchDescriptor::new(1, vec![], TaskKind::Regression, Activation::Relu).unwrap();
        ModelParams::new(arch, vec![theta, 0.0]).unwrap()
    }

    #[test]
    fn first_step_closed_form() {
        // theta = 0, g = 1: m_hat = v_hat = 1, so theta' = -lr / (1 + eps).
        let model = scalar_model(0.0);
        let state = OptimizerState::new(2, AdamParams::default());
        let (m2, s2) = adam_step(&model, &state, &[1.0, 0.0]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((m2.params[0] - expected).abs() < 1e-18);
        assert!((m2.params[0] - (-9.9999999e-4)).abs() < 1e-12);
        assert_eq!(s2.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_model_unchanged() {
        let model = scalar_model(0.5);
        let state = OptimizerState::new(2, AdamParams::default());
        let (m2, s2) = adam_step(&model, &state, &[0.0, 0.0]).unwrap();
        assert_eq!(m2.params, model.params);
        assert!(s2.m.iter().all(|&x| x == 0.0));
        assert!(s2.v.iter().all(|&x| x == 0.0));
        assert_eq!(s2.t, 1);
    }

    #[test]
    fn step_is_pure() {
        let model = scalar_model(0.25);
        let mut state = OptimizerState::new(2, AdamParams::default());
        state.t = 3;
        state.m = vec![0.1, -0.2];
        state.v = vec![0.01, 0.02];
        let grad = [0.3, -0.7];
        let (a_m, a_s) = adam_step(&model, &state, &grad).unwrap();
        let (b_m, b_s) = adam_step(&model, &state, &grad).unwrap();
        assert_eq!(a_m.params, b_m.params);
        assert_eq!(a_s, b_s);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let model = scalar_model(0.0);
        let state = OptimizerState::new(2, AdamParams::default());
        assert!(adam_step(&model, &state, &[1.0]).is_err());
    }
}
