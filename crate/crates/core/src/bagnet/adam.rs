use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam moment accumulators with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }

    /// One update of `params` in place. A non-finite gradient leaves both the
    /// parameters and the state untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grad.len()
                },
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch: 0,
                history: Box::default(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    state.step(params, grad, lr)
}
