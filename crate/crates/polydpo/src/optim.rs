//! Adam optimizer over a flat parameter vector.

use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam state (first/second moment estimates and step counter) for one
/// parameter vector. β₁ = 0.9, β₂ = 0.999, ε = 1e-8 are fixed; the step size
/// comes from the caller on every step.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One bias-corrected update: params ← params − lr·m̂/(√v̂ + ε).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Precondition(format!(
                "optimizer sized for {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Domain(format!("learning rate must be positive, got {lr}")));
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
        Ok(())
    }
}
