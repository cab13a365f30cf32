use serde::{Deserialize, Serialize};

use super::param::Parameter;

/// Bias-corrected Adam. Gradients are zeroed after each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn step(&self, p: &mut Parameter) {
        {
            let (values, grad, m, v, t) = p.adam_parts();
            *t += 1;
            let bc1 = 1.0 - self.beta1.powi(*t as i32);
            let bc2 = 1.0 - self.beta2.powi(*t as i32);
            let values = values.as_mut_slice();
            let grad = grad.as_slice();
            let m = m.as_mut_slice();
            let v = v.as_mut_slice();
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        p.zero_grad();
    }

    pub fn step_all<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        for p in params {
            self.step(p);
        }
    }
}
