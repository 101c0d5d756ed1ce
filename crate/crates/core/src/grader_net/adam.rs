use serde::{Deserialize, Serialize};

use crate::error::{geometry, Result};

/// Bias-corrected Adam over a flat parameter vector.
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
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(geometry!(
                "adam state has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_size() {
        // m_hat = v_hat = 1 after one step with g = 1: delta = -lr / (1 + eps)
        let mut s = AdamState::new(1);
        let mut p = [0.0];
        s.step(&mut p, &[1.0], 3e-4).unwrap();
        let expected = -3e-4 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
        assert!((p[0] + 2.99999997e-4).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let mut s = AdamState::new(3);
        let mut p = [1.0, -2.0, 0.5];
        s.step(&mut p, &[0.0; 3], 3e-4).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut s = AdamState::new(1);
        let mut theta = [1.0];
        let mut prev = f64::INFINITY;
        for step in 0..200 {
            let g = [2.0 * theta[0]];
            s.step(&mut theta, &g, 3e-4).unwrap();
            let f = theta[0] * theta[0];
            if step > 0 {
                assert!(f < prev, "step {step}: {f} >= {prev}");
            }
            prev = f;
        }
        assert!(prev < 1.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2);
        assert!(s.step(&mut [0.0; 3], &[0.0; 3], 0.1).is_err());
    }
}
