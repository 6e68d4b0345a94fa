use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::LengthMismatch {
                what: "adam parameter list",
                got: grads.len().min(params.len()),
                expected: self.m.len(),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (m, v)) in iter {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_only_advances_step() {
        let mut params = vec![Tensor::vector(vec![0.5, -1.0])];
        let before = params.clone();
        let mut adam = AdamState::new(0.1, &params);
        adam.step(&mut params, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m = 0.1, v = 0.001; bias-corrected both are 1.
        let mut params = vec![Tensor::scalar(0.0)];
        let mut adam = AdamState::new(0.1, &params);
        adam.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((params[0].item() - expected).abs() < 1e-15);
        assert!((params[0].item() + 0.0999999990).abs() < 1e-12);
    }

    #[test]
    fn identical_states_give_identical_steps() {
        let p0 = vec![Tensor::vector(vec![0.3, 0.7, -0.2])];
        let g = vec![Tensor::vector(vec![0.01, -2.0, 0.5])];
        let mut a = (p0.clone(), AdamState::new(0.01, &p0));
        let mut b = (p0.clone(), AdamState::new(0.01, &p0));
        for _ in 0..3 {
            a.1.step(&mut a.0, &g).unwrap();
            b.1.step(&mut b.0, &g).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut adam = AdamState::new(0.1, &params);
        assert!(adam.step(&mut params, &[Tensor::zeros(&[3])]).is_err());
    }
}
