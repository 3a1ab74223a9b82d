//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

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
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("Adam epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Moment accumulators for one ordered list of parameter tensors. The list
/// order must stay fixed for the life of the state.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::dim("adam_step", p.shape(), g.shape()));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::Contract("parameter list changed between Adam steps".into()));
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let pd = p.data_mut();
            for (((w, &gi), mi), vi) in pd
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Tensor::zeros(2, 2)]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        adam.step(&mut [&mut p], &[Tensor::scalar(2.0)]).unwrap();
        let m1 = adam.first_moments()[0].data()[0];
        let v1 = adam.second_moments()[0].data()[0];
        adam.step(&mut [&mut p], &[Tensor::scalar(0.0)]).unwrap();
        assert!(adam.first_moments()[0].data()[0].abs() < m1.abs());
        assert!(adam.second_moments()[0].data()[0] < v1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let lr = 0.01;
        let mut p = Tensor::from_rows(&[[1.0, 1.0, 1.0]]).unwrap();
        let g = Tensor::from_rows(&[[0.3, -7.0, 1e-3]]).unwrap();
        let mut adam = AdamState::new(AdamConfig::with_lr(lr)).unwrap();
        adam.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
        for (w, gi) in p.data().iter().zip(g.data()) {
            let expected = 1.0 - lr * gi / (gi.abs() + 1e-8);
            assert!((w - expected).abs() < 1e-15);
            assert!(((1.0 - w).abs() - lr).abs() < 1e-7);
        }
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        let mut prev = 0.0;
        for _ in 0..100 {
            adam.step(&mut [&mut p], &[Tensor::scalar(0.5)]).unwrap();
            let now = p.data()[0];
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut p = Tensor::zeros(2, 2);
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        let err = adam.step(&mut [&mut p], &[Tensor::zeros(2, 3)]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(AdamState::new(AdamConfig::with_lr(0.0)).is_err());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(bad).is_err());
    }
}
