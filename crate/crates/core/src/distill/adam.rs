//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Adam { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Zeroes both moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        for b in self.m.iter_mut().chain(self.v.iter_mut()) {
            b.fill(T::zero());
        }
    }

    /// One update; a missing gradient is treated as zero.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Option<Tensor<T>>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match the parameters");
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(c.eps));
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i].as_ref().map(|g| g.data());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::<f64>::from_vec(vec![0.3, -1.2])];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[Some(Tensor::zeros(&[2]))], 0.1);
        opt.step(&mut p, &[None], 0.1);
        assert_eq!(p[0].data(), &[0.3, -1.2]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[Some(Tensor::scalar(1.0))], 0.1);
        let expected = -0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_are_bounded() {
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let mut prev = 0.0;
        for _ in 0..500 {
            opt.step(&mut p, &[Some(Tensor::scalar(-3.0))], 0.01);
            let d = p[0].item() - prev;
            assert!(d > 0.0 && d <= 0.01 + 1e-12);
            prev = p[0].item();
        }
    }

    #[test]
    fn reset_restores_fresh_state() {
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[Some(Tensor::scalar(5.0))], 0.1);
        opt.reset();
        assert_eq!(opt.steps(), 0);
        let before = p[0].item();
        opt.step(&mut p, &[Some(Tensor::scalar(1.0))], 0.1);
        assert!((p[0].item() - before + 0.1).abs() < 1e-9);
    }
}
