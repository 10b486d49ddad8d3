use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam with bias-corrected moments. Moment buffers are shaped on the
/// first step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place. Refuses the whole step, leaving params and
    /// state untouched, if any gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), NnError> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(NnError::Shape);
        }
        if !grads.iter().all(|g| g.iter().all(|v| v.is_finite())) {
            return Err(NnError::NonFiniteGradient);
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(NnError::Shape);
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![0.5, -1.25, 3.0];
        let before = p.clone();
        adam.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.05));
        let mut theta = vec![1.0];
        for _ in 0..2000 {
            let g = 2.0 * theta[0];
            adam.step(&mut [&mut theta], &[&[g]]).unwrap();
        }
        assert!(theta[0].abs() < 1e-3, "theta = {}", theta[0]);
    }

    #[test]
    fn non_finite_gradient_is_refused() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![1.0, 2.0];
        let err = adam.step(&mut [&mut p], &[&[0.1, f64::NAN]]).unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient);
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(adam.steps(), 0);
        assert_eq!(adam.step(&mut [&mut p], &[&[0.1]]), Err(NnError::Shape));
    }
}
