use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the update count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected Adam step over `params` (flattened in order).
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        lr: f64,
        params: &mut [&mut Tensor<f32>],
        grads: &[Tensor<f32>],
    ) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let mut off = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            let n = p.len();
            let m = &mut self.m[off..off + n];
            let v = &mut self.v[off..off + n];
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gi = gi as f64;
                let m_new = cfg.beta1 * *mi as f64 + (1.0 - cfg.beta1) * gi;
                let v_new = cfg.beta2 * *vi as f64 + (1.0 - cfg.beta2) * gi * gi;
                *mi = m_new as f32;
                *vi = v_new as f32;
                let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + cfg.eps);
                *w = (*w as f64 - update) as f32;
            }
            off += n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * g / (|g| + eps).
        let mut p = Tensor::new(vec![2], vec![1.0f32, -1.0]);
        let g = Tensor::new(vec![2], vec![0.5f32, -2.0]);
        let mut s = AdamState::new(2);
        s.step(&AdamConfig::default(), 1e-3, &mut [&mut p], &[g]);
        assert!((p.data()[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((p.data()[1] - (-1.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::new(vec![3], vec![0.3f32, 0.1, -0.7]);
        let before = p.clone();
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            s.step(
                &AdamConfig::default(),
                1e-3,
                &mut [&mut p],
                &[Tensor::zeros(vec![3])],
            );
        }
        assert_eq!(p, before);
    }
}
