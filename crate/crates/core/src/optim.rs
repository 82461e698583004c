//! Adam over flat parameter buffers.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected update at step `t` (1-based). Zeroes `grads`.
    pub fn step(&self, t: u64, params: &mut [f64], grads: &mut [f64], moments: &mut AdamMoments) {
        debug_assert!(t >= 1);
        debug_assert_eq!(params.len(), grads.len());
        moments.resize(params.len());
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let step = self.learning_rate / bc1;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads.iter_mut())
            .zip(moments.m.iter_mut())
            .zip(moments.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * *g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * *g * *g;
            *p -= step * *m / ((*v / bc2).sqrt() + self.eps);
            *g = 0.0;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn resize(&mut self, n: usize) {
        self.m.resize(n, 0.0);
        self.v.resize(n, 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let adam = Adam::new(1e-3);
        let mut p = vec![1.0, -2.0];
        let mut g = vec![0.5, -3.0];
        let mut m = AdamMoments::default();
        adam.step(1, &mut p, &mut g, &mut m);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-2.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_untouched() {
        let adam = Adam::new(1e-3);
        let mut p = vec![0.25; 4];
        let mut g = vec![0.0; 4];
        let mut m = AdamMoments::default();
        for t in 1..10 {
            adam.step(t, &mut p, &mut g, &mut m);
        }
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn minimizes_quadratic() {
        let adam = Adam::new(0.05);
        let mut p = vec![3.0];
        let mut m = AdamMoments::default();
        for t in 1..=2000 {
            let mut g = vec![2.0 * (p[0] - 1.0)];
            adam.step(t, &mut p, &mut g, &mut m);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
