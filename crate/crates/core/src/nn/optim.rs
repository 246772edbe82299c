//! Adam with global-norm gradient clipping.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::layers::Param;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients whose global norm exceeds this are rescaled to it.
    pub clip_norm: f64,
    step: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, clip_norm: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// Applies one update using `grad_scale · grad` as the gradient; returns
    /// the (scaled, pre-clipping) global gradient norm.
    pub fn step(&mut self, params: &mut [&mut Param], grad_scale: f64) -> f64 {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        let norm = grad_scale
            * Float::sqrt(
                params
                    .iter()
                    .flat_map(|p| p.grad.iter())
                    .map(|g| g * g)
                    .sum::<f64>(),
            );
        let scale = if norm > self.clip_norm && norm > 0.0 {
            grad_scale * self.clip_norm / norm
        } else {
            grad_scale
        };
        self.step += 1;
        let bc1 = 1.0 - Float::powi(self.beta1, self.step as i32);
        let bc2 = 1.0 - Float::powi(self.beta2, self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                p.value[i] -=
                    self.learning_rate * (m[i] / bc1) / (Float::sqrt(v[i] / bc2) + self.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::new("p".to_string(), vec![2], vec![1.0, -1.0]);
        p.grad = vec![0.3, -7.0];
        let mut opt = Adam::new(0.01, 1e9);
        opt.step(&mut [&mut p], 1.0);
        assert!((p.value[0] - 0.99).abs() < 1e-9);
        assert!((p.value[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new("p".to_string(), vec![3], vec![4.0, -2.0, 9.0]);
        let target = [1.0, 2.0, 3.0];
        let mut opt = Adam::new(0.05, 10.0);
        for _ in 0..2000 {
            for i in 0..3 {
                p.grad[i] = 2.0 * (p.value[i] - target[i]);
            }
            opt.step(&mut [&mut p], 1.0);
        }
        for i in 0..3 {
            assert!((p.value[i] - target[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn clipping_reports_unclipped_norm() {
        let mut p = Param::new("p".to_string(), vec![2], vec![0.0, 0.0]);
        p.grad = vec![3.0, 4.0];
        let mut opt = Adam::new(0.1, 1.0);
        assert!((opt.step(&mut [&mut p], 2.0) - 10.0).abs() < 1e-12);
    }
}
