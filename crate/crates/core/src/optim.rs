//! First-order update rules for parameter lists.

use crate::autodiff::Matrix;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((w, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..w.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Adagrad: per-coordinate steps scaled by the root of the summed squared gradients.
#[derive(Debug, Clone)]
pub struct Adagrad {
    lr: f64,
    eps: f64,
    sum_sq: Vec<Matrix>,
}

impl Adagrad {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            eps: 1e-10,
            sum_sq: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    /// Applies one update and returns the Euclidean norm of the weight change.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> f64 {
        let mut norm_sq = 0.0;
        for ((w, g), acc) in params.iter_mut().zip(grads).zip(&mut self.sum_sq) {
            for i in 0..w.len() {
                acc[i] += g[i] * g[i];
                let delta = self.lr * g[i] / (acc[i].sqrt() + self.eps);
                w[i] -= delta;
                norm_sq += delta * delta;
            }
        }
        norm_sq.sqrt()
    }
}
