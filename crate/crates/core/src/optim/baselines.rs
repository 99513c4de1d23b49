//! Textbook first-order baselines.

use crate::vector::{GradVector, ParamVector};

/// Heavy-ball SGD: `buf = mu buf + g`, `delta = -lr buf`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    buf: Vec<f64>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Self { momentum, buf: Vec::new() }
    }

    pub fn step(&mut self, grad: &GradVector, lr: f64) -> ParamVector {
        if self.buf.len() != grad.len() {
            self.buf = vec![0.0; grad.len()];
        }
        for (b, g) in self.buf.iter_mut().zip(grad.iter()) {
            *b = self.momentum * *b + g;
        }
        ParamVector::new(self.buf.iter().map(|b| -lr * b).collect())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, grad: &GradVector, lr: f64) -> ParamVector {
        if self.m.len() != grad.len() {
            self.m = vec![0.0; grad.len()];
            self.v = vec![0.0; grad.len()];
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let delta = grad
            .iter()
            .enumerate()
            .map(|(i, g)| {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                -lr * m_hat / (v_hat.sqrt() + self.eps)
            })
            .collect();
        ParamVector::new(delta)
    }
}
