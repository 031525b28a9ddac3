//! First-order optimizers: Adam, Adamax, Adadelta, plus the inverse-sqrt
//! warmup schedule used by the sequence-to-sequence trainer.
//!
//! Each instance owns the state for one parameter tensor. Trainers keep one
//! instance per tensor in a fixed order, so runs are bit-deterministic.

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One descent step on `loss` gradient `g`.
    pub fn step(&mut self, p: &mut [f64], g: &[f64]) {
        let lr = self.lr;
        self.step_with_lr(p, g, lr);
    }

    /// Same, with an externally scheduled learning rate.
    pub fn step_with_lr(&mut self, p: &mut [f64], g: &[f64], lr: f64) {
        assert_eq!(p.len(), self.m.len());
        assert_eq!(g.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Adamax: the infinity-norm variant of Adam.
#[derive(Debug, Clone)]
pub struct Adamax {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    u: Vec<f64>,
}

impl Adamax {
    pub fn new(lr: f64, len: usize) -> Self {
        Adamax { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; len], u: vec![0.0; len] }
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64]) {
        assert_eq!(p.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.u[i] = (self.beta2 * self.u[i]).max(g[i].abs());
            p[i] -= self.lr * self.m[i] / (bc1 * (self.u[i] + self.eps));
        }
    }
}

/// Adadelta with a learning-rate multiplier on the update, as in common
/// deep-learning toolkits (the original formulation fixes lr = 1).
#[derive(Debug, Clone)]
pub struct Adadelta {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    acc_grad: Vec<f64>,
    acc_update: Vec<f64>,
}

impl Adadelta {
    pub fn new(lr: f64, len: usize) -> Self {
        Adadelta { lr, rho: 0.9, eps: 1e-6, acc_grad: vec![0.0; len], acc_update: vec![0.0; len] }
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64]) {
        assert_eq!(p.len(), self.acc_grad.len());
        for i in 0..p.len() {
            self.acc_grad[i] = self.rho * self.acc_grad[i] + (1.0 - self.rho) * g[i] * g[i];
            let update = ((self.acc_update[i] + self.eps) / (self.acc_grad[i] + self.eps)).sqrt() * g[i];
            self.acc_update[i] = self.rho * self.acc_update[i] + (1.0 - self.rho) * update * update;
            p[i] -= self.lr * update;
        }
    }
}

/// lrate = d_model^-0.5 * min(step^-0.5, step * warmup^-1.5), steps from 1.
pub fn warmup_lr(d_model: usize, warmup_steps: usize, step: usize) -> f64 {
    assert!(step >= 1);
    let s = step as f64;
    let w = (warmup_steps.max(1)) as f64;
    (d_model as f64).powf(-0.5) * (s.powf(-0.5)).min(s * w.powf(-1.5))
}
