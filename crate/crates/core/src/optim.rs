//! SGD and Adam over lists of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First-moment buffers, one per parameter tensor (empty for SGD).
    pub m: Vec<Vec<f64>>,
    /// Second-moment buffers.
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Self { kind: OptimizerKind::Sgd, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![], v: vec![], step: 0 }
    }

    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8, sized for `params`.
    pub fn adam(lr: f64, params: &[Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} params but {} grads", params.len(), grads.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
            }
        }
        if self.lr < 0.0 {
            return Err(Error::Invalid(format!("negative learning rate {}", self.lr)));
        }
        if self.kind == OptimizerKind::Adam
            && (self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel()))
        {
            return Err(Error::Shape("Adam moment buffers do not match parameters".into()));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    if self.lr == 0.0 {
                        continue;
                    }
                    for (w, gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for (j, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gi;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gi * gi;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        // lr = 0 must leave signed zeros untouched
                        if self.lr != 0.0 {
                            *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
