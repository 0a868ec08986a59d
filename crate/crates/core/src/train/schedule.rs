//! Plateau learning-rate schedule and the Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::unet3d::Param;

/// A validation loss counts as an improvement only if it beats the best so
/// far by at least this much.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub lr: f64,
    pub best: f64,
    pub epochs_without_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler { factor, patience, lr, best: f64::INFINITY, epochs_without_improvement: 0 }
    }

    /// Records one epoch's validation loss and returns the learning rate
    /// for the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - IMPROVEMENT_THRESHOLD {
            self.best = val_loss;
            self.epochs_without_improvement = 0;
        } else {
            self.epochs_without_improvement += 1;
            if self.epochs_without_improvement >= self.patience {
                self.lr *= self.factor;
                self.epochs_without_improvement = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after replaying a whole validation-loss history from `lr`.
pub fn plateau_scheduler(history: &[f64], lr: f64, factor: f64, patience: usize) -> f64 {
    let mut s = PlateauScheduler::new(lr, factor, patience);
    for &v in history {
        s.step(v);
    }
    s.lr
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &[Param<f32>]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Param<f32>], grads: &[Vec<f32>], lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p.data[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
