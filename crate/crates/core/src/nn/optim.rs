use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    /// Variance-rectified Adam.
    RAdam,
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rectification switches on once `ρ_t` exceeds this.
    pub rect_threshold: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamStore) -> Self {
        Optimizer {
            kind,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            rect_threshold: 5.0,
            step: 0,
            m: params.values().iter().map(|t| vec![0.0; t.len()]).collect(),
            v: params.values().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn adam(params: &ParamStore) -> Self {
        Self::new(OptimizerKind::Adam, params)
    }

    pub fn radam(params: &ParamStore) -> Self {
        Self::new(OptimizerKind::RAdam, params)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, index: usize) -> (&[f64], &[f64]) {
        (&self.m[index], &self.v[index])
    }

    /// `(ρ_t, rectification factor)` at step `t`; the factor is `None` when
    /// the variance estimate is not yet trusted.
    pub fn rectification(&self, t: u64) -> (f64, Option<f64>) {
        let b2 = self.beta2;
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let b2t = b2.powi(t as i32);
        let rho = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
        if rho > self.rect_threshold {
            let r = ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt();
            (rho, Some(r))
        } else {
            (rho, None)
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape("one gradient per parameter is required"));
        }
        for (i, (g, p)) in grads.iter().zip(params.values()).enumerate() {
            if g.shape() != p.shape() {
                return Err(Error::shape(format!(
                    "gradient of {} has shape {:?}, parameter {:?}",
                    params.names()[i],
                    g.shape(),
                    p.shape()
                )));
            }
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(params.names()[i].clone()));
            }
        }
        self.step += 1;
        let t = self.step;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let rect = match self.kind {
            OptimizerKind::Adam => Some(1.0),
            OptimizerKind::RAdam => self.rectification(t).1,
        };
        for (i, (p, g)) in params.values_mut().iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * gv;
                v[j] = b2 * v[j] + (1.0 - b2) * gv * gv;
                let m_hat = m[j] / bc1;
                *w -= match rect {
                    Some(r) => lr * r * m_hat / ((v[j] / bc2).sqrt() + self.eps),
                    None => lr * m_hat,
                };
            }
        }
        Ok(())
    }
}

/// Global L2 norm of `grads`, rescaling them in place so the norm is at
/// most `max` when given. Non-finite norms are left for the optimizer to
/// report.
pub fn clip_global_norm(grads: &mut [Tensor], max: Option<f64>) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if let Some(max) = max {
        if norm.is_finite() && norm > max {
            let k = max / norm;
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= k);
            }
        }
    }
    norm
}

/// Cosine annealing with warm restarts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub min_lr: f64,
    pub cycle_epochs: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            max_lr: 1e-3,
            min_lr: 1e-4,
            cycle_epochs: 20.0,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let phase = epoch.max(0.0).rem_euclid(self.cycle_epochs) / self.cycle_epochs;
        self.min_lr + 0.5 * (self.max_lr - self.min_lr) * (1.0 + (PI * phase).cos())
    }
}
