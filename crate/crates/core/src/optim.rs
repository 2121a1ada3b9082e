//! Adam with per-parameter-class learning rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{normalize_quat, param, Gaussian3D, GaussianModel, ParamVec, PARAMS_PER_GAUSSIAN};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Initial position rate, decayed exponentially to `position_final`.
    pub position: f64,
    pub position_final: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-3,
            position_final: 1.6e-5,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 1e-2,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.position_final,
            self.log_scale,
            self.rotation,
            self.opacity,
            self.color,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("learning rates must be finite and >= 0".into()));
        }
        if self.position > 0.0 && self.position_final <= 0.0 {
            return Err(Error::Config("position_final must be > 0 when position > 0".into()));
        }
        Ok(())
    }

    /// Log-linear interpolation from `position` to `position_final`.
    pub fn position_at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 || self.position == 0.0 {
            return self.position;
        }
        let t = (step as f64 / (total - 1) as f64).clamp(0.0, 1.0);
        (self.position.ln() * (1.0 - t) + self.position_final.ln() * t).exp()
    }

    fn per_param(&self, position: f64) -> ParamVec {
        let mut lr = [0.0; PARAMS_PER_GAUSSIAN];
        lr[param::POSITION..param::LOG_SCALE].fill(position);
        lr[param::LOG_SCALE..param::ROTATION].fill(self.log_scale);
        lr[param::ROTATION..param::OPACITY].fill(self.rotation);
        lr[param::OPACITY] = self.opacity;
        lr[param::COLOR..].fill(self.color);
        lr
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    m: Vec<ParamVec>,
    v: Vec<ParamVec>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            step: 0,
            m: vec![[0.0; PARAMS_PER_GAUSSIAN]; len],
            v: vec![[0.0; PARAMS_PER_GAUSSIAN]; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// One update. Quaternions are renormalized and colors clamped to
    /// `[0, 1]` afterwards.
    pub fn step(
        &mut self,
        model: &mut GaussianModel,
        grads: &[ParamVec],
        lrs: &LearningRates,
        position_lr: f64,
    ) -> Result<()> {
        if grads.len() != model.len() || self.len() != model.len() {
            return Err(Error::SizeMismatch {
                expected: model.len(),
                got: if grads.len() != model.len() {
                    grads.len()
                } else {
                    self.len()
                },
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = lrs.per_param(position_lr);
        for ((g, grad), (m, v)) in model
            .gaussians
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let mut p = g.params();
            for k in 0..PARAMS_PER_GAUSSIAN {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * grad[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr[k] * mh / (vh.sqrt() + self.eps);
            }
            let mut next = Gaussian3D::from_params(&p);
            next.rotation = normalize_quat(next.rotation);
            next.color = next.color.map(|c| c.clamp(0.0, 1.0));
            *g = next;
        }
        Ok(())
    }

    /// Append zeroed moments for new primitives.
    pub fn extend_to(&mut self, len: usize) {
        self.m.resize(len, [0.0; PARAMS_PER_GAUSSIAN]);
        self.v.resize(len, [0.0; PARAMS_PER_GAUSSIAN]);
    }

    pub fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.m.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.v.retain(|_| *it.next().unwrap());
    }
}
