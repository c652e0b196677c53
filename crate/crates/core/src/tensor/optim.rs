//! AdamW with bias correction and decoupled weight decay, two learning-rate
//! groups and a single step-drop schedule.

use serde::{Deserialize, Serialize};

use super::{ParamGroup, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr_backbone: f64,
    pub lr_heads: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr_backbone: 1e-3,
            lr_heads: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Multiplies the learning rate by `factor` from `drop_epoch` on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub drop_epoch: usize,
    pub factor: f64,
}

impl StepSchedule {
    pub fn scale(&self, epoch: usize) -> f64 {
        if epoch >= self.drop_epoch {
            self.factor
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, store: &ParamStore<T>) -> Self {
        let m: Vec<_> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            cfg,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr_for(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Backbone => self.cfg.lr_backbone,
            ParamGroup::Head => self.cfg.lr_heads,
        }
    }

    /// One update from the gradients held in `store`. `lr_scale` comes from
    /// the schedule. Non-finite gradients abort before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr_scale: f64) -> Result<()> {
        if let Some(bad) = store.iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::NonFiniteGrad(bad.name.clone()));
        }
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = T::of(1.0 - b1.powf(t));
        let bc2 = T::of(1.0 - b2.powf(t));
        let (tb1, tb2) = (T::of(b1), T::of(b2));
        let eps = T::of(self.cfg.eps);
        let lrs = [
            self.lr_for(ParamGroup::Backbone) * lr_scale,
            self.lr_for(ParamGroup::Head) * lr_scale,
        ];
        for (i, p) in store.iter_mut().enumerate() {
            let lr = match p.group {
                ParamGroup::Backbone => lrs[0],
                ParamGroup::Head => lrs[1],
            };
            let decay = T::of(1.0 - lr * self.cfg.weight_decay);
            let lr = T::of(lr);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                *mi = tb1 * *mi + (T::one() - tb1) * g;
                *vi = tb2 * *vi + (T::one() - tb2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment buffers in parameter order, for checkpointing.
    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, step: u64) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::Checkpoint("optimizer state length mismatch".into()));
        }
        for (a, b) in m.iter().zip(&self.m).chain(v.iter().zip(&self.v)) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint("optimizer state shape mismatch".into()));
            }
        }
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }
}
