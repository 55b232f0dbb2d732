use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{GradMap, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Cosine annealing from `base_lr` at step 0 to `min_lr` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64, min_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("cosine schedule needs total_steps > 0"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!("step {step} beyond schedule length {total_steps}")));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(min_lr + (base_lr - min_lr) * (1.0 + phase.cos()) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            min_lr: 0.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub total_steps: usize,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet, config: AdamWConfig, total_steps: usize) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, v)| (k.to_string(), Tensor::zeros(v.shape())))
            .collect();
        Self {
            config,
            total_steps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Scheduled learning rate for the next update.
    pub fn current_lr(&self) -> Result<f64> {
        let step = (self.step as usize).min(self.total_steps);
        cosine_lr(step, self.total_steps.max(1), self.config.lr, self.config.min_lr)
    }

    /// One scheduled AdamW update; returns the learning rate used.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &GradMap) -> Result<f64> {
        let lr = self.current_lr()?;
        self.step_with_lr(params, grads, lr)?;
        Ok(lr)
    }

    /// One AdamW update at an explicit learning rate.
    pub fn step_with_lr(&mut self, params: &mut ParameterSet, grads: &GradMap, lr: f64) -> Result<()> {
        let AdamWConfig {
            weight_decay,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::invalid(format!("missing gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adamw_step",
                    format!("`{name}`: gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self.first.get_mut(name).expect("moment registered at construction");
            let v = self.second.get_mut(name).expect("moment registered at construction");
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *pv -= lr * weight_decay * *pv;
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.validate()?;
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradMap, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
