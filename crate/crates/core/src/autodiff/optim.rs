//! AdamW with decoupled weight decay and per-group settings.

use serde::{Deserialize, Serialize};

use super::{ParamGroup, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSettings {
    pub lr: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub encoder_weight: GroupSettings,
    pub other: GroupSettings,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            encoder_weight: GroupSettings {
                lr: 5e-5,
                weight_decay: 1e-2,
            },
            other: GroupSettings {
                lr: 1e-3,
                weight_decay: 0.0,
            },
        }
    }
}

impl AdamWConfig {
    pub fn settings(&self, group: ParamGroup) -> GroupSettings {
        match group {
            ParamGroup::EncoderWeight => self.encoder_weight,
            ParamGroup::Other => self.other,
        }
    }
}

/// Optimizer state: step counter and per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.value().len()]).collect();
        AdamW {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears the gradients.
    ///
    /// Every parameter must carry a gradient buffer; call
    /// [`ParamStore::zero_grad`] before the forward pass.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.first_moment.len() {
            return Err(Error::TrainingState(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first_moment.len(),
                store.len()
            )));
        }
        for (i, p) in store.params_mut().iter().enumerate() {
            if p.grad().is_none() {
                return Err(Error::TrainingState(format!(
                    "parameter `{}` has no gradient",
                    p.name()
                )));
            }
            if p.value().len() != self.first_moment[i].len() {
                return Err(Error::TrainingState(format!(
                    "moment buffer for `{}` does not match its shape",
                    p.name()
                )));
            }
        }

        self.step += 1;
        let AdamWConfig { beta1, beta2, eps, .. } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let GroupSettings { lr, weight_decay } = self.config.settings(p.group());
            let grad = p.take_grad().expect("checked above");
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, w) in p.value_mut().values_mut().iter_mut().enumerate() {
                let g = grad[j];
                *w -= lr * weight_decay * *w;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
