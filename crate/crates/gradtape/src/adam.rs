use serde::{Deserialize, Serialize};

use crate::error::TapeError;
use crate::params::{Grads, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every entry of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, e)| Tensor::zeros(e.value.rows(), e.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one bias-corrected Adam update to every trainable entry.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<(), TapeError> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(TapeError::InvalidArgument {
                op: "adam_step",
                reason: format!(
                    "{} params, {} grads, {} moments",
                    store.len(),
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        let ids: Vec<_> = store.iter().map(|(id, e)| (id, e.trainable)).collect();
        for &(id, _) in &ids {
            let (p, g) = (store.get(id).shape(), grads.get(id).shape());
            if p != g || self.m[id.0].shape() != p {
                return Err(TapeError::ShapeMismatch {
                    op: "adam_step",
                    left: p,
                    right: g,
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, trainable) in ids {
            if !trainable {
                continue;
            }
            let g = grads.get(id).data();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
