//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::MatrixRecord;
use crate::model::{ModelParams, OptimizerRecord};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

pub struct AdamW<T> {
    cfg: AdamWConfig,
    lr: f64,
    step: u64,
    m: ModelParams<T>,
    v: ModelParams<T>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ModelParams<T>, lr: f64, cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            lr,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        self.step += 1;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(self.step as i32);
        let bc2 = one - b2.powi(self.step as i32);
        let lr = T::lit(self.lr);
        let eps = T::lit(self.cfg.eps);
        let decay = one - lr * T::lit(self.cfg.weight_decay);

        let grads: Vec<_> = grads.tensors().into_iter().map(|(_, g)| g).collect();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            let p = p.as_mut_slice();
            let m = m.as_mut_slice();
            let v = v.as_mut_slice();
            for (i, &gi) in g.as_slice().iter().enumerate() {
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    pub fn record(&self) -> OptimizerRecord {
        OptimizerRecord {
            step: self.step,
            m: self.m.tensors().into_iter().map(|(_, t)| t.into()).collect(),
            v: self.v.tensors().into_iter().map(|(_, t)| t.into()).collect(),
        }
    }

    pub fn restore(&mut self, rec: &OptimizerRecord) -> Result<()> {
        fn load<T: Scalar>(dst: &mut ModelParams<T>, src: &[MatrixRecord]) -> Result<()> {
            let slots = dst.tensors_mut();
            if slots.len() != src.len() {
                return Err(Error::Checkpoint("optimizer state has the wrong tensor count".into()));
            }
            for (slot, rec) in slots.into_iter().zip(src) {
                let m = rec.to_matrix::<T>()?;
                if m.shape() != slot.shape() {
                    return Err(Error::Checkpoint("optimizer state shape mismatch".into()));
                }
                *slot = m;
            }
            Ok(())
        }
        load(&mut self.m, &rec.m)?;
        load(&mut self.v, &rec.v)?;
        self.step = rec.step;
        Ok(())
    }
}
