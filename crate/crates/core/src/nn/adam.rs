use serde::{Deserialize, Serialize};

use super::{c, ParamSet, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Moment estimates for one [`ParamSet`], in its insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, ps: &ParamSet<T>) -> Self {
        let zeros = || ps.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected update, then zero every gradient. A non-finite
    /// gradient aborts before any parameter changes.
    pub fn step(&mut self, ps: &mut ParamSet<T>) -> Result<()> {
        if ps.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match parameter set".into()));
        }
        if let Some((path, _)) = ps.iter().find(|(_, p)| !p.grad.all_finite()) {
            return Err(Error::NonFinite(format!("gradient of {path}")));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (c::<T>(beta1), c::<T>(beta2));
        let (one_b1, one_b2) = (c::<T>(1.0 - beta1), c::<T>(1.0 - beta2));
        let step = c::<T>(lr / bc1);
        let rbc2 = c::<T>(1.0 / bc2.sqrt());
        let eps = c::<T>(eps);
        for (k, (_, p)) in ps.iter_mut().enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((w, g), mi), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                *mi = b1 * *mi + one_b1 * *g;
                *vi = b2 * *vi + one_b2 * *g * *g;
                *w -= step * *mi / (vi.sqrt() * rbc2 + eps);
            }
            p.grad.fill(T::zero());
        }
        Ok(())
    }
}
