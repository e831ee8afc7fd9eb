use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{GradMap, ParamSet};
use super::tensor::Tensor;
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update of every trainable entry. A trainable entry absent from
    /// `grads` is stepped with a zero gradient; frozen entries never move.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradMap) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(dim_err!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                ));
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let names: Vec<String> = params
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(n, _)| n.to_string())
            .collect();
        for name in names {
            let p = params.get_mut(&name)?;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let g = grads.get(&name);
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                let mi = beta1 * m.data()[i] + (1.0 - beta1) * gi;
                let vi = beta2 * v.data()[i] + (1.0 - beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moments as a param set (`m/<name>`, `v/<name>`) for checkpointing.
    pub fn to_params(&self) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        for (k, t) in &self.m {
            p.insert(format!("m/{k}"), t.clone(), false)?;
        }
        for (k, t) in &self.v {
            p.insert(format!("v/{k}"), t.clone(), false)?;
        }
        Ok(p)
    }

    pub fn from_params(config: AdamConfig, t: u64, p: &ParamSet) -> Self {
        let take = |prefix: &str| {
            p.extract_prefixed(prefix)
                .iter()
                .map(|(k, e)| (k.to_string(), e.tensor.clone()))
                .collect()
        };
        Self {
            config,
            t,
            m: take("m"),
            v: take("v"),
        }
    }
}
