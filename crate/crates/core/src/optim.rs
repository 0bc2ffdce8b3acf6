//! Adam over [`DenoiserParams`].

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserParams;
use crate::error::{Result, RfdmError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(RfdmError::config("train.lr", "must be positive and finite"));
        }
        for (k, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(RfdmError::config(k, "must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    m: DenoiserParams,
    v: DenoiserParams,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &DenoiserParams) -> Self {
        Self {
            config,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One update with gradient `g` (already averaged or summed by the
    /// caller).
    pub fn step(&mut self, params: &mut DenoiserParams, g: &DenoiserParams) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step = (c.lr / bc1) as f32;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let inv_bc2 = (1.0 / bc2) as f32;
        let eps = c.eps as f32;
        let grads = g.named_tensors();
        for (((p, (_, _, gs)), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
        {
            for i in 0..p.len() {
                let gi = gs[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
    }

    /// Moment tensors for checkpointing, prefixed `adam.m.` / `adam.v.`.
    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (prefix, st) in [("adam.m.", &self.m), ("adam.v.", &self.v)] {
            for (n, t) in st.to_tensors() {
                out.push((format!("{prefix}{n}"), t));
            }
        }
        out
    }

    pub fn from_tensors(
        config: AdamConfig,
        t: u64,
        params: &DenoiserParams,
        tensors: &[(String, Tensor)],
    ) -> Result<Self> {
        let pick = |prefix: &str| -> Vec<(String, Tensor)> {
            tensors
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_owned(), t.clone())))
                .collect()
        };
        Ok(Self {
            config,
            t,
            m: DenoiserParams::from_tensors(&params.config, &pick("adam.m."))?,
            v: DenoiserParams::from_tensors(&params.config, &pick("adam.v."))?,
        })
    }
}
