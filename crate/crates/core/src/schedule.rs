//! Continuous variance-preserving noise schedule over diffusion time `s`.
//!
//! `s = 0` is clean data and `s = 1` is pure noise. Evaluation clips `s` into
//! `[s_min, s_max]` so the log-SNR stays finite, and additionally clamps it to
//! `±lambda_clamp`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RfdmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    CosineVp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub s_min: f64,
    pub s_max: f64,
    pub lambda_clamp: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::CosineVp,
            s_min: 1e-3,
            s_max: 1.0 - 1e-3,
            lambda_clamp: 20.0,
        }
    }
}

/// `(alpha, sigma, lambda)` at one diffusion time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePoint {
    pub alpha: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_min > 0.0 && self.s_min < 0.5) {
            return Err(RfdmError::config("schedule.s_min", "must lie in (0, 0.5)"));
        }
        if !(self.s_max > 0.5 && self.s_max <= 1.0) {
            return Err(RfdmError::config("schedule.s_max", "must lie in (0.5, 1]"));
        }
        if !(self.lambda_clamp.is_finite() && self.lambda_clamp > 0.0) {
            return Err(RfdmError::config(
                "schedule.lambda_clamp",
                "must be finite and positive",
            ));
        }
        Ok(())
    }

    pub fn clip_s(&self, s: f64) -> f64 {
        s.clamp(self.s_min, self.s_max)
    }

    pub fn eval(&self, s: f64) -> Result<SchedulePoint> {
        if !s.is_finite() {
            return Err(RfdmError::Domain(format!("diffusion time must be finite, got {s}")));
        }
        let s = self.clip_s(s);
        let (alpha, sigma) = match self.kind {
            ScheduleKind::CosineVp => ((FRAC_PI_2 * s).cos(), (FRAC_PI_2 * s).sin()),
        };
        let lambda = (alpha / sigma).ln().clamp(-self.lambda_clamp, self.lambda_clamp);
        Ok(SchedulePoint {
            alpha,
            sigma,
            lambda,
        })
    }

    /// Residual-flow coefficient `sqrt(1 - sigma^2) + sigma`; equals
    /// `alpha + sigma` for this variance-preserving schedule.
    pub fn gamma(&self, s: f64) -> Result<f64> {
        let p = self.eval(s)?;
        Ok((1.0 - p.sigma * p.sigma).max(0.0).sqrt() + p.sigma)
    }

    /// `steps + 1` uniformly spaced times from `s_max` down to `s_min`.
    pub fn step_grid(&self, steps: usize) -> Result<Vec<f64>> {
        if steps == 0 {
            return Err(RfdmError::Domain("step grid needs at least one step".into()));
        }
        let span = self.s_max - self.s_min;
        Ok((0..=steps)
            .rev()
            .map(|i| self.s_min + span * i as f64 / steps as f64)
            .collect())
    }
}
