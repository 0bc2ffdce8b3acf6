//! Forward (noising) processes.
//!
//! * frame prediction: `y_s = alpha * y0 + sigma * eps`
//! * residual flow:    `y_s = alpha * y0 + sigma * prev + sigma * eps`
//!
//! The residual-flow process is the frame process with its noise mean moved
//! to the previous prediction. Single-image editing is frame prediction on
//! a one-frame clip and has no separate code path. Noise is always supplied
//! by the caller.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::schedule::NoiseSchedule;
use crate::tensor::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    FramePrediction,
    #[default]
    ResidualFlow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyFrame {
    pub y_s: Frame,
    pub s: f64,
    pub eps: Frame,
    /// The previous prediction that shifted the noise mean (zeros for the
    /// frame process and for the first frame).
    pub prev: Frame,
}

impl NoisyFrame {
    /// Temporal residual `prev - y0`, derived on demand.
    pub fn residual(&self, y0: &Frame) -> Frame {
        self.prev.sub(y0)
    }
}

pub fn forward_frame(y0: &Frame, s: f64, eps: &Frame, sched: &NoiseSchedule) -> Result<NoisyFrame> {
    let prev = Frame::zeros_like(y0);
    forward_residual(y0, &prev, s, eps, sched)
}

pub fn forward_residual(
    y0: &Frame,
    prev: &Frame,
    s: f64,
    eps: &Frame,
    sched: &NoiseSchedule,
) -> Result<NoisyFrame> {
    y0.check_same_dims(eps, "forward: y0 vs eps")?;
    y0.check_same_dims(prev, "forward: y0 vs prev")?;
    let p = sched.eval(s)?;
    let (a, sg) = (p.alpha as f32, p.sigma as f32);
    let data = y0
        .data
        .iter()
        .zip(&prev.data)
        .zip(&eps.data)
        .map(|((&y, &m), &e)| a * y + sg * m + sg * e)
        .collect();
    Ok(NoisyFrame {
        y_s: y0.with_data(data),
        s,
        eps: eps.clone(),
        prev: prev.clone(),
    })
}

/// Builds the noisy input for either formulation. `prev` is ignored by the
/// frame process.
pub fn forward_noisy(
    formulation: Formulation,
    y0: &Frame,
    prev: &Frame,
    s: f64,
    eps: &Frame,
    sched: &NoiseSchedule,
) -> Result<NoisyFrame> {
    match formulation {
        Formulation::FramePrediction => forward_frame(y0, s, eps, sched),
        Formulation::ResidualFlow => forward_residual(y0, prev, s, eps, sched),
    }
}

/// Mean and (isotropic) variance of `q(y_s | y0, prev)`.
pub fn forward_mean_cov(
    y0: &Frame,
    prev: &Frame,
    s: f64,
    sched: &NoiseSchedule,
    formulation: Formulation,
) -> Result<(Frame, f64)> {
    y0.check_same_dims(prev, "forward_mean_cov: y0 vs prev")?;
    let p = sched.eval(s)?;
    let var = p.sigma * p.sigma;
    let mean = match formulation {
        Formulation::FramePrediction => y0.scale(p.alpha as f32),
        Formulation::ResidualFlow => y0.lincomb(p.alpha as f32, prev, p.sigma as f32),
    };
    Ok((mean, var))
}

/// Residual-flow mean written through the temporal residual,
/// `gamma * y0 + sigma * (prev - y0)`.
pub fn residual_mean_via_gamma(y0: &Frame, prev: &Frame, s: f64, sched: &NoiseSchedule) -> Result<Frame> {
    y0.check_same_dims(prev, "residual_mean_via_gamma")?;
    let gamma = sched.gamma(s)?;
    let sigma = sched.eval(s)?.sigma;
    let data = y0
        .data
        .iter()
        .zip(&prev.data)
        .map(|(&y, &m)| {
            let (y, m) = (f64::from(y), f64::from(m));
            (gamma * y + sigma * (m - y)) as f32
        })
        .collect();
    Ok(y0.with_data(data))
}
