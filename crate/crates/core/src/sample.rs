//! Autoregressive DDIM inference with shifted initial noise, three-way
//! classifier-free guidance and a key-frame update interval.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{ConditioningSet, Denoise};
use crate::error::{Result, RfdmError};
use crate::forward::Formulation;
use crate::schedule::NoiseSchedule;
use crate::synthvid::PromptSpec;
use crate::tensor::{Clip, Frame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub omega_x: f64,
    pub omega_xp: f64,
    /// Key-frame interval; 0 keeps conditioning on the first output frame.
    pub delta: usize,
    pub formulation: Formulation,
    pub seed: u64,
    /// Record per-step statistics in [`EditResult::trace`].
    pub trace: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            omega_x: 1.5,
            omega_xp: 7.5,
            delta: 3,
            formulation: Formulation::ResidualFlow,
            seed: 0,
            trace: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(RfdmError::config("sampler.steps", "must be at least 1"));
        }
        if !self.omega_x.is_finite() {
            return Err(RfdmError::config("sampler.omega_x", "must be finite"));
        }
        if !self.omega_xp.is_finite() {
            return Err(RfdmError::config("sampler.omega_xp", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub frame: usize,
    pub step: usize,
    pub s_from: f64,
    pub s_to: f64,
    /// Mean absolute value of the guided prediction.
    pub pred_abs_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    pub output: Clip,
    /// Output frame each frame conditioned on (`None` for frame 0).
    pub key_frames: Vec<Option<usize>>,
    pub trace: Vec<StepTrace>,
}

/// `y_null + w_x (y_x - y_null) + w_xp (y_xp - y_x)`, evaluated as
/// `w_xp y_xp + (w_x - w_xp) y_x + (1 - w_x) y_null` so that unit weights
/// return `y_xp` and zero weights `y_null` exactly.
pub fn cfg_combine(y_null: &Frame, y_x: &Frame, y_xp: &Frame, omega_x: f64, omega_xp: f64) -> Result<Frame> {
    y_null.check_same_dims(y_x, "cfg_combine")?;
    y_null.check_same_dims(y_xp, "cfg_combine")?;
    let (a, b, c) = (omega_xp, omega_x - omega_xp, 1.0 - omega_x);
    let data = y_null
        .data
        .iter()
        .zip(&y_x.data)
        .zip(&y_xp.data)
        .map(|((&n, &x), &xp)| (a * f64::from(xp) + b * f64::from(x) + c * f64::from(n)) as f32)
        .collect();
    Ok(y_null.with_data(data))
}

/// Deterministic DDIM update from `s_from` to `s_to`. `s_to == 0.0` is the
/// exact clean endpoint (`alpha = 1`, `sigma = 0`), not clipped to `s_min`.
pub fn ddim_step(y_s: &Frame, y_pred: &Frame, s_from: f64, s_to: f64, sched: &NoiseSchedule) -> Result<Frame> {
    y_s.check_same_dims(y_pred, "ddim_step")?;
    if !(s_from > s_to) {
        return Err(RfdmError::Domain(format!("ddim_step needs s_from > s_to, got {s_from} -> {s_to}")));
    }
    let from = sched.eval(s_from)?;
    if from.sigma < 1e-8 {
        return Err(RfdmError::Numeric(format!("sigma({s_from}) = {} is too small to invert", from.sigma)));
    }
    let (a_to, s_to_sig) = if s_to == 0.0 {
        (1.0, 0.0)
    } else {
        let p = sched.eval(s_to)?;
        (p.alpha, p.sigma)
    };
    let data = y_s
        .data
        .iter()
        .zip(&y_pred.data)
        .map(|(&y, &p)| {
            let (y, p) = (f64::from(y), f64::from(p));
            let eps = (y - from.alpha * p) / from.sigma;
            (a_to * p + s_to_sig * eps) as f32
        })
        .collect();
    Ok(y_s.with_data(data))
}

/// The output frame that frame `t` conditions on: none for `t = 0`, frame 0
/// for `delta = 0`, otherwise `delta * floor((t - 1) / delta)`.
pub fn key_frame(t: usize, delta: usize) -> Option<usize> {
    match (t, delta) {
        (0, _) => None,
        (_, 0) => Some(0),
        (t, d) => Some(d * ((t - 1) / d)),
    }
}

/// The descending s-grid used by the sampler: `steps + 1` points from
/// `s_max`, with the final point at the clean endpoint `0`.
pub fn sampling_grid(sched: &NoiseSchedule, steps: usize) -> Result<Vec<f64>> {
    let mut grid = sched.step_grid(steps)?;
    if let Some(last) = grid.last_mut() {
        *last = 0.0;
    }
    Ok(grid)
}

#[allow(clippy::too_many_arguments)]
fn edit_frame_traced<D: Denoise + ?Sized>(
    model: &D,
    x: &Frame,
    prev: &Frame,
    prompt: PromptSpec,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
    frame: usize,
    trace: &mut Vec<StepTrace>,
) -> Result<Frame> {
    cfg.validate()?;
    x.check_same_dims(prev, "edit_frame: x vs prev")?;
    let fail = |step: usize, msg: String| RfdmError::Sampling { frame, step, msg };
    let eps = Frame::randn(x.height, x.width, x.channels, rng);
    let mut y = match cfg.formulation {
        Formulation::ResidualFlow => prev.add(&eps),
        Formulation::FramePrediction => eps,
    };
    let grid = sampling_grid(sched, cfg.steps)?;
    let full = ConditioningSet::full(x, prev, prompt);
    for (step, w) in grid.windows(2).enumerate() {
        let (s_from, s_to) = (w[0], w[1]);
        let lambda = sched.eval(s_from)?.lambda;
        let wrap = |e: RfdmError| fail(step, e.to_string());
        let y_null = model.denoise(&y, &full.without_image(), lambda).map_err(wrap)?;
        let y_x = model.denoise(&y, &full.without_prompt(), lambda).map_err(wrap)?;
        let y_xp = model.denoise(&y, &full, lambda).map_err(wrap)?;
        let pred = cfg_combine(&y_null, &y_x, &y_xp, cfg.omega_x, cfg.omega_xp)?;
        y = ddim_step(&y, &pred, s_from, s_to, sched).map_err(wrap)?;
        if !y.is_finite() {
            return Err(fail(step, "non-finite sampler state".into()));
        }
        if cfg.trace {
            trace.push(StepTrace {
                frame,
                step,
                s_from,
                s_to,
                pred_abs_mean: pred.data.iter().map(|v| f64::from(v.abs())).sum::<f64>() / pred.len() as f64,
            });
        }
    }
    Ok(y)
}

/// Edits one frame given the clean conditioning frame `prev` (zeros when no
/// key frame exists yet).
pub fn edit_frame<D: Denoise + ?Sized>(
    model: &D,
    x: &Frame,
    prev: &Frame,
    prompt: PromptSpec,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Frame> {
    edit_frame_traced(model, x, prev, prompt, cfg, sched, rng, 0, &mut Vec::new())
}

/// Noise stream for frame `t`; independent of how many frames follow.
pub fn frame_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

/// Edits a clip frame by frame. Frame `t` depends only on input frames
/// `0..=t`, the prompt and the seed.
pub fn edit_video<D: Denoise + ?Sized>(
    model: &D,
    clip: &Clip,
    prompt: PromptSpec,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
) -> Result<EditResult> {
    cfg.validate()?;
    prompt.validate()?;
    if clip.is_empty() {
        return Err(RfdmError::Shape("cannot edit an empty clip".into()));
    }
    let zeros = Frame::zeros_like(&clip.frames[0]);
    let mut out: Vec<Frame> = Vec::with_capacity(clip.len());
    let mut keys = Vec::with_capacity(clip.len());
    let mut trace = Vec::new();
    for (t, x) in clip.frames.iter().enumerate() {
        let key = key_frame(t, cfg.delta);
        let prev = key.map_or(&zeros, |k| &out[k]);
        let mut rng = frame_rng(cfg.seed, t);
        let y = edit_frame_traced(model, x, prev, prompt, cfg, sched, &mut rng, t, &mut trace)?;
        out.push(y);
        keys.push(key);
    }
    Ok(EditResult {
        output: Clip::new(out)?,
        key_frames: keys,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Frame {
        Frame::filled(1, 1, 1, v)
    }

    #[test]
    fn cfg_hand_value() {
        let y = cfg_combine(&scalar(0.0), &scalar(1.0), &scalar(2.0), 1.5, 7.5).unwrap();
        assert_eq!(y.data[0], 9.0);
        let z = cfg_combine(&scalar(0.3), &scalar(-1.0), &scalar(2.5), 0.0, 0.0).unwrap();
        assert_eq!(z.data[0], 0.3);
    }

    #[test]
    fn ddim_hand_value() {
        let sched = NoiseSchedule::default();
        let s = (0.6f64).atan2(0.8) / std::f64::consts::FRAC_PI_2;
        let y = ddim_step(&scalar(1.16), &scalar(1.0), s, 0.0, &sched).unwrap();
        assert!((y.data[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ddim_rejects_non_decreasing_times() {
        let sched = NoiseSchedule::default();
        assert!(ddim_step(&scalar(0.0), &scalar(0.0), 0.3, 0.5, &sched).is_err());
    }

    #[test]
    fn key_frames_by_hand() {
        let k = |d, ts: std::ops::RangeInclusive<usize>| ts.map(|t| key_frame(t, d)).collect::<Vec<_>>();
        assert_eq!(k(1, 0..=2), vec![None, Some(0), Some(1)]);
        assert_eq!(k(0, 1..=5), vec![Some(0); 5]);
        assert_eq!(
            k(3, 1..=6),
            vec![Some(0), Some(0), Some(0), Some(3), Some(3), Some(3)]
        );
    }
}
