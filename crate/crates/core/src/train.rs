//! Autoregressive training: sorted frame chains, per-frame noise levels,
//! teacher or diffusion forcing, optional gradient unrolling through the
//! previous prediction, and conditioning dropout for guidance.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{accumulate, global_norm, ConditioningSet, Denoise, DenoiserConfig, DenoiserParams, Tape};
use crate::error::{Result, RfdmError};
use crate::forward::{forward_noisy, Formulation};
use crate::optim::{Adam, AdamConfig};
use crate::schedule::NoiseSchedule;
use crate::synthvid::{load_triplet, EditTriplet};
use crate::tensor::Frame;
use crate::tensorio::{Checkpoint, CheckpointHeader, DatasetManifest, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Forcing {
    Teacher,
    #[default]
    Diffusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Frames per chain beyond the first (`K`).
    pub ar_frames: usize,
    pub forcing: Forcing,
    pub unroll: bool,
    pub formulation: Formulation,
    /// Train without the previous-prediction input.
    pub cond_x_only: bool,
    pub drop_both_p: f64,
    pub drop_prompt_p: f64,
    /// Sample a consecutive window instead of arbitrary sorted indices.
    pub consecutive: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub grad_accum: usize,
    pub steps: u64,
    pub seed: u64,
    /// Write a numbered checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ar_frames: 3,
            forcing: Forcing::Diffusion,
            unroll: true,
            formulation: Formulation::ResidualFlow,
            cond_x_only: false,
            drop_both_p: 0.05,
            drop_prompt_p: 0.05,
            consecutive: false,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch: 8,
            grad_accum: 2,
            steps: 2000,
            seed: 0,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, p) in [("train.drop_both_p", self.drop_both_p), ("train.drop_prompt_p", self.drop_prompt_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(RfdmError::config(k, "must lie in [0, 1]"));
            }
        }
        if self.drop_both_p + self.drop_prompt_p > 1.0 {
            return Err(RfdmError::config("train.drop_prompt_p", "drop_both_p + drop_prompt_p exceeds 1"));
        }
        if self.batch == 0 {
            return Err(RfdmError::config("train.batch", "must be positive"));
        }
        if self.grad_accum == 0 {
            return Err(RfdmError::config("train.grad_accum", "must be positive"));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..Default::default()
        }
    }
}

/// Which conditioning-dropout branch a chain trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropBranch {
    /// `(x, p)`
    Full,
    /// `(x, null)`
    NoPrompt,
    /// `(null, null)`
    Null,
}

impl DropBranch {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, cfg: &TrainConfig) -> Self {
        let u: f64 = rng.random();
        if u < cfg.drop_both_p {
            DropBranch::Null
        } else if u < cfg.drop_both_p + cfg.drop_prompt_p {
            DropBranch::NoPrompt
        } else {
            DropBranch::Full
        }
    }

    pub fn apply<'a>(self, cond: ConditioningSet<'a>) -> ConditioningSet<'a> {
        match self {
            DropBranch::Full => cond,
            DropBranch::NoPrompt => cond.without_prompt(),
            DropBranch::Null => cond.without_image(),
        }
    }
}

/// Drops `(x, p)` to `(null, null)` or `(x, null)` with the configured
/// probabilities. `prev` is never dropped.
pub fn apply_conditioning_dropout<'a, R: Rng + ?Sized>(
    cond: ConditioningSet<'a>,
    rng: &mut R,
    cfg: &TrainConfig,
) -> ConditioningSet<'a> {
    DropBranch::draw(rng, cfg).apply(cond)
}

/// All randomness of one training chain, drawn up front.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPlan {
    pub indices: Vec<usize>,
    pub s: Vec<f64>,
    pub eps: Vec<Frame>,
    pub branch: DropBranch,
}

/// `k` sorted indices from `0..n`, without replacement.
pub fn sample_indices<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize, consecutive: bool) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(RfdmError::config(
            "train.ar_frames",
            format!("chain of {k} frames does not fit a clip of {n} frames"),
        ));
    }
    if consecutive {
        let start = rng.random_range(0..=n - k);
        return Ok((start..start + k).collect());
    }
    let mut idx = sample_index(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

impl ChainPlan {
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        clip_len: usize,
        dims: [usize; 3],
        cfg: &TrainConfig,
        sched: &NoiseSchedule,
    ) -> Result<Self> {
        let branch = DropBranch::draw(rng, cfg);
        let indices = sample_indices(rng, clip_len, cfg.ar_frames + 1, cfg.consecutive)?;
        let mut s = Vec::with_capacity(indices.len());
        let mut eps = Vec::with_capacity(indices.len());
        for _ in &indices {
            s.push(rng.random_range(sched.s_min..=sched.s_max));
            eps.push(Frame::randn(dims[0], dims[1], dims[2], rng));
        }
        Ok(Self { indices, s, eps, branch })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTrace {
    pub t: usize,
    pub s: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStepTrace {
    pub step: u64,
    /// One entry per chain frame, over every chain of the step.
    pub frames: Vec<FrameTrace>,
    pub branches: Vec<DropBranch>,
    pub loss: f64,
    pub grad_norm: f64,
}

fn mse(a: &Frame, b: &Frame) -> f64 {
    a.mean_sq_diff(b)
}

fn next_prev(cfg: &TrainConfig, pred: &Frame, y0: &Frame) -> Frame {
    match cfg.forcing {
        Forcing::Diffusion => pred.clone(),
        Forcing::Teacher => y0.clone(),
    }
}

fn check_chain(triplet: &EditTriplet, plan: &ChainPlan) -> Result<()> {
    if plan.indices.iter().any(|&t| t >= triplet.target.len()) {
        return Err(RfdmError::config(
            "train.ar_frames",
            format!("chain index out of range for a clip of {} frames", triplet.target.len()),
        ));
    }
    Ok(())
}

/// Loss of one chain under any denoiser, without gradients.
pub fn chain_loss<D: Denoise + ?Sized>(
    model: &D,
    triplet: &EditTriplet,
    plan: &ChainPlan,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
) -> Result<Vec<FrameTrace>> {
    check_chain(triplet, plan)?;
    let mut prev = Frame::zeros_like(&triplet.target.frames[0]);
    let mut out = Vec::with_capacity(plan.indices.len());
    for (j, &t) in plan.indices.iter().enumerate() {
        let y0 = &triplet.target.frames[t];
        let x = &triplet.input.frames[t];
        let noisy = forward_noisy(cfg.formulation, y0, &prev, plan.s[j], &plan.eps[j], sched)?;
        let lambda = sched.eval(plan.s[j])?.lambda;
        let cond = plan.branch.apply(ConditioningSet::full(x, &prev, triplet.prompt));
        let pred = model.denoise(&noisy.y_s, &cond, lambda)?;
        out.push(FrameTrace {
            t,
            s: plan.s[j],
            loss: mse(&pred, y0),
        });
        prev = next_prev(cfg, &pred, y0);
    }
    Ok(out)
}

/// Loss of one chain plus its gradient, added into `grads`.
///
/// With diffusion forcing and `unroll`, the gradient also flows from frame
/// `j + 1` back into the prediction of frame `j` through both the prev
/// input and (residual formulation) the noise mean of `y_s`.
pub fn chain_backprop(
    params: &DenoiserParams,
    triplet: &EditTriplet,
    plan: &ChainPlan,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    grads: &mut DenoiserParams,
) -> Result<Vec<FrameTrace>> {
    check_chain(triplet, plan)?;
    let mut tape = Tape::new();
    let mut prev = Frame::zeros_like(&triplet.target.frames[0]);
    let mut traces = Vec::with_capacity(plan.indices.len());
    let mut upstreams = Vec::with_capacity(plan.indices.len());
    let mut slots = Vec::with_capacity(plan.indices.len());
    let mut sigmas = Vec::with_capacity(plan.indices.len());
    for (j, &t) in plan.indices.iter().enumerate() {
        let y0 = &triplet.target.frames[t];
        let x = &triplet.input.frames[t];
        let noisy = forward_noisy(cfg.formulation, y0, &prev, plan.s[j], &plan.eps[j], sched)?;
        let point = sched.eval(plan.s[j])?;
        let cond = plan.branch.apply(ConditioningSet::full(x, &prev, triplet.prompt));
        let (pred, slot) = params.forward_taped(&noisy.y_s, &cond, point.lambda, &mut tape)?;
        let n = pred.len() as f32;
        upstreams.push(pred.lincomb(2.0 / n, y0, -2.0 / n));
        traces.push(FrameTrace {
            t,
            s: plan.s[j],
            loss: mse(&pred, y0),
        });
        slots.push(slot);
        sigmas.push(point.sigma as f32);
        prev = next_prev(cfg, &pred, y0);
    }

    let carry_grad = cfg.unroll && cfg.forcing == Forcing::Diffusion;
    let mut carry: Option<Frame> = None;
    for j in (0..slots.len()).rev() {
        let up = match carry.take() {
            Some(c) => upstreams[j].add(&c),
            None => upstreams[j].clone(),
        };
        let ig = params.backward(&mut tape, slots[j], &up, grads)?;
        if carry_grad && j > 0 {
            carry = Some(match cfg.formulation {
                Formulation::ResidualFlow => ig.prev.lincomb(1.0, &ig.y_s, sigmas[j]),
                Formulation::FramePrediction => ig.prev,
            });
        }
    }
    Ok(traces)
}

/// Mutable training state: parameters, optimizer moments and the data RNG.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: DenoiserParams,
    pub opt: Adam,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub cfg: TrainConfig,
    pub sched: NoiseSchedule,
}

impl Trainer {
    pub fn new(model: &DenoiserConfig, cfg: &TrainConfig, sched: &NoiseSchedule) -> Result<Self> {
        cfg.validate()?;
        sched.validate()?;
        let model = DenoiserConfig {
            cond_x_only: cfg.cond_x_only,
            ..model.clone()
        };
        let params = DenoiserParams::init(&model)?;
        Ok(Self {
            opt: Adam::new(cfg.adam(), &params),
            params,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            step: 0,
            cfg: cfg.clone(),
            sched: *sched,
        })
    }

    /// One optimizer update over `grad_accum` micro-batches of `batch`
    /// chains, each on a clip drawn uniformly from `data`.
    pub fn train_step<F>(&mut self, n_clips: usize, mut clip: F) -> Result<TrainStepTrace>
    where
        F: FnMut(usize) -> Result<EditTriplet>,
    {
        if n_clips == 0 {
            return Err(RfdmError::config("data", "training split is empty"));
        }
        let mut grads = self.params.zeros_like();
        let mut frames = Vec::new();
        let mut branches = Vec::new();
        for _ in 0..self.cfg.grad_accum * self.cfg.batch {
            let i = self.rng.random_range(0..n_clips);
            let triplet = clip(i)?;
            let dims = triplet.target.frame_dims().ok_or_else(|| RfdmError::Shape("empty clip".into()))?;
            let plan = ChainPlan::sample(&mut self.rng, triplet.target.len(), dims, &self.cfg, &self.sched)?;
            let mut g = self.params.zeros_like();
            frames.extend(chain_backprop(&self.params, &triplet, &plan, &self.cfg, &self.sched, &mut g)?);
            accumulate(&mut grads, &g);
            branches.push(plan.branch);
        }
        let loss: f64 = frames.iter().map(|f| f.loss).sum();
        let grad_norm = global_norm(&grads);
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(RfdmError::Numeric(format!(
                "non-finite loss {loss} or gradient norm {grad_norm} at step {}",
                self.step
            )));
        }
        self.opt.step(&mut self.params, &grads);
        self.step += 1;
        Ok(TrainStepTrace {
            step: self.step,
            frames,
            branches,
            loss,
            grad_norm,
        })
    }

    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        let mut tensors = self.params.to_tensors();
        tensors.extend(self.opt.to_tensors());
        Checkpoint {
            header: CheckpointHeader {
                step: self.step,
                config_hash: config_hash.to_owned(),
                rng: RngState::capture(&self.rng),
                meta: serde_json::json!({
                    "model": self.params.config,
                    "formulation": self.cfg.formulation,
                    "adam_t": self.opt.t,
                }),
            },
            tensors,
        }
    }

    /// Restores the state saved by [`Self::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, cfg: &TrainConfig, sched: &NoiseSchedule, config_hash: &str) -> Result<Self> {
        if ckpt.header.config_hash != config_hash {
            return Err(RfdmError::ConfigHashMismatch {
                expected: config_hash.to_owned(),
                found: ckpt.header.config_hash.clone(),
            });
        }
        let params = load_params(ckpt)?;
        let adam_t = ckpt.header.meta.get("adam_t").and_then(|v| v.as_u64()).unwrap_or(ckpt.header.step);
        let opt = Adam::from_tensors(cfg.adam(), adam_t, &params, &ckpt.tensors)?;
        Ok(Self {
            params,
            opt,
            rng: ckpt.header.rng.restore()?,
            step: ckpt.header.step,
            cfg: cfg.clone(),
            sched: *sched,
        })
    }
}

/// Model parameters stored in a checkpoint.
pub fn load_params(ckpt: &Checkpoint) -> Result<DenoiserParams> {
    let model: DenoiserConfig = ckpt
        .header
        .meta
        .get("model")
        .cloned()
        .map(serde_json::from_value)
        .transpose()?
        .ok_or_else(|| RfdmError::format(0, "checkpoint header lacks the model config"))?;
    let tensors: Vec<_> = ckpt
        .tensors
        .iter()
        .filter(|(n, _)| !n.starts_with("adam."))
        .cloned()
        .collect();
    DenoiserParams::from_tensors(&model, &tensors)
}

/// The formulation a checkpoint was trained with.
pub fn checkpoint_formulation(ckpt: &Checkpoint) -> Option<Formulation> {
    ckpt.header
        .meta
        .get("formulation")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LossRow {
    step: u64,
    loss: f64,
    grad_norm: f64,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOSS_CURVE: &str = "loss.jsonl";

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub loss_curve: PathBuf,
}

/// Trains on the `train` split of `manifest`, writing `loss.jsonl`,
/// periodic `step_XXXXXXX.ckpt` files and `final.ckpt` into `out_dir`.
/// With `resume`, continues bit-exactly from that checkpoint.
pub fn run_training(
    manifest: &DatasetManifest,
    model: &DenoiserConfig,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    config_hash: &str,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    let records = manifest.split("train");
    if records.is_empty() {
        return Err(RfdmError::config("data", "manifest has no training clips"));
    }
    fs::create_dir_all(out_dir).map_err(|e| RfdmError::io(out_dir, e))?;
    let curve = out_dir.join(LOSS_CURVE);

    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::read(path)?;
            let t = Trainer::resume(&ckpt, cfg, sched, config_hash)?;
            truncate_curve(&curve, t.step)?;
            t
        }
        None => {
            fs::write(&curve, b"").map_err(|e| RfdmError::io(&curve, e))?;
            Trainer::new(model, cfg, sched)?
        }
    };

    let mut log = OpenOptions::new()
        .append(true)
        .open(&curve)
        .map_err(|e| RfdmError::io(&curve, e))?;
    let load = |i: usize| load_triplet(manifest, records[i]);
    while trainer.step < cfg.steps {
        let trace = trainer.train_step(records.len(), load)?;
        let row = serde_json::to_string(&LossRow {
            step: trace.step,
            loss: trace.loss,
            grad_norm: trace.grad_norm,
        })?;
        writeln!(log, "{row}").map_err(|e| RfdmError::io(&curve, e))?;
        if cfg.checkpoint_every > 0 && trainer.step % cfg.checkpoint_every == 0 && trainer.step < cfg.steps {
            let path = out_dir.join(format!("step_{:07}.ckpt", trainer.step));
            trainer.checkpoint(config_hash).write(&path)?;
        }
    }
    let checkpoint = trainer.checkpoint(config_hash);
    let checkpoint_path = out_dir.join(FINAL_CHECKPOINT);
    checkpoint.write(&checkpoint_path)?;
    Ok(TrainOutcome {
        checkpoint,
        checkpoint_path,
        loss_curve: curve,
    })
}

fn truncate_curve(path: &Path, steps: u64) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(RfdmError::io(path, e)),
    };
    let kept: String = text
        .lines()
        .take(steps as usize)
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(path, kept).map_err(|e| RfdmError::io(path, e))
}
