//! The learnable denoiser `y_pred = f(y_s, prev, x, p, lambda)` with
//! x-parameterization.
//!
//! Frames enter by channel concatenation `[y_s, x, presence, prev]`; the
//! prompt and the log-SNR enter through FiLM. A null `x` is a zero frame with
//! the presence channel at 0, a null prompt selects the dedicated null row of
//! the embedding table.

pub mod nn;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RfdmError};
use crate::synthvid::{PromptSpec, NULL_TOKEN, VOCAB_SIZE};
use crate::tensor::{Frame, Tensor};
use nn::{silu_grad, silu_vec, Conv3x3, Linear};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Colour channels per frame.
    pub channels: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub embed_dim: usize,
    /// Number of sin/cos frequency pairs for the log-SNR embedding.
    pub time_freqs: usize,
    /// Drop the previous-prediction input (the prev channels are zeroed).
    pub cond_x_only: bool,
    pub init_seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            hidden: 64,
            blocks: 6,
            embed_dim: 64,
            time_freqs: 8,
            cond_x_only: false,
            init_seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("model.channels", self.channels),
            ("model.hidden", self.hidden),
            ("model.embed_dim", self.embed_dim),
            ("model.time_freqs", self.time_freqs),
        ] {
            if v == 0 {
                return Err(RfdmError::config(key, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        3 * self.channels + 1
    }
}

/// Conditioning of one denoiser call. `prev` is always present (zeros for
/// the first frame).
#[derive(Debug, Clone, Copy)]
pub struct ConditioningSet<'a> {
    pub x: Option<&'a Frame>,
    pub prev: &'a Frame,
    pub prompt: Option<PromptSpec>,
}

impl<'a> ConditioningSet<'a> {
    pub fn full(x: &'a Frame, prev: &'a Frame, prompt: PromptSpec) -> Self {
        Self {
            x: Some(x),
            prev,
            prompt: Some(prompt),
        }
    }

    pub fn without_prompt(self) -> Self {
        Self { prompt: None, ..self }
    }

    pub fn without_image(self) -> Self {
        Self {
            x: None,
            prompt: None,
            ..self
        }
    }
}

/// Anything that predicts a clean frame. Implemented by the network and by
/// test oracles.
pub trait Denoise {
    fn denoise(&self, y_s: &Frame, cond: &ConditioningSet<'_>, lambda: f64) -> Result<Frame>;
}

impl<F> Denoise for F
where
    F: Fn(&Frame, &ConditioningSet<'_>, f64) -> Result<Frame>,
{
    fn denoise(&self, y_s: &Frame, cond: &ConditioningSet<'_>, lambda: f64) -> Result<Frame> {
        self(y_s, cond, lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
    /// Maps the conditioning vector to per-channel `[scale; shift]`.
    pub film: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub conv_in: Conv3x3,
    pub time1: Linear,
    pub time2: Linear,
    /// `[VOCAB_SIZE, embed_dim]`; row [`NULL_TOKEN`] is the null prompt.
    pub prompt_table: Vec<f32>,
    pub blocks: Vec<ResBlock>,
    pub conv_out: Conv3x3,
}

struct BlockCache {
    h_in: Vec<f32>,
    u: Vec<f32>,
    v: Vec<f32>,
    film: Vec<f32>,
}

struct ForwardCache {
    height: usize,
    width: usize,
    input: Vec<f32>,
    phi: Vec<f32>,
    t_pre: Vec<f32>,
    z: Vec<f32>,
    cond: Vec<f32>,
    tokens: Vec<usize>,
    blocks: Vec<BlockCache>,
    h_final: Vec<f32>,
}

/// Activations recorded by [`DenoiserParams::forward_taped`], consumed by
/// [`DenoiserParams::backward`].
#[derive(Default)]
pub struct Tape {
    entries: Vec<Option<ForwardCache>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Gradients of a scalar loss with respect to the frame inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub y_s: Frame,
    pub x: Frame,
    pub prev: Frame,
}

fn uniform_fill(v: &mut [f32], bound: f32, rng: &mut ChaCha8Rng) {
    for x in v {
        *x = rng.random_range(-bound..bound);
    }
}

impl DenoiserParams {
    fn zeros(config: &DenoiserConfig) -> Self {
        let (c, ch, e) = (config.channels, config.hidden, config.embed_dim);
        Self {
            config: config.clone(),
            conv_in: Conv3x3::zeros(config.input_channels(), ch),
            time1: Linear::zeros(2 * config.time_freqs, e),
            time2: Linear::zeros(e, e),
            prompt_table: vec![0.0; VOCAB_SIZE * e],
            blocks: (0..config.blocks)
                .map(|_| ResBlock {
                    conv1: Conv3x3::zeros(ch, ch),
                    conv2: Conv3x3::zeros(ch, ch),
                    film: Linear::zeros(e, 2 * ch),
                })
                .collect(),
            conv_out: Conv3x3::zeros(ch, c),
        }
    }

    /// Seeded random initialisation; every parameter is non-zero.
    pub fn init(config: &DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let conv = |c: &mut Conv3x3, gain: f32, rng: &mut ChaCha8Rng| {
            let b = gain / ((c.cin * 9) as f32).sqrt();
            uniform_fill(&mut c.weight, b, rng);
            uniform_fill(&mut c.bias, 0.1 * b, rng);
        };
        conv(&mut p.conv_in, 1.0, &mut rng);
        for blk in &mut p.blocks {
            conv(&mut blk.conv1, 1.0, &mut rng);
            conv(&mut blk.conv2, 0.5, &mut rng);
            let b = 0.1 / (blk.film.din as f32).sqrt();
            uniform_fill(&mut blk.film.weight, b, &mut rng);
            uniform_fill(&mut blk.film.bias, b, &mut rng);
        }
        conv(&mut p.conv_out, 1.0, &mut rng);
        for l in [&mut p.time1, &mut p.time2] {
            let b = 1.0 / (l.din as f32).sqrt();
            uniform_fill(&mut l.weight, b, &mut rng);
            uniform_fill(&mut l.bias, 0.1 * b, &mut rng);
        }
        uniform_fill(&mut p.prompt_table, 0.5, &mut rng);
        Ok(p)
    }

    /// Same layout as `self`, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Parameter tensors in canonical order with their checkpoint names.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        fn lin<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f32])>, name: &str, l: &'a Linear) {
            out.push((format!("{name}.weight"), vec![l.dout, l.din], &l.weight));
            out.push((format!("{name}.bias"), vec![l.dout], &l.bias));
        }
        fn cv<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f32])>, name: &str, c: &'a Conv3x3) {
            out.push((format!("{name}.weight"), vec![c.cout, c.cin, 3, 3], &c.weight));
            out.push((format!("{name}.bias"), vec![c.cout], &c.bias));
        }
        let mut out = Vec::new();
        cv(&mut out, "conv_in", &self.conv_in);
        lin(&mut out, "time1", &self.time1);
        lin(&mut out, "time2", &self.time2);
        out.push((
            "prompt_table".into(),
            vec![VOCAB_SIZE, self.config.embed_dim],
            &self.prompt_table,
        ));
        for (i, b) in self.blocks.iter().enumerate() {
            cv(&mut out, &format!("blocks.{i}.conv1"), &b.conv1);
            cv(&mut out, &format!("blocks.{i}.conv2"), &b.conv2);
            lin(&mut out, &format!("blocks.{i}.film"), &b.film);
        }
        cv(&mut out, "conv_out", &self.conv_out);
        out
    }

    /// Mutable parameter slices in the order of [`Self::named_tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = vec![
            &mut self.conv_in.weight,
            &mut self.conv_in.bias,
            &mut self.time1.weight,
            &mut self.time1.bias,
            &mut self.time2.weight,
            &mut self.time2.bias,
            &mut self.prompt_table,
        ];
        for b in &mut self.blocks {
            out.push(&mut b.conv1.weight);
            out.push(&mut b.conv1.bias);
            out.push(&mut b.conv2.weight);
            out.push(&mut b.conv2.bias);
            out.push(&mut b.film.weight);
            out.push(&mut b.film.bias);
        }
        out.push(&mut self.conv_out.weight);
        out.push(&mut self.conv_out.bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        self.named_tensors()
            .into_iter()
            .map(|(n, dims, d)| (n, Tensor { dims, data: d.to_vec() }))
            .collect()
    }

    /// Rebuilds parameters from named tensors (e.g. a checkpoint).
    pub fn from_tensors(config: &DenoiserConfig, tensors: &[(String, Tensor)]) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let expected: Vec<(String, Vec<usize>)> = p
            .named_tensors()
            .into_iter()
            .map(|(n, d, _)| (n, d))
            .collect();
        if tensors.len() != expected.len() {
            return Err(RfdmError::Shape(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, dims), (slot, (tname, t))) in expected.iter().zip(p.slices_mut().into_iter().zip(tensors)) {
            if name != tname || dims != &t.dims {
                return Err(RfdmError::Shape(format!(
                    "parameter `{tname}` {:?} does not match expected `{name}` {:?}",
                    t.dims, dims
                )));
            }
            slot.copy_from_slice(&t.data);
        }
        if !p.is_finite() {
            return Err(RfdmError::Numeric("non-finite parameter".into()));
        }
        Ok(p)
    }

    /// `(sin, cos)` features of the log-SNR at frequencies `2^k / 32`.
    fn time_features(&self, lambda: f64) -> Vec<f32> {
        let mut phi = Vec::with_capacity(2 * self.config.time_freqs);
        for k in 0..self.config.time_freqs {
            let w = 2f64.powi(k as i32) / 32.0;
            phi.push((lambda * w).sin() as f32);
            phi.push((lambda * w).cos() as f32);
        }
        phi
    }

    fn check_inputs(&self, y_s: &Frame, cond: &ConditioningSet<'_>, lambda: f64) -> Result<()> {
        if y_s.channels != self.config.channels {
            return Err(RfdmError::Shape(format!(
                "denoiser expects {} channels, got {}",
                self.config.channels, y_s.channels
            )));
        }
        y_s.check_same_dims(cond.prev, "denoise: y_s vs prev")?;
        if let Some(x) = cond.x {
            y_s.check_same_dims(x, "denoise: y_s vs x")?;
        }
        if !lambda.is_finite() {
            return Err(RfdmError::Domain(format!("lambda must be finite, got {lambda}")));
        }
        if let Some(p) = &cond.prompt {
            p.validate()?;
        }
        Ok(())
    }

    fn run(&self, y_s: &Frame, cond: &ConditioningSet<'_>, lambda: f64) -> Result<(Frame, ForwardCache)> {
        self.check_inputs(y_s, cond, lambda)?;
        let (h, w, c) = (y_s.height, y_s.width, self.config.channels);
        let n = h * w;

        let mut input = vec![0f32; self.config.input_channels() * n];
        let mut put = |slot: usize, f: &Frame| {
            for ch in 0..c {
                let plane = &mut input[(slot + ch) * n..(slot + ch + 1) * n];
                for (p, v) in plane.iter_mut().enumerate() {
                    *v = f.data[p * c + ch];
                }
            }
        };
        put(0, y_s);
        if let Some(x) = cond.x {
            put(c, x);
        }
        if !self.config.cond_x_only {
            put(2 * c + 1, cond.prev);
        }
        if cond.x.is_some() {
            input[2 * c * n..(2 * c + 1) * n].fill(1.0);
        }

        let phi = self.time_features(lambda);
        let t_pre = self.time1.forward(&phi);
        let mut z = self.time2.forward(&silu_vec(&t_pre));
        let tokens: Vec<usize> = match &cond.prompt {
            Some(p) => p.tokens().into_iter().map(|t| t as usize).collect(),
            None => vec![NULL_TOKEN as usize],
        };
        let e = self.config.embed_dim;
        for &t in &tokens {
            for (zi, r) in z.iter_mut().zip(&self.prompt_table[t * e..(t + 1) * e]) {
                *zi += r;
            }
        }
        let cvec = silu_vec(&z);

        let mut hcur = self.conv_in.forward(&input, h, w);
        let ch = self.config.hidden;
        let mut bcaches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let u = blk.conv1.forward(&silu_vec(&hcur), h, w);
            let film = blk.film.forward(&cvec);
            let mut v = u.clone();
            for k in 0..ch {
                let (scale, shift) = (film[k], film[ch + k]);
                for val in &mut v[k * n..(k + 1) * n] {
                    *val = *val * (1.0 + scale) + shift;
                }
            }
            let r = blk.conv2.forward(&silu_vec(&v), h, w);
            let h_in = hcur.clone();
            for (a, b) in hcur.iter_mut().zip(&r) {
                *a += b;
            }
            bcaches.push(BlockCache { h_in, u, v, film });
        }
        let out = self.conv_out.forward(&silu_vec(&hcur), h, w);

        let mut frame = Frame::zeros(h, w, c);
        for ch_i in 0..c {
            for p in 0..n {
                frame.data[p * c + ch_i] = out[ch_i * n + p];
            }
        }
        if !frame.is_finite() {
            return Err(RfdmError::Numeric("non-finite denoiser output".into()));
        }
        let cache = ForwardCache {
            height: h,
            width: w,
            input,
            phi,
            t_pre,
            z,
            cond: cvec,
            tokens,
            blocks: bcaches,
            h_final: hcur,
        };
        Ok((frame, cache))
    }

    /// Forward pass that records activations on `tape`; returns the
    /// prediction and the tape slot for [`Self::backward`].
    pub fn forward_taped(
        &self,
        y_s: &Frame,
        cond: &ConditioningSet<'_>,
        lambda: f64,
        tape: &mut Tape,
    ) -> Result<(Frame, usize)> {
        let (out, cache) = self.run(y_s, cond, lambda)?;
        tape.entries.push(Some(cache));
        Ok((out, tape.entries.len() - 1))
    }

    /// Backpropagates `upstream = dL/dy_pred` through the call recorded in
    /// `slot`, adds parameter gradients into `grads` and returns the input
    /// gradients. Each slot can be consumed once.
    pub fn backward(
        &self,
        tape: &mut Tape,
        slot: usize,
        upstream: &Frame,
        grads: &mut DenoiserParams,
    ) -> Result<InputGrads> {
        let cache = tape
            .entries
            .get_mut(slot)
            .and_then(Option::take)
            .ok_or_else(|| RfdmError::MissingCache(format!("no recorded forward pass in slot {slot}")))?;
        let (h, w, c) = (cache.height, cache.width, self.config.channels);
        if upstream.dims() != [h, w, c] {
            return Err(RfdmError::Shape(format!(
                "upstream gradient {:?} does not match forward output {:?}",
                upstream.dims(),
                [h, w, c]
            )));
        }
        if grads.config != self.config {
            return Err(RfdmError::Shape("gradient buffer has a different layout".into()));
        }
        let n = h * w;
        let ch = self.config.hidden;

        let mut dout = vec![0f32; c * n];
        for ci in 0..c {
            for p in 0..n {
                dout[ci * n + p] = upstream.data[p * c + ci];
            }
        }
        let a_final = silu_vec(&cache.h_final);
        let da = self
            .conv_out
            .backward(&a_final, h, w, &dout, &mut grads.conv_out, true)
            .expect("input grad requested");
        let mut dh: Vec<f32> = da
            .iter()
            .zip(&cache.h_final)
            .map(|(g, &x)| g * silu_grad(x))
            .collect();

        let mut dcond = vec![0f32; self.config.embed_dim];
        for (bi, (blk, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let gblk = &mut grads.blocks[bi];
            let b_act = silu_vec(&bc.v);
            let db = blk
                .conv2
                .backward(&b_act, h, w, &dh, &mut gblk.conv2, true)
                .expect("input grad requested");
            let mut dfilm = vec![0f32; 2 * ch];
            let mut du = vec![0f32; ch * n];
            for k in 0..ch {
                let scale = bc.film[k];
                let (mut ds, mut dsh) = (0f32, 0f32);
                for p in k * n..(k + 1) * n {
                    let dv = db[p] * silu_grad(bc.v[p]);
                    ds += dv * bc.u[p];
                    dsh += dv;
                    du[p] = dv * (1.0 + scale);
                }
                dfilm[k] = ds;
                dfilm[ch + k] = dsh;
            }
            let dc = blk.film.backward(&cache.cond, &dfilm, &mut gblk.film);
            for (a, b) in dcond.iter_mut().zip(&dc) {
                *a += b;
            }
            let a_in = silu_vec(&bc.h_in);
            let dain = blk
                .conv1
                .backward(&a_in, h, w, &du, &mut gblk.conv1, true)
                .expect("input grad requested");
            for ((d, g), &x) in dh.iter_mut().zip(&dain).zip(&bc.h_in) {
                *d += g * silu_grad(x);
            }
        }

        let din = self
            .conv_in
            .backward(&cache.input, h, w, &dh, &mut grads.conv_in, true)
            .expect("input grad requested");

        let dz: Vec<f32> = dcond.iter().zip(&cache.z).map(|(g, &x)| g * silu_grad(x)).collect();
        let e = self.config.embed_dim;
        for &t in &cache.tokens {
            for (g, d) in grads.prompt_table[t * e..(t + 1) * e].iter_mut().zip(&dz) {
                *g += d;
            }
        }
        let t_hidden = silu_vec(&cache.t_pre);
        let dth = self.time2.backward(&t_hidden, &dz, &mut grads.time2);
        let dtp: Vec<f32> = dth.iter().zip(&cache.t_pre).map(|(g, &x)| g * silu_grad(x)).collect();
        self.time1.backward(&cache.phi, &dtp, &mut grads.time1);

        let take = |slot: usize| {
            let mut f = Frame::zeros(h, w, c);
            for ci in 0..c {
                for p in 0..n {
                    f.data[p * c + ci] = din[(slot + ci) * n + p];
                }
            }
            f
        };
        let prev = if self.config.cond_x_only {
            Frame::zeros(h, w, c)
        } else {
            take(2 * c + 1)
        };
        Ok(InputGrads {
            y_s: take(0),
            x: take(c),
            prev,
        })
    }
}

impl Denoise for DenoiserParams {
    fn denoise(&self, y_s: &Frame, cond: &ConditioningSet<'_>, lambda: f64) -> Result<Frame> {
        self.run(y_s, cond, lambda).map(|(f, _)| f)
    }
}

/// Adds `b` into `a` elementwise (same layout).
pub fn accumulate(a: &mut DenoiserParams, b: &DenoiserParams) {
    for (x, y) in a.slices_mut().into_iter().zip(b.named_tensors()) {
        for (p, q) in x.iter_mut().zip(y.2) {
            *p += q;
        }
    }
}

/// Euclidean norm over all parameter tensors.
pub fn global_norm(p: &DenoiserParams) -> f64 {
    p.named_tensors()
        .iter()
        .flat_map(|(_, _, d)| d.iter())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}
