//! Independent f64 forward pass of the denoiser, written from the layer
//! definitions with naive loops, plus central finite differences on it.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfdm::denoiser::{ConditioningSet, DenoiserConfig, DenoiserParams, InputGrads, Tape};
use rfdm::synthvid::{PromptSpec, ShapeSelector};
use rfdm::tensor::Frame;

pub const H: f64 = 1e-3;
pub const LAMBDA: f64 = 0.7;
pub const SIDE: usize = 6;

pub fn config() -> DenoiserConfig {
    DenoiserConfig {
        hidden: 8,
        blocks: 2,
        embed_dim: 8,
        time_freqs: 4,
        init_seed: 3,
        ..Default::default()
    }
}

pub fn prompt() -> PromptSpec {
    PromptSpec::local_style(ShapeSelector::Circle, 4)
}

#[derive(Clone)]
pub struct Inputs {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub prev: Vec<f64>,
}

impl Inputs {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = || {
            let fr = Frame::randn(SIDE, SIDE, 3, &mut rng);
            fr.data.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()
        };
        Self {
            y: f(),
            x: f(),
            prev: f(),
        }
    }

    pub fn frame(v: &[f64]) -> Frame {
        Frame::from_vec(SIDE, SIDE, 3, v.iter().map(|&a| a as f32).collect()).unwrap()
    }
}

pub type Params = HashMap<String, Vec<f64>>;

pub fn to_f64(p: &DenoiserParams) -> Params {
    p.named_tensors()
        .into_iter()
        .map(|(n, _, d)| (n, d.iter().map(|&v| f64::from(v)).collect()))
        .collect()
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Naive HWC convolution, zero padding.
fn conv(w: &[f64], b: &[f64], inp: &[f64], cin: usize, cout: usize) -> Vec<f64> {
    let n = SIDE as isize;
    let mut out = vec![0.0; SIDE * SIDE * cout];
    for y in 0..n {
        for x in 0..n {
            for co in 0..cout {
                let mut acc = b[co];
                for ky in 0..3isize {
                    for kx in 0..3isize {
                        let (sy, sx) = (y + ky - 1, x + kx - 1);
                        if sy < 0 || sx < 0 || sy >= n || sx >= n {
                            continue;
                        }
                        for ci in 0..cin {
                            let wv = w[((co * cin + ci) * 3 + ky as usize) * 3 + kx as usize];
                            acc += wv * inp[((sy * n + sx) as usize) * cin + ci];
                        }
                    }
                }
                out[((y * n + x) as usize) * cout + co] = acc;
            }
        }
    }
    out
}

fn linear(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + x.iter().enumerate().map(|(i, v)| w[o * x.len() + i] * v).sum::<f64>())
        .collect()
}

pub fn reference(p: &Params, cfg: &DenoiserConfig, inp: &Inputs) -> Vec<f64> {
    let (c, ch, e) = (3, cfg.hidden, cfg.embed_dim);
    let cin = 3 * c + 1;
    let npx = SIDE * SIDE;
    let mut stacked = vec![0.0; npx * cin];
    for px in 0..npx {
        for k in 0..c {
            stacked[px * cin + k] = inp.y[px * c + k];
            stacked[px * cin + c + k] = inp.x[px * c + k];
            stacked[px * cin + 2 * c + 1 + k] = inp.prev[px * c + k];
        }
        stacked[px * cin + 2 * c] = 1.0;
    }
    let mut phi = Vec::new();
    for k in 0..cfg.time_freqs {
        let w = 2f64.powi(k as i32) / 32.0;
        phi.push((LAMBDA * w).sin());
        phi.push((LAMBDA * w).cos());
    }
    let t1: Vec<f64> = linear(&p["time1.weight"], &p["time1.bias"], &phi).into_iter().map(silu).collect();
    let mut z = linear(&p["time2.weight"], &p["time2.bias"], &t1);
    for tok in prompt().tokens() {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += p["prompt_table"][tok as usize * e + i];
        }
    }
    let cvec: Vec<f64> = z.into_iter().map(silu).collect();

    let mut h = conv(&p["conv_in.weight"], &p["conv_in.bias"], &stacked, cin, ch);
    for b in 0..cfg.blocks {
        let k = |s: &str| format!("blocks.{b}.{s}");
        let a: Vec<f64> = h.iter().map(|&v| silu(v)).collect();
        let u = conv(&p[&k("conv1.weight")], &p[&k("conv1.bias")], &a, ch, ch);
        let film = linear(&p[&k("film.weight")], &p[&k("film.bias")], &cvec);
        let v: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(i, &uv)| silu(uv * (1.0 + film[i % ch]) + film[ch + i % ch]))
            .collect();
        let r = conv(&p[&k("conv2.weight")], &p[&k("conv2.bias")], &v, ch, ch);
        for (hv, rv) in h.iter_mut().zip(r) {
            *hv += rv;
        }
    }
    let a: Vec<f64> = h.iter().map(|&v| silu(v)).collect();
    conv(&p["conv_out.weight"], &p["conv_out.bias"], &a, ch, c)
}

/// Sum of squared outputs; its gradient w.r.t. the output is `2 * out`.
pub fn ref_loss(p: &Params, cfg: &DenoiserConfig, inp: &Inputs) -> f64 {
    reference(p, cfg, inp).iter().map(|v| v * v).sum()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

pub fn backprop(p: &DenoiserParams, inp: &Inputs) -> (DenoiserParams, InputGrads) {
    let (x, prev) = (Inputs::frame(&inp.x), Inputs::frame(&inp.prev));
    let cond = ConditioningSet::full(&x, &prev, prompt());
    let mut tape = Tape::new();
    let (out, slot) = p.forward_taped(&Inputs::frame(&inp.y), &cond, LAMBDA, &mut tape).unwrap();
    let mut g = p.zeros_like();
    let ig = p.backward(&mut tape, slot, &out.scale(2.0), &mut g).unwrap();
    (g, ig)
}

pub struct GradReport {
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl GradReport {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel: 0.0,
            worst: String::new(),
        }
    }

    fn push(&mut self, what: String, bp: f64, fd: f64) {
        let r = rel_err(bp, fd);
        self.checked += 1;
        if r >= self.max_rel {
            self.max_rel = r;
            self.worst = format!("{what}: backprop {bp:e} vs fd {fd:e}");
        }
    }
}

/// `n` random parameter entries.
pub fn check_parameters(n: usize, seed: u64) -> GradReport {
    let p = DenoiserParams::init(&config()).unwrap();
    let inp = Inputs::random(17);
    let (g, _) = backprop(&p, &inp);
    let base = to_f64(&p);
    let grads = to_f64(&g);
    let names: Vec<String> = p.named_tensors().into_iter().map(|t| t.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::new();
    for _ in 0..n {
        let name = &names[rng.random_range(0..names.len())];
        let i = rng.random_range(0..base[name].len());
        let mut q = base.clone();
        q.get_mut(name).unwrap()[i] += H;
        let lp = ref_loss(&q, &p.config, &inp);
        q.get_mut(name).unwrap()[i] -= 2.0 * H;
        let lm = ref_loss(&q, &p.config, &inp);
        rep.push(format!("{name}[{i}]"), grads[name][i], (lp - lm) / (2.0 * H));
    }
    rep
}

/// `n` random pixel coordinates, each checked through `prev` and `y_s`.
pub fn check_inputs(n: usize, seed: u64) -> GradReport {
    let p = DenoiserParams::init(&config()).unwrap();
    let inp = Inputs::random(23);
    let (_, ig) = backprop(&p, &inp);
    let params = to_f64(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::new();
    for _ in 0..n {
        let i = rng.random_range(0..inp.prev.len());
        for which in ["prev", "y_s"] {
            let bump = |d: f64| {
                let mut q = inp.clone();
                match which {
                    "prev" => q.prev[i] += d,
                    _ => q.y[i] += d,
                }
                ref_loss(&params, &p.config, &q)
            };
            let fd = (bump(H) - bump(-H)) / (2.0 * H);
            let bp = f64::from(if which == "prev" { ig.prev.data[i] } else { ig.y_s.data[i] });
            rep.push(format!("{which}[{i}]"), bp, fd);
        }
    }
    rep
}
