//! Helpers shared by the integration tests and the acceptance harness. Each
//! `check_*` function returns a one-line summary or the reason it failed.
#![allow(dead_code)]

pub mod reference;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfdm::config::RunConfig;
use rfdm::denoiser::{ConditioningSet, DenoiserConfig, DenoiserParams};
use rfdm::forward::{forward_frame, forward_residual, Formulation};
use rfdm::metrics::{dvs, err_accu, temp_con, vidreamsim, DistanceFn, EmbedFn, ErrAccuNorm};
use rfdm::sample::{cfg_combine, edit_frame, edit_video, SamplerConfig};
use rfdm::schedule::NoiseSchedule;
use rfdm::synthvid::{apply_edit, build_dataset, GeneratorConfig, PromptSpec, SceneSpec, ShapeSelector, SplitRatios};
use rfdm::tensor::{Clip, Frame};
use rfdm::tensorio::DatasetManifest;
use rfdm::train::{run_training, TrainConfig, FINAL_CHECKPOINT, LOSS_CURVE};

pub type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn tiny_generator() -> GeneratorConfig {
    GeneratorConfig {
        height: 8,
        width: 8,
        frames: 5,
        radius_range: [0.15, 0.3],
        max_speed: 0.5,
        max_pan: 0.25,
        min_wave_period: 16.0,
        ..Default::default()
    }
}

pub fn tiny_model() -> DenoiserConfig {
    DenoiserConfig {
        hidden: 6,
        blocks: 1,
        embed_dim: 8,
        time_freqs: 2,
        init_seed: 1,
        ..Default::default()
    }
}

pub fn tiny_train() -> TrainConfig {
    TrainConfig {
        ar_frames: 2,
        batch: 2,
        grad_accum: 2,
        lr: 1e-3,
        steps: 100,
        checkpoint_every: 0,
        ..Default::default()
    }
}

/// A run config at the tiny scale, valid as a whole.
pub fn tiny_run_config() -> RunConfig {
    let mut c = RunConfig {
        generator: tiny_generator(),
        model: tiny_model(),
        train: tiny_train(),
        ..Default::default()
    };
    c.data.n_clips = 12;
    c.data.seed = 7;
    c.data.split_ratios = [0.5, 0.25, 0.25];
    c.sampler.steps = 3;
    c
}

pub fn tiny_dataset(dir: &Path) -> DatasetManifest {
    let c = tiny_run_config();
    build_dataset(&c.generator, c.data.n_clips, &c.data.ratios(), dir, c.data.seed).unwrap()
}

pub fn random_frame(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Frame {
    Frame::randn(h, w, 3, rng)
}

pub fn random_clip(len: usize, h: usize, w: usize, seed: u64) -> Clip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Clip::new((0..len).map(|_| random_frame(h, w, &mut rng)).collect()).unwrap()
}

pub fn check_schedule() -> Check {
    let sched = NoiseSchedule::default();
    let n = 1000;
    let grid: Vec<f64> = (0..n)
        .map(|i| sched.s_min + (sched.s_max - sched.s_min) * i as f64 / (n - 1) as f64)
        .collect();
    let mut worst_vp: f64 = 0.0;
    let mut worst_gamma: f64 = 0.0;
    let mut last = f64::INFINITY;
    for &s in &grid {
        let p = sched.eval(s).map_err(|e| e.to_string())?;
        worst_vp = worst_vp.max((p.alpha * p.alpha + p.sigma * p.sigma - 1.0).abs());
        ensure!(p.lambda < last, "lambda not strictly decreasing at s = {s}");
        last = p.lambda;
        let g = sched.gamma(s).map_err(|e| e.to_string())?;
        worst_gamma = worst_gamma.max((g - (p.alpha + p.sigma)).abs());
    }
    ensure!(worst_vp < 1e-6, "max |a^2 + s^2 - 1| = {worst_vp:e}");
    ensure!(worst_gamma < 1e-9, "max |gamma - (a + s)| = {worst_gamma:e}");
    Ok(format!("{n} points, max VP error {worst_vp:.1e}, max gamma error {worst_gamma:.1e}"))
}

pub fn check_forward_moments(configs: usize, draws: usize) -> Check {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for i in 0..configs {
        let s = rng.random_range(sched.s_min..=sched.s_max);
        let y: f32 = rng.random_range(-1.5..1.5);
        let m: f32 = rng.random_range(-1.5..1.5);
        let y0 = Frame::filled(1, draws, 1, y);
        let prev = Frame::filled(1, draws, 1, m);
        let eps = Frame::randn(1, draws, 1, &mut rng);
        let out = forward_residual(&y0, &prev, s, &eps, &sched).map_err(|e| e.to_string())?;
        let p = sched.eval(s).map_err(|e| e.to_string())?;
        let mean = p.alpha * f64::from(y) + p.sigma * f64::from(m);
        let var = p.sigma * p.sigma;
        let n = draws as f64;
        let xs: Vec<f64> = out.y_s.data.iter().map(|&v| f64::from(v)).collect();
        let emp_mean = xs.iter().sum::<f64>() / n;
        let emp_var = xs.iter().map(|v| (v - emp_mean).powi(2)).sum::<f64>() / (n - 1.0);
        let z_mean = (emp_mean - mean).abs() / (var / n).sqrt();
        let z_var = (emp_var - var).abs() / (var * (2.0 / (n - 1.0)).sqrt());
        ensure!(z_mean < 4.0, "config {i} (s = {s:.4}): mean off by {z_mean:.2} SE");
        ensure!(z_var < 4.0, "config {i} (s = {s:.4}): variance off by {z_var:.2} SE");
        worst = worst.max(z_mean).max(z_var);

        let zeros = Frame::zeros_like(&y0);
        let a = forward_residual(&y0, &zeros, s, &eps, &sched).map_err(|e| e.to_string())?;
        let b = forward_frame(&y0, s, &eps, &sched).map_err(|e| e.to_string())?;
        ensure!(
            a.y_s.data.iter().zip(&b.y_s.data).all(|(p, q)| p.to_bits() == q.to_bits()),
            "config {i}: prev = 0 is not bitwise equal to the frame process"
        );
    }
    Ok(format!("{configs} configs x {draws} draws, worst deviation {worst:.2} SE"))
}

pub fn check_oracle_sampler() -> Check {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f32 = 0.0;
    let mut cases = 0;
    for steps in [1, 5, 20] {
        for formulation in [Formulation::FramePrediction, Formulation::ResidualFlow] {
            for prev_kind in ["zero", "random", "far"] {
                for omega in [(1.0, 1.0), (1.5, 7.5)] {
                    let y0 = random_frame(6, 5, &mut rng);
                    let x = random_frame(6, 5, &mut rng);
                    let prev = match prev_kind {
                        "zero" => Frame::zeros_like(&y0),
                        "random" => random_frame(6, 5, &mut rng),
                        _ => random_frame(6, 5, &mut rng).scale(50.0),
                    };
                    let oracle = |_: &Frame, _: &ConditioningSet<'_>, _: f64| Ok(y0.clone());
                    let cfg = SamplerConfig {
                        steps,
                        formulation,
                        omega_x: omega.0,
                        omega_xp: omega.1,
                        ..Default::default()
                    };
                    let prompt = PromptSpec::global_style(2);
                    let mut noise = ChaCha8Rng::seed_from_u64(cases);
                    let out = edit_frame(&oracle, &x, &prev, prompt, &cfg, &sched, &mut noise).map_err(|e| e.to_string())?;
                    let d = out.max_abs_diff(&y0);
                    ensure!(d < 1e-5, "S = {steps}, {formulation:?}, {prev_kind} prev: error {d:e}");
                    worst = worst.max(d);
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} cases, max error {worst:e}"))
}

pub fn check_cfg_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (a, b, c) = (random_frame(4, 4, &mut rng), random_frame(4, 4, &mut rng), random_frame(4, 4, &mut rng));
        let y = cfg_combine(&a, &b, &c.scale(1e3), 1.0, 1.0).map_err(|e| e.to_string())?;
        ensure!(y == c.scale(1e3), "unit weights do not return the (x, p) branch exactly");
        let z = cfg_combine(&a, &b, &c, 0.0, 0.0).map_err(|e| e.to_string())?;
        ensure!(z == a, "zero weights do not return the null branch exactly");
    }
    let s = |v| Frame::filled(1, 1, 1, v);
    let y = cfg_combine(&s(0.0), &s(1.0), &s(2.0), 1.5, 7.5).map_err(|e| e.to_string())?;
    ensure!(y.data[0] == 9.0, "scalar case gives {} instead of 9", y.data[0]);
    Ok("telescoping exact on 50 random triples; scalar case = 9".into())
}

pub fn check_gradients() -> Check {
    let p = reference::check_parameters(24, 99);
    ensure!(p.max_rel < 1e-3, "parameter gradient rel error {:.2e} at {}", p.max_rel, p.worst);
    let i = reference::check_inputs(8, 5);
    ensure!(i.max_rel < 1e-3, "input gradient rel error {:.2e} at {}", i.max_rel, i.worst);
    Ok(format!(
        "{} parameters (max rel {:.1e}), {} input coordinates (max rel {:.1e})",
        p.checked, p.max_rel, i.checked, i.max_rel
    ))
}

pub fn check_causality() -> Check {
    let model = DenoiserParams::init(&DenoiserConfig {
        hidden: 8,
        blocks: 2,
        embed_dim: 8,
        time_freqs: 3,
        init_seed: 11,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let sched = NoiseSchedule::default();
    let clip = random_clip(8, 8, 8, 4);
    let prompt = PromptSpec::local_style(ShapeSelector::All, 1);
    let mut cases = 0;
    for delta in [0, 1, 3] {
        let cfg = SamplerConfig {
            steps: 4,
            delta,
            seed: 21,
            ..Default::default()
        };
        let full = edit_video(&model, &clip, prompt, &cfg, &sched).map_err(|e| e.to_string())?;
        for k in [0usize, 3, 7] {
            let part = edit_video(&model, &clip.prefix(k + 1), prompt, &cfg, &sched).map_err(|e| e.to_string())?;
            for t in 0..=k {
                let same = part.output.frames[t]
                    .data
                    .iter()
                    .zip(&full.output.frames[t].data)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                ensure!(same, "delta = {delta}, k = {k}: frame {t} differs");
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} prefixes bitwise equal (k in 0, 3, 7; delta in 0, 1, 3)"))
}

pub fn check_metric_sanity() -> Check {
    let gen = GeneratorConfig::default();
    let dist = DistanceFn::default().build(3);
    let embed = EmbedFn::default().build(3);
    let mut worst_tc: f64 = 0.0;
    let prompts = [
        PromptSpec::global_style(2),
        PromptSpec::local_style(ShapeSelector::All, 0),
        PromptSpec::remove(ShapeSelector::All),
    ];
    for seed in 0..6u64 {
        let scene = SceneSpec::sample(seed, &gen).map_err(|e| e.to_string())?;
        let tr = apply_edit(&scene, &prompts[seed as usize % 3]).map_err(|e| e.to_string())?;
        let v = vidreamsim(&tr.target, &tr.target, &dist).map_err(|e| e.to_string())?;
        ensure!(v == 0.0, "vidreamsim(Y, Y) = {v:e} for scene {seed}");
        let tc = temp_con(&tr.target, &tr.gt_flow).map_err(|e| e.to_string())?;
        ensure!(tc < 1e-3, "temp_con of the ground truth = {tc:e} for scene {seed}");
        worst_tc = worst_tc.max(tc);
        if seed % 3 == 0 {
            let d = dvs(&tr.input, &tr.target, &tr.target, &embed).map_err(|e| e.to_string())?;
            ensure!((d.value - 1.0).abs() < 1e-9, "dvs(Y as output) = {} for scene {seed}", d.value);
        }
    }
    let constant = Clip::new(vec![Frame::filled(8, 8, 3, 0.4); 6]).unwrap();
    for norm in [ErrAccuNorm::TMinusOne, ErrAccuNorm::T] {
        let e = err_accu(&constant, &dist, norm).map_err(|e| e.to_string())?;
        ensure!(e == 0.0, "err_accu of a constant clip = {e:e}");
    }
    let px = DistanceFn::PixelMse.build(1);
    let sc = |v: &[f32]| Clip::new(v.iter().map(|&x| Frame::filled(1, 1, 1, x)).collect()).unwrap();
    let v = vidreamsim(&sc(&[0.0, 1.0, 2.0]), &sc(&[0.0, 0.0, 0.0]), &px).map_err(|e| e.to_string())?;
    ensure!(v == 2.5, "vidreamsim fixture gives {v}");
    let e = err_accu(&sc(&[0.0, 1.0, 2.0]), &px, ErrAccuNorm::TMinusOne).map_err(|e| e.to_string())?;
    ensure!(e == 5.0, "err_accu fixture gives {e}");
    Ok(format!("identities exact; fixtures 2.5 and 5.0; max GT temp_con {worst_tc:.1e}"))
}

fn train_into(manifest: &DatasetManifest, cfg: &TrainConfig, dir: &Path, resume: Option<&Path>) -> Result<(), String> {
    let rc = tiny_run_config();
    let run = RunConfig { train: cfg.clone(), ..rc };
    let hash = run.training_hash().map_err(|e| e.to_string())?;
    run_training(manifest, &run.model, cfg, &run.schedule, &hash, dir, resume)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

pub fn check_determinism(root: &Path) -> Check {
    let manifest = tiny_dataset(&root.join("data"));
    let full = TrainConfig {
        steps: 100,
        checkpoint_every: 50,
        ..tiny_train()
    };
    let (a, b) = (root.join("a"), root.join("b"));
    train_into(&manifest, &full, &a, None)?;
    train_into(&manifest, &full, &b, None)?;
    let final_a = read(&a.join(FINAL_CHECKPOINT))?;
    ensure!(final_a == read(&b.join(FINAL_CHECKPOINT))?, "two identical runs give different checkpoints");
    ensure!(
        read(&a.join(LOSS_CURVE))? == read(&b.join(LOSS_CURVE))?,
        "two identical runs give different loss curves"
    );

    let c = root.join("c");
    train_into(&manifest, &full, &c, Some(&a.join("step_0000050.ckpt")))?;
    ensure!(final_a == read(&c.join(FINAL_CHECKPOINT))?, "resume from step 50 diverges");

    let d = root.join("d");
    let half = TrainConfig { steps: 50, ..full.clone() };
    train_into(&manifest, &half, &d, None)?;
    train_into(&manifest, &full, &d, Some(&d.join(FINAL_CHECKPOINT)))?;
    ensure!(final_a == read(&d.join(FINAL_CHECKPOINT))?, "extending a 50-step run diverges");
    ensure!(
        read(&a.join(LOSS_CURVE))? == read(&d.join(LOSS_CURVE))?,
        "extended run has a different loss curve"
    );
    Ok(format!("100-step checkpoints identical ({} bytes); both resume paths bitwise equal", final_a.len()))
}

pub fn split_ratios() -> SplitRatios {
    tiny_run_config().data.ratios()
}
