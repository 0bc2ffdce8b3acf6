mod common;

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfdm::denoiser::{ConditioningSet, DenoiserParams};
use rfdm::forward::{forward_residual, Formulation};
use rfdm::sample::{ddim_step, edit_frame, edit_video, frame_rng, key_frame, sampling_grid, SamplerConfig};
use rfdm::schedule::NoiseSchedule;
use rfdm::synthvid::{PromptSpec, ShapeSelector};
use rfdm::tensor::{Clip, Frame};
use rfdm::RfdmError;

#[derive(Debug, Clone, PartialEq)]
struct Call {
    y_s: Frame,
    has_x: bool,
    has_prompt: bool,
    prev: Frame,
    lambda: f64,
}

#[test]
fn ddim_step_moves_along_the_true_trajectory() {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y0 = common::random_frame(4, 4, &mut rng);
    let prev = common::random_frame(4, 4, &mut rng);
    let eps = common::random_frame(4, 4, &mut rng);
    for (from, to) in [(0.9, 0.7), (0.5, 0.1), (0.99, 0.01)] {
        let a = forward_residual(&y0, &prev, from, &eps, &sched).unwrap();
        let b = forward_residual(&y0, &prev, to, &eps, &sched).unwrap();
        let stepped = ddim_step(&a.y_s, &y0, from, to, &sched).unwrap();
        assert!(stepped.max_abs_diff(&b.y_s) < 1e-5, "{from} -> {to}");
    }
}

#[test]
fn grid_ends_at_the_clean_endpoint() {
    let sched = NoiseSchedule::default();
    for s in [1, 2, 20] {
        let g = sampling_grid(&sched, s).unwrap();
        assert_eq!(g.len(), s + 1);
        assert_eq!(g[0], sched.s_max);
        assert_eq!(*g.last().unwrap(), 0.0);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }
    assert!(sampling_grid(&sched, 0).is_err());
}

fn recording<'a>(calls: &'a RefCell<Vec<Call>>, value: &'a Frame) -> impl Fn(&Frame, &ConditioningSet<'_>, f64) -> rfdm::Result<Frame> + 'a {
    move |y, c, l| {
        calls.borrow_mut().push(Call {
            y_s: y.clone(),
            has_x: c.x.is_some(),
            has_prompt: c.prompt.is_some(),
            prev: c.prev.clone(),
            lambda: l,
        });
        Ok(value.clone())
    }
}

#[test]
fn one_step_makes_three_guided_calls_from_the_shifted_start() {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = common::random_frame(5, 5, &mut rng);
    let prev = common::random_frame(5, 5, &mut rng);
    let y0 = common::random_frame(5, 5, &mut rng);
    for formulation in [Formulation::ResidualFlow, Formulation::FramePrediction] {
        let calls = RefCell::new(Vec::new());
        let cfg = SamplerConfig {
            steps: 1,
            formulation,
            ..Default::default()
        };
        let prompt = PromptSpec::remove(ShapeSelector::Circle);
        let out = edit_frame(&recording(&calls, &y0), &x, &prev, prompt, &cfg, &sched, &mut frame_rng(5, 2)).unwrap();
        assert_eq!(out, y0);
        let calls = calls.into_inner();
        assert_eq!(calls.len(), 3);
        let flags: Vec<(bool, bool)> = calls.iter().map(|c| (c.has_x, c.has_prompt)).collect();
        assert_eq!(flags, vec![(false, false), (true, false), (true, true)]);
        let eps = Frame::randn(5, 5, 3, &mut frame_rng(5, 2));
        let start = match formulation {
            Formulation::ResidualFlow => prev.add(&eps),
            Formulation::FramePrediction => eps,
        };
        let lambda = sched.eval(sched.s_max).unwrap().lambda;
        for c in &calls {
            assert_eq!(c.y_s, start);
            assert_eq!(c.prev, prev);
            assert_eq!(c.lambda, lambda);
        }
    }
}

#[test]
fn video_conditions_on_the_key_frames() {
    let sched = NoiseSchedule::default();
    let clip = common::random_clip(8, 4, 4, 1);
    for delta in [0, 1, 2, 3, 5] {
        let calls = RefCell::new(Vec::new());
        let frames = RefCell::new(0usize);
        let model = |y: &Frame, c: &ConditioningSet<'_>, l: f64| {
            calls.borrow_mut().push((c.prev.clone(), *frames.borrow()));
            let _ = (y, l);
            let t = clip.frames.iter().position(|f| Some(f) == c.x).unwrap_or(*frames.borrow());
            *frames.borrow_mut() = t;
            Ok(Frame::filled(4, 4, 3, t as f32 + 1.0))
        };
        let cfg = SamplerConfig {
            steps: 2,
            delta,
            ..Default::default()
        };
        let res = edit_video(&model, &clip, PromptSpec::global_style(1), &cfg, &sched).unwrap();
        let expected: Vec<Option<usize>> = (0..8).map(|t| key_frame(t, delta)).collect();
        assert_eq!(res.key_frames, expected);
        for (t, key) in expected.iter().enumerate() {
            let want = match key {
                None => Frame::zeros(4, 4, 3),
                Some(k) => res.output.frames[*k].clone(),
            };
            for (prev, _) in calls.borrow().iter().skip(t * 6).take(6) {
                assert_eq!(prev, &want, "delta {delta}, frame {t}");
            }
        }
    }
}

#[test]
fn same_seed_same_output_other_seed_differs() {
    let model = DenoiserParams::init(&common::tiny_model()).unwrap();
    let sched = NoiseSchedule::default();
    let clip = common::random_clip(4, 6, 6, 2);
    let prompt = PromptSpec::local_style(ShapeSelector::All, 3);
    let cfg = SamplerConfig { steps: 3, ..Default::default() };
    let a = edit_video(&model, &clip, prompt, &cfg, &sched).unwrap();
    let b = edit_video(&model, &clip, prompt, &cfg, &sched).unwrap();
    assert_eq!(a, b);
    let c = edit_video(&model, &clip, prompt, &SamplerConfig { seed: 1, ..cfg }, &sched).unwrap();
    assert_ne!(a.output, c.output);
}

#[test]
fn later_frames_do_not_change_earlier_outputs() {
    let model = DenoiserParams::init(&common::tiny_model()).unwrap();
    let sched = NoiseSchedule::default();
    let clip = common::random_clip(6, 6, 6, 3);
    let mut changed = clip.clone();
    changed.frames[4] = changed.frames[4].scale(-2.0);
    let cfg = SamplerConfig { steps: 3, ..Default::default() };
    let prompt = PromptSpec::global_style(4);
    let a = edit_video(&model, &clip, prompt, &cfg, &sched).unwrap();
    let b = edit_video(&model, &changed, prompt, &cfg, &sched).unwrap();
    assert_eq!(a.output.frames[..4], b.output.frames[..4]);
    assert_ne!(a.output.frames[4], b.output.frames[4]);
}

#[test]
fn failures_report_frame_and_step() {
    let sched = NoiseSchedule::default();
    let clip = common::random_clip(3, 4, 4, 4);
    let calls = RefCell::new(0);
    let model = |y: &Frame, _: &ConditioningSet<'_>, _: f64| {
        *calls.borrow_mut() += 1;
        if *calls.borrow() > 3 * 2 + 3 {
            Err(RfdmError::Numeric("boom".into()))
        } else {
            Ok(y.clone())
        }
    };
    let cfg = SamplerConfig { steps: 2, ..Default::default() };
    let err = edit_video(&model, &clip, PromptSpec::global_style(1), &cfg, &sched).unwrap_err();
    match err {
        RfdmError::Sampling { frame, step, .. } => assert_eq!((frame, step), (1, 1)),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let model = DenoiserParams::init(&common::tiny_model()).unwrap();
    let sched = NoiseSchedule::default();
    let prompt = PromptSpec::global_style(1);
    let empty = Clip { frames: vec![] };
    assert!(edit_video(&model, &empty, prompt, &SamplerConfig::default(), &sched).is_err());
    let clip = common::random_clip(2, 4, 4, 0);
    let zero = SamplerConfig { steps: 0, ..Default::default() };
    assert!(matches!(edit_video(&model, &clip, prompt, &zero, &sched), Err(RfdmError::Config { .. })));
    let nan = SamplerConfig { omega_x: f64::NAN, ..Default::default() };
    assert!(edit_video(&model, &clip, prompt, &nan, &sched).is_err());
}
