//! Backprop (f32) against central finite differences of an independent f64
//! reference forward pass.

mod common;

use common::reference::{self, config, prompt, Inputs, LAMBDA};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfdm::denoiser::{ConditioningSet, Denoise, DenoiserConfig, DenoiserParams, Tape};
use rfdm::tensor::Frame;

#[test]
fn reference_forward_matches_network() {
    let p = DenoiserParams::init(&config()).unwrap();
    let inp = Inputs::random(17);
    let (x, prev) = (Inputs::frame(&inp.x), Inputs::frame(&inp.prev));
    let out = p
        .denoise(&Inputs::frame(&inp.y), &ConditioningSet::full(&x, &prev, prompt()), LAMBDA)
        .unwrap();
    let r = reference::reference(&reference::to_f64(&p), &p.config, &inp);
    for (a, b) in out.data.iter().zip(&r) {
        assert!((f64::from(*a) - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for seed in [99, 100] {
        let rep = reference::check_parameters(24, seed);
        assert!(rep.max_rel < 1e-3, "{}", rep.worst);
    }
}

#[test]
fn input_gradients_match_finite_differences() {
    let rep = reference::check_inputs(8, 5);
    assert!(rep.max_rel < 1e-3, "{}", rep.worst);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let p = DenoiserParams::init(&config()).unwrap();
    let inp = Inputs::random(1);
    let (x, prev) = (Inputs::frame(&inp.x), Inputs::frame(&inp.prev));
    let cond = ConditioningSet::full(&x, &prev, prompt());
    let mut tape = Tape::new();
    let (out, slot) = p.forward_taped(&Inputs::frame(&inp.y), &cond, LAMBDA, &mut tape).unwrap();
    let mut g = p.zeros_like();
    let ig = p.backward(&mut tape, slot, &Frame::zeros_like(&out), &mut g).unwrap();
    assert!(g.named_tensors().iter().all(|(_, _, d)| d.iter().all(|&v| v == 0.0)));
    assert!(ig.prev.data.iter().chain(&ig.y_s.data).all(|&v| v == 0.0));
}

#[test]
fn backward_twice_on_one_slot_is_an_error() {
    let p = DenoiserParams::init(&config()).unwrap();
    let inp = Inputs::random(4);
    let (x, prev) = (Inputs::frame(&inp.x), Inputs::frame(&inp.prev));
    let cond = ConditioningSet::full(&x, &prev, prompt());
    let mut tape = Tape::new();
    let (out, slot) = p.forward_taped(&Inputs::frame(&inp.y), &cond, LAMBDA, &mut tape).unwrap();
    let mut g = p.zeros_like();
    p.backward(&mut tape, slot, &out, &mut g).unwrap();
    assert!(p.backward(&mut tape, slot, &out, &mut g).is_err());
}

#[test]
fn x_only_model_ignores_prev() {
    let cfg = DenoiserConfig {
        cond_x_only: true,
        ..config()
    };
    let p = DenoiserParams::init(&cfg).unwrap();
    let inp = Inputs::random(2);
    let (x, y) = (Inputs::frame(&inp.x), Inputs::frame(&inp.y));
    let a = Inputs::frame(&inp.prev);
    let b = Frame::zeros_like(&a);
    let oa = p.denoise(&y, &ConditioningSet::full(&x, &a, prompt()), 0.1).unwrap();
    let ob = p.denoise(&y, &ConditioningSet::full(&x, &b, prompt()), 0.1).unwrap();
    assert_eq!(oa, ob);
}

#[test]
fn activations_stay_finite_on_random_inputs() {
    let p = DenoiserParams::init(&DenoiserConfig {
        hidden: 8,
        blocks: 3,
        ..config()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let mut f = || Frame::from_vec(4, 4, 3, (0..48).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let (y, x, prev) = (f(), f(), f());
        let lambda = rng.random_range(-20.0..20.0);
        let cond = ConditioningSet {
            x: Some(&x),
            prev: &prev,
            prompt: None,
        };
        let out = p.denoise(&y, &cond, lambda).unwrap();
        assert!(out.is_finite());
    }
}
