//! Residual flow diffusion for causal, frame-by-frame video editing.
//!
//! A desk-scale pipeline: synthetic paired edit videos ([`synthvid`]), the
//! frame and residual-flow forward processes ([`forward`]), a small
//! conditional denoiser with hand-written backprop ([`denoiser`]),
//! autoregressive training ([`train`]) and DDIM sampling with guidance and
//! key frames ([`sample`]), plus the evaluation metrics ([`metrics`]).

// `!(a > b)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablate;
pub mod cli;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod forward;
pub mod metrics;
pub mod optim;
pub mod sample;
pub mod schedule;
pub mod synthvid;
pub mod tensor;
pub mod tensorio;
pub mod train;

pub use error::{Result, RfdmError};
