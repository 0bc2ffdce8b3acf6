//! C ABI over the `rfdm` core crate.
//!
//! Handles are opaque heap objects created by `rfdm_*_new`/`_load`/`_read`
//! and released by the matching `_free`. Every fallible function returns an
//! [`RfdmStatus`]; on failure the message is available from
//! [`rfdm_last_error`] on the same thread until the next failing call.
//! Panics never cross the boundary; they surface as
//! [`RfdmStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rfdm::denoiser::DenoiserParams;
use rfdm::forward::Formulation;
use rfdm::metrics::{err_accu, temp_con, vidreamsim, DistanceFn, ErrAccuNorm};
use rfdm::sample::{edit_video, SamplerConfig};
use rfdm::schedule::NoiseSchedule;
use rfdm::synthvid::PromptSpec;
use rfdm::tensor::{Clip, Tensor};
use rfdm::tensorio::{read_tensor, write_tensor, Checkpoint};
use rfdm::train::{checkpoint_formulation, load_params};
use rfdm::RfdmError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Config = 6,
    InvalidPrompt = 7,
    Numeric = 8,
    Sampling = 9,
    ConfigHashMismatch = 10,
    Other = 11,
    Panic = 12,
}

fn status_of(e: &RfdmError) -> RfdmStatus {
    match e {
        RfdmError::Domain(_) => RfdmStatus::InvalidArgument,
        RfdmError::Shape(_) => RfdmStatus::Shape,
        RfdmError::Io { .. } | RfdmError::MissingResults(_) => RfdmStatus::Io,
        RfdmError::Format { .. } | RfdmError::Json(_) => RfdmStatus::Format,
        RfdmError::Config { .. } => RfdmStatus::Config,
        RfdmError::InvalidPrompt(_) => RfdmStatus::InvalidPrompt,
        RfdmError::Numeric(_) => RfdmStatus::Numeric,
        RfdmError::Sampling { .. } => RfdmStatus::Sampling,
        RfdmError::ConfigHashMismatch { .. } => RfdmStatus::ConfigHashMismatch,
        _ => RfdmStatus::Other,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(RfdmStatus, String);

impl From<RfdmError> for Fail {
    fn from(e: RfdmError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RfdmStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RfdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RfdmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RfdmStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RfdmStatus::InvalidArgument, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// A trained denoiser plus the formulation it was trained with.
pub struct RfdmModel {
    params: DenoiserParams,
    formulation: Formulation,
}

/// A `[frames, height, width, channels]` float clip.
pub struct RfdmClip {
    clip: Clip,
    flat: Vec<f32>,
}

impl RfdmClip {
    fn new(clip: Clip) -> Self {
        let flat = clip.to_tensor().data;
        Self { clip, flat }
    }
}

/// Sampler knobs; obtain defaults from [`rfdm_sampler_defaults`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RfdmSamplerParams {
    pub steps: u32,
    pub omega_x: f64,
    pub omega_xp: f64,
    /// Key-frame interval; 0 keeps conditioning on the first output frame.
    pub delta: u32,
    pub seed: u64,
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rfdm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rfdm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `rfdm train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfdm_model_load(path: *const c_char, out: *mut *mut RfdmModel) -> RfdmStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let ckpt = Checkpoint::read(&path)?;
        let params = load_params(&ckpt)?;
        let formulation = checkpoint_formulation(&ckpt).unwrap_or_default();
        put(out, RfdmModel { params, formulation }, "out")
    })
}

/// Number of scalar parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rfdm_model_num_params(model: *const RfdmModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.num_params())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rfdm_model_free(model: *mut RfdmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Copies `frames * height * width * channels` floats (frame-major, then
/// row, column, channel) into a new clip.
///
/// # Safety
/// `data` must point to that many readable floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rfdm_clip_new(
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: *const f32,
    out: *mut *mut RfdmClip,
) -> RfdmStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = [frames, height, width, channels]
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Fail(RfdmStatus::InvalidArgument, "clip size overflows".into()))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        let t = Tensor::new(vec![frames, height, width, channels], values)?;
        put(out, RfdmClip::new(Clip::from_tensor(&t)?), "out")
    })
}

/// Reads a clip tensor file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfdm_clip_read(path: *const c_char, out: *mut *mut RfdmClip) -> RfdmStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let clip = Clip::from_tensor(&read_tensor(&path)?)?;
        put(out, RfdmClip::new(clip), "out")
    })
}

/// # Safety
/// `clip` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rfdm_clip_write(clip: *const RfdmClip, path: *const c_char) -> RfdmStatus {
    guard(|| {
        let clip = borrow(clip, "clip")?;
        let path = path_arg(path, "path")?;
        write_tensor(&path, &clip.clip.to_tensor())?;
        Ok(())
    })
}

/// Writes the clip dimensions; any output pointer may be null.
///
/// # Safety
/// `clip` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfdm_clip_dims(
    clip: *const RfdmClip,
    frames: *mut usize,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> RfdmStatus {
    guard(|| {
        let clip = borrow(clip, "clip")?;
        let [h, w, c] = clip.clip.frame_dims().unwrap_or([0; 3]);
        for (p, v) in [(frames, clip.clip.len()), (height, h), (width, w), (channels, c)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Borrowed view of the clip's floats in the layout of [`rfdm_clip_new`];
/// valid until the clip is freed. Null for a null handle.
///
/// # Safety
/// `clip` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rfdm_clip_data(clip: *const RfdmClip) -> *const f32 {
    clip.as_ref().map_or(ptr::null(), |c| c.flat.as_ptr())
}

/// # Safety
/// `clip` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rfdm_clip_free(clip: *mut RfdmClip) {
    if !clip.is_null() {
        drop(Box::from_raw(clip));
    }
}

#[no_mangle]
pub extern "C" fn rfdm_sampler_defaults() -> RfdmSamplerParams {
    let d = SamplerConfig::default();
    RfdmSamplerParams {
        steps: d.steps as u32,
        omega_x: d.omega_x,
        omega_xp: d.omega_xp,
        delta: d.delta as u32,
        seed: d.seed,
    }
}

/// Edits `input` frame by frame under `prompt` (e.g. `remove:circle`) and
/// returns a new clip in `out`. A null `params` uses the defaults.
///
/// # Safety
/// `model` and `input` must be live handles, `prompt` a NUL-terminated
/// string, `params` null or valid, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfdm_edit_video(
    model: *const RfdmModel,
    input: *const RfdmClip,
    prompt: *const c_char,
    params: *const RfdmSamplerParams,
    out: *mut *mut RfdmClip,
) -> RfdmStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let input = borrow(input, "input")?;
        if prompt.is_null() {
            return Err(null("prompt"));
        }
        let prompt = CStr::from_ptr(prompt)
            .to_str()
            .map_err(|_| Fail(RfdmStatus::InvalidPrompt, "prompt is not UTF-8".into()))?;
        let prompt = PromptSpec::parse(prompt)?;
        let p = params.as_ref().copied().unwrap_or_else(|| rfdm_sampler_defaults());
        let cfg = SamplerConfig {
            steps: p.steps as usize,
            omega_x: p.omega_x,
            omega_xp: p.omega_xp,
            delta: p.delta as usize,
            formulation: model.formulation,
            seed: p.seed,
            trace: false,
        };
        let res = edit_video(&model.params, &input.clip, prompt, &cfg, &NoiseSchedule::default())?;
        put(out, RfdmClip::new(res.output), "out")
    })
}

/// `alpha`, `sigma` and the clamped log-SNR `lambda` of the default
/// schedule at diffusion time `s`. Null outputs are skipped.
///
/// # Safety
/// Non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfdm_schedule_eval(s: f64, alpha: *mut f64, sigma: *mut f64, lambda: *mut f64) -> RfdmStatus {
    guard(|| {
        let p = NoiseSchedule::default().eval(s)?;
        for (o, v) in [(alpha, p.alpha), (sigma, p.sigma), (lambda, p.lambda)] {
            if let Some(o) = o.as_mut() {
                *o = v;
            }
        }
        Ok(())
    })
}

/// Standard deviation scale of the residual forward process at `s`.
///
/// # Safety
/// `gamma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfdm_schedule_gamma(s: f64, gamma: *mut f64) -> RfdmStatus {
    guard(|| {
        if gamma.is_null() {
            return Err(null("gamma"));
        }
        *gamma = NoiseSchedule::default().gamma(s)?;
        Ok(())
    })
}

fn distance(clip: &Clip) -> rfdm::metrics::Distance {
    DistanceFn::default().build(clip.frame_dims().map_or(3, |d| d[2]))
}

unsafe fn write_out(out: *mut f64, v: f64) -> Result<(), Fail> {
    let o = out.as_mut().ok_or_else(|| null("out"))?;
    *o = v;
    Ok(())
}

/// Faithfulness of `output` to `target` with the default perceptual
/// distance.
///
/// # Safety
/// Both clips must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rfdm_metric_vidreamsim(output: *const RfdmClip, target: *const RfdmClip, out: *mut f64) -> RfdmStatus {
    guard(|| {
        let (o, t) = (borrow(output, "output")?, borrow(target, "target")?);
        write_out(out, vidreamsim(&o.clip, &t.clip, &distance(&o.clip))?)
    })
}

/// Drift of every frame from the first, normalised by `T - 1`.
///
/// # Safety
/// `output` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rfdm_metric_err_accu(output: *const RfdmClip, out: *mut f64) -> RfdmStatus {
    guard(|| {
        let o = borrow(output, "output")?;
        write_out(out, err_accu(&o.clip, &distance(&o.clip), ErrAccuNorm::TMinusOne)?)
    })
}

/// Warping error of `output` under `flow`, a 3-channel clip of
/// `(dx, dy, valid)` per pixel.
///
/// # Safety
/// Both clips must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rfdm_metric_temp_con(output: *const RfdmClip, flow: *const RfdmClip, out: *mut f64) -> RfdmStatus {
    guard(|| {
        let (o, f) = (borrow(output, "output")?, borrow(flow, "flow")?);
        write_out(out, temp_con(&o.clip, &f.clip.to_tensor())?)
    })
}
