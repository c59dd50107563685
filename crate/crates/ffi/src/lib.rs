//! C ABI over the lab: load a generator and upscale frames, build and apply
//! degradation plans, and compute PSNR / SSIM.
//!
//! Frame buffers are planar `float` arrays laid out frame, channel (RGB),
//! row, column with values in `[0, 1]`. Handles are opaque and must be
//! released with their `_free` function. Every fallible call returns a
//! [`VsrStatus`]; on failure [`vsr_last_error`] describes the problem for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use candle_core::Device;
use vsrlab::degrade::{apply_plan, DegradationPlan};
use vsrlab::gen::{upscale_sequence, Generator};
use vsrlab::loss::{psnr_seq, ssim_seq};
use vsrlab::{Error, FrameSequence};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Checkpoint = 5,
    Io = 6,
    BufferTooSmall = 7,
    Runtime = 8,
    Panic = 9,
}

/// Loaded generator network.
pub struct VsrGenerator {
    inner: Generator,
}

/// Seeded chain of degradation operators.
pub struct VsrDegradationPlan {
    inner: DegradationPlan,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> VsrStatus {
    match e {
        Error::Shape(_) => VsrStatus::Shape,
        Error::Range(_) => VsrStatus::InvalidArgument,
        Error::Config(_) | Error::Consistency(_) => VsrStatus::Config,
        Error::Checkpoint(_) => VsrStatus::Checkpoint,
        Error::Io { .. } => VsrStatus::Io,
        _ => VsrStatus::Runtime,
    }
}

struct Fail(VsrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VsrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VsrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            VsrStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(VsrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(VsrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn frame_len(frames: usize, height: usize, width: usize) -> Result<usize, Fail> {
    frames
        .checked_mul(3)
        .and_then(|n| n.checked_mul(height))
        .and_then(|n| n.checked_mul(width))
        .filter(|&n| n > 0)
        .ok_or_else(|| Fail(VsrStatus::Shape, format!("bad frame dimensions {frames}x3x{height}x{width}")))
}

unsafe fn read_frames(p: *const f32, frames: usize, height: usize, width: usize) -> Result<FrameSequence, Fail> {
    if p.is_null() {
        return Err(null("input buffer"));
    }
    let n = frame_len(frames, height, width)?;
    let data = std::slice::from_raw_parts(p, n).to_vec();
    Ok(FrameSequence::new(data, frames, height, width)?)
}

unsafe fn write_frames(seq: &FrameSequence, out: *mut f32, out_len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    let data = seq.data();
    if out_len < data.len() {
        return Err(Fail(
            VsrStatus::BufferTooSmall,
            format!("output holds {out_len} floats, {} needed", data.len()),
        ));
    }
    ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn vsr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vsr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a generator checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn vsr_generator_load(path: *const c_char, out: *mut *mut VsrGenerator) -> VsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let inner = Generator::load(Path::new(path), &Device::Cpu)?;
        *out = Box::into_raw(Box::new(VsrGenerator { inner }));
        Ok(())
    })
}

/// # Safety
/// `g` must come from [`vsr_generator_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vsr_generator_free(g: *mut VsrGenerator) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of floats [`vsr_generator_upscale`] writes for the given input.
#[no_mangle]
pub extern "C" fn vsr_output_len(frames: usize, height: usize, width: usize, scale: u32) -> usize {
    let s = scale as usize;
    frames
        .saturating_mul(3)
        .saturating_mul(height.saturating_mul(s))
        .saturating_mul(width.saturating_mul(s))
}

/// Upscales a clip by 2 or 4 (two cascaded passes).
///
/// # Safety
/// `input` must hold `frames * 3 * height * width` floats and `output`
/// `output_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn vsr_generator_upscale(
    g: *const VsrGenerator,
    input: *const f32,
    frames: usize,
    height: usize,
    width: usize,
    scale: u32,
    output: *mut f32,
    output_len: usize,
) -> VsrStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("generator"))?;
        if scale != 2 && scale != 4 {
            return Err(Fail(VsrStatus::InvalidArgument, format!("scale must be 2 or 4, got {scale}")));
        }
        let seq = read_frames(input, frames, height, width)?;
        let up = upscale_sequence(&g.inner, &seq, scale as usize)?;
        write_frames(&up, output, output_len)
    })
}

/// The built-in degradation plan.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn vsr_plan_default(seed: u64, out: *mut *mut VsrDegradationPlan) -> VsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(VsrDegradationPlan {
            inner: DegradationPlan::default_plan(seed),
        }));
        Ok(())
    })
}

/// Parses a plan from one step per line (the `step.N` value syntax of the
/// config file, e.g. `jpeg p=0.5 quality=50:90`). Blank lines are skipped.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn vsr_plan_parse(
    text: *const c_char,
    seed: u64,
    out: *mut *mut VsrDegradationPlan,
) -> VsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = c_str(text, "text")?;
        let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let inner = DegradationPlan::from_step_lines(&lines, seed)?;
        *out = Box::into_raw(Box::new(VsrDegradationPlan { inner }));
        Ok(())
    })
}

/// Number of steps in the plan, 0 for a null handle.
///
/// # Safety
/// `plan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vsr_plan_len(plan: *const VsrDegradationPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.inner.steps.len())
}

/// Applies the plan; output has the input's shape.
///
/// # Safety
/// `input` must hold `frames * 3 * height * width` floats and `output`
/// `output_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn vsr_plan_apply(
    plan: *const VsrDegradationPlan,
    input: *const f32,
    frames: usize,
    height: usize,
    width: usize,
    output: *mut f32,
    output_len: usize,
) -> VsrStatus {
    guard(|| {
        let plan = plan.as_ref().ok_or_else(|| null("plan"))?;
        let seq = read_frames(input, frames, height, width)?;
        let (lr, _) = apply_plan(&seq, &plan.inner)?;
        write_frames(&lr, output, output_len)
    })
}

/// # Safety
/// `plan` must come from a `vsr_plan_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vsr_plan_free(plan: *mut VsrDegradationPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

unsafe fn metric(
    reference: *const f32,
    test: *const f32,
    frames: usize,
    height: usize,
    width: usize,
    out: *mut f64,
    f: impl FnOnce(&FrameSequence, &FrameSequence) -> vsrlab::Result<f64>,
) -> VsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = read_frames(reference, frames, height, width)?;
        let b = read_frames(test, frames, height, width)?;
        *out = f(&a, &b)?;
        Ok(())
    })
}

/// PSNR in dB with peak 1, capped at 100.
///
/// # Safety
/// Both buffers must hold `frames * 3 * height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn vsr_psnr(
    reference: *const f32,
    test: *const f32,
    frames: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> VsrStatus {
    metric(reference, test, frames, height, width, out, |a, b| psnr_seq(a, b, 1.0))
}

/// Mean SSIM over frames and channels.
///
/// # Safety
/// Both buffers must hold `frames * 3 * height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn vsr_ssim(
    reference: *const f32,
    test: *const f32,
    frames: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> VsrStatus {
    metric(reference, test, frames, height, width, out, ssim_seq)
}
