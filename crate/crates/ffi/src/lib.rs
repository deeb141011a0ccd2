//! C ABI over the `flipfake` library.
//!
//! Models and banks are opaque handles owned by the caller and released
//! with their `_free` function. Every call returns an [`FfStatus`]; on
//! failure [`ff_last_error`] describes the problem for the calling thread.
//! Strings handed out by the library are released with [`ff_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use flipfake::bank::{self, BankMode, BankVerdict, ModelBank, TrainOptions};
use flipfake::bpf::{self, FilterConfig};
use flipfake::mom::{self, FitOptions, MomModel};
use flipfake::simulator::{SignalKind, SimulatorConfig};
use flipfake::{Error, Label, RngStream, SequenceRecord};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// Impossible sequences, collapsed filters and similar numerical failures.
    Numerical = 5,
    Panic = 6,
}

/// Opaque fitted model.
pub struct FfModel {
    inner: MomModel,
}

/// Opaque labeled model bank.
pub struct FfBank {
    inner: ModelBank,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> FfStatus {
    match err {
        Error::Io { .. } => FfStatus::Io,
        Error::Parse { .. } | Error::Json { .. } => FfStatus::Parse,
        e if e.is_numerical() => FfStatus::Numerical,
        _ => FfStatus::InvalidArgument,
    }
}

struct Fail(FfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FfStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn flips_arg<'a>(p: *const u8, len: usize) -> Result<&'a [u8], Fail> {
    if len == 0 {
        return Err(Fail(FfStatus::InvalidArgument, "sequence is empty".into()));
    }
    if p.is_null() {
        return Err(null("flips"));
    }
    let y = std::slice::from_raw_parts(p, len);
    if let Some(b) = y.iter().find(|&&b| b > 1) {
        return Err(Fail(FfStatus::InvalidArgument, format!("flip value {b} is not 0 or 1")));
    }
    Ok(y)
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn model_arg<'a>(p: *const FfModel) -> Result<&'a MomModel, Fail> {
    p.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

fn boxed_model(m: MomModel) -> *mut FfModel {
    Box::into_raw(Box::new(FfModel { inner: m }))
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library and valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ff_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a model from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_model_load(path: *const c_char, out: *mut *mut FfModel) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        *out = boxed_model(MomModel::load(Path::new(path))?);
        Ok(())
    })
}

/// Parse a model from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_model_from_json(json: *const c_char, out: *mut *mut FfModel) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = str_arg(json, "json")?;
        *out = boxed_model(MomModel::from_json(text)?);
        Ok(())
    })
}

/// Serialize a model to JSON. Release the result with [`ff_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_model_to_json(model: *const FfModel, out: *mut *mut c_char) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = model_arg(model)?.to_json()?;
        *out = CString::new(text)
            .map_err(|_| Fail(FfStatus::Parse, "JSON contains NUL".into()))?
            .into_raw();
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ff_model_free(model: *mut FfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of hidden states.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_model_states(model: *const FfModel, out: *mut usize) -> FfStatus {
    guard(|| {
        *out_arg(out, "out")? = model_arg(model)?.states();
        Ok(())
    })
}

/// Log-likelihood of a 0/1 sequence. Impossible sequences yield `-inf`.
///
/// # Safety
/// `flips` must point to `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_model_log_likelihood(
    model: *const FfModel,
    flips: *const u8,
    len: usize,
    out: *mut f64,
) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = model_arg(model)?;
        *out = mom::log_likelihood(m, flips_arg(flips, len)?)?;
        Ok(())
    })
}

/// Train a model on one sequence: jittered start with `states` hidden
/// states, EM, then (if `raise` is nonzero) one extra state and EM again.
/// `max_iters == 0` or `tol <= 0` selects the library defaults.
///
/// # Safety
/// `flips` must point to `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_model_fit(
    flips: *const u8,
    len: usize,
    states: usize,
    jitter: f64,
    raise: i32,
    max_iters: usize,
    tol: f64,
    seed: u64,
    out: *mut *mut FfModel,
) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let y = flips_arg(flips, len)?;
        let mut fit = FitOptions::default();
        if max_iters > 0 {
            fit.max_iters = max_iters;
        }
        if tol > 0.0 {
            fit.tol = tol;
        }
        let opts = TrainOptions {
            s_init: states,
            jitter,
            fit,
            raise: raise != 0,
        };
        *out = boxed_model(bank::train_model(y, &opts, &mut RngStream::new(seed, 0))?);
        Ok(())
    })
}

/// Draw `len` flips from the model into `buf`.
///
/// # Safety
/// `buf` must have room for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ff_model_generate(model: *const FfModel, len: usize, seed: u64, buf: *mut u8) -> FfStatus {
    guard(|| {
        let m = model_arg(model)?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let rec = mom::generate_sequence(m, len, "ffi", &mut RngStream::new(seed, 0))?;
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(rec.flips());
        Ok(())
    })
}

/// Load a bank directory written by `flipfake train`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_bank_load(dir: *const c_char, out: *mut *mut FfBank) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dir = str_arg(dir, "dir")?;
        *out = Box::into_raw(Box::new(FfBank {
            inner: ModelBank::load(Path::new(dir))?,
        }));
        Ok(())
    })
}

/// Release a bank. Null is ignored.
///
/// # Safety
/// `bank` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ff_bank_free(bank: *mut FfBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Number of models in the bank.
///
/// # Safety
/// `bank` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_bank_len(bank: *const FfBank, out: *mut usize) -> FfStatus {
    guard(|| {
        let b = bank.as_ref().ok_or_else(|| null("bank"))?;
        *out_arg(out, "out")? = b.inner.len();
        Ok(())
    })
}

/// Label with the highest mean log-likelihood. The label is written as its
/// numeric code (0 Real, 1 Simulator, 2 MOM, 3 GAN, 4 Handwritten) and the
/// winning mean to `score`.
///
/// # Safety
/// `bank` must be a live handle; `flips` must point to `len` bytes; the
/// outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_bank_classify(
    bank: *const FfBank,
    flips: *const u8,
    len: usize,
    label: *mut u32,
    score: *mut f64,
) -> FfStatus {
    guard(|| {
        let b = bank.as_ref().ok_or_else(|| null("bank"))?;
        let label = out_arg(label, "label")?;
        let score = out_arg(score, "score")?;
        let rec = SequenceRecord::new("ffi", Label::Real, flips_arg(flips, len)?.to_vec())?;
        let d = bank::classify_with_bank(&rec, &b.inner, BankMode::Argmax)?;
        let BankVerdict::Class(l) = d.verdict else {
            return Err(Fail(FfStatus::Panic, "argmax returned no class".into()));
        };
        *label = l.code();
        *score = d.score;
        Ok(())
    })
}

/// Simulate one sequence. `kind`: 0 trivial faker, 1 random sign change,
/// 2 real coin. Other parameters take the library defaults.
///
/// # Safety
/// `buf` must have room for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ff_simulate(kind: u32, len: usize, seed: u64, buf: *mut u8) -> FfStatus {
    guard(|| {
        let kind = match kind {
            0 => SignalKind::TrivialFaker,
            1 => SignalKind::RscFaker,
            2 => SignalKind::RealCoin,
            k => return Err(Fail(FfStatus::InvalidArgument, format!("unknown signal kind {k}"))),
        };
        if buf.is_null() {
            return Err(null("buf"));
        }
        let cfg = SimulatorConfig {
            kind,
            length: len,
            seed,
            ..SimulatorConfig::default()
        };
        let sample = cfg.sample(kind, "ffi", &mut RngStream::new(seed, 0))?;
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(sample.record.flips());
        Ok(())
    })
}

/// Branching particle filter error of a sequence against a fair coin, with
/// `particles` initial particles and otherwise default filter settings.
/// Smaller values look more like a real coin.
///
/// # Safety
/// `flips` must point to `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_bpf_error(
    flips: *const u8,
    len: usize,
    particles: usize,
    seed: u64,
    out: *mut f64,
) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let y = flips_arg(flips, len)?;
        let cfg = FilterConfig {
            n0: particles,
            seed,
            ..FilterConfig::default()
        };
        let (err, _) = bpf::filter_error(y, &cfg, &RngStream::new(seed, 0).child(0))?;
        *out = err;
        Ok(())
    })
}
