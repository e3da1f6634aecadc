//! C ABI over the dynsplit model, latent wire format and MI estimators.
//!
//! Every fallible function returns a [`DsStatus`]; on failure a message is
//! available from [`ds_last_error`] on the same thread. Results are written
//! through out-pointers. Arrays are row-major `f64` unless noted.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use dynsplit::cascade::{CascadeModel, Mode};
use dynsplit::estimators::{gcmi, plugin_discrete_mi, SampleMatrix};
use dynsplit::nn::Tensor;
use dynsplit::splitsim::{decode_message, encode_message, HEADER_BYTES};
use dynsplit::Error;
use libc::c_char;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Wire = 6,
    Contract = 7,
    BufferTooSmall = 8,
    InsufficientSamples = 9,
    Panic = 10,
}

/// Which latent code to produce or expect.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsMode {
    Informative = 0,
    Compressed = 1,
}

impl From<DsMode> for Mode {
    fn from(m: DsMode) -> Self {
        match m {
            DsMode::Informative => Mode::Informative,
            DsMode::Compressed => Mode::Compressed,
        }
    }
}

/// Opaque handle to a trained two-mode model.
pub struct DsModel {
    inner: CascadeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn fail(status: DsStatus, msg: impl Into<String>) -> DsStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> DsStatus {
    match e {
        Error::Shape { .. } => DsStatus::Shape,
        Error::Config(_) => DsStatus::InvalidArgument,
        Error::Schema(_) | Error::Parse { .. } | Error::Serde { .. } => DsStatus::Parse,
        Error::Io { .. } => DsStatus::Io,
        Error::Wire(_) => DsStatus::Wire,
        Error::InsufficientSamples { .. } => DsStatus::InsufficientSamples,
        _ => DsStatus::Contract,
    }
}

fn guard(f: impl FnOnce() -> Result<(), DsStatus>) -> DsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(DsStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: dynsplit::Result<T>) -> Result<T, DsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn nonnull<T>(p: *const T, name: &str) -> Result<(), DsStatus> {
    if p.is_null() {
        Err(fail(DsStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a phase-2 checkpoint. Free the handle with [`ds_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_model_load(path: *const c_char, out: *mut *mut DsModel) -> DsStatus {
    guard(|| {
        nonnull(path, "path")?;
        nonnull(out, "out")?;
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(DsStatus::InvalidArgument, "path is not UTF-8"))?;
        let inner = lift(dynsplit::cli::load_model(Path::new(p)))?;
        *out = Box::into_raw(Box::new(DsModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ds_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ds_model_free(model: *mut DsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Window length `T`, features `D` and classes `K` of the model.
///
/// # Safety
/// `model` must be a live handle; out-pointers may be null to skip a value.
#[no_mangle]
pub unsafe extern "C" fn ds_model_dims(
    model: *const DsModel,
    timesteps: *mut usize,
    features: *mut usize,
    classes: *mut usize,
) -> DsStatus {
    guard(|| {
        nonnull(model, "model")?;
        let net = &(*model).inner.network;
        for (p, v) in [(timesteps, net.timesteps), (features, net.features), (classes, net.classes)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Latent payload size in bytes for `mode` (code dimension times 4).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_model_payload_bytes(model: *const DsModel, mode: DsMode, out: *mut usize) -> DsStatus {
    guard(|| {
        nonnull(model, "model")?;
        nonnull(out, "out")?;
        *out = lift(dynsplit::splitsim::payload_bytes(mode.into(), &(*model).inner))?;
        Ok(())
    })
}

unsafe fn window_tensor(model: &DsModel, inputs: *const f64, len: usize) -> Result<Tensor, DsStatus> {
    nonnull(inputs, "inputs")?;
    let net = &model.inner.network;
    let want = net.timesteps * net.features;
    if len != want {
        return Err(fail(DsStatus::Shape, format!("expected {want} input values (T x D), got {len}")));
    }
    let v = slice::from_raw_parts(inputs, len).to_vec();
    lift(Tensor::from_vec(&[net.timesteps, 1, net.features], v))
}

unsafe fn write_probs(model: &DsModel, probs: &Tensor, out: *mut f64, cap: usize) -> Result<(), DsStatus> {
    nonnull(out, "out_probs")?;
    let n = model.inner.network.timesteps * model.inner.network.classes;
    if cap < n {
        return Err(fail(DsStatus::BufferTooSmall, format!("need {n} values, buffer holds {cap}")));
    }
    ptr::copy_nonoverlapping(probs.values().as_ptr(), out, n);
    Ok(())
}

/// Full forward pass on one window (`T x D` values, time-major) in `mode`,
/// writing `T x K` class probabilities.
///
/// # Safety
/// `inputs` must hold `inputs_len` values and `out_probs` `out_cap` values.
#[no_mangle]
pub unsafe extern "C" fn ds_model_infer(
    model: *const DsModel,
    inputs: *const f64,
    inputs_len: usize,
    mode: DsMode,
    out_probs: *mut f64,
    out_cap: usize,
) -> DsStatus {
    guard(|| {
        nonnull(model, "model")?;
        let m = &*model;
        let x = window_tensor(m, inputs, inputs_len)?;
        let probs = lift(m.inner.network.forward(&x, mode.into()))?;
        write_probs(m, &probs, out_probs, out_cap)
    })
}

/// Device side: encodes one window and writes the wire message
/// (`5 + payload` bytes) into `out_msg`.
///
/// # Safety
/// `inputs` must hold `inputs_len` values, `out_msg` `out_cap` bytes and
/// `out_written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_model_encode(
    model: *const DsModel,
    inputs: *const f64,
    inputs_len: usize,
    mode: DsMode,
    out_msg: *mut u8,
    out_cap: usize,
    out_written: *mut usize,
) -> DsStatus {
    guard(|| {
        nonnull(model, "model")?;
        nonnull(out_msg, "out_msg")?;
        nonnull(out_written, "out_written")?;
        let m = &*model;
        let x = window_tensor(m, inputs, inputs_len)?;
        let code = lift(m.inner.network.encode(&x, mode.into()))?;
        let msg = encode_message(mode.into(), code.values());
        if out_cap < msg.len() {
            return Err(fail(
                DsStatus::BufferTooSmall,
                format!("message needs {} bytes, buffer holds {out_cap}", msg.len()),
            ));
        }
        ptr::copy_nonoverlapping(msg.as_ptr(), out_msg, msg.len());
        *out_written = msg.len();
        Ok(())
    })
}

/// Edge side: decodes a wire message and writes `T x K` probabilities.
///
/// # Safety
/// `msg` must hold `msg_len` bytes and `out_probs` `out_cap` values.
#[no_mangle]
pub unsafe extern "C" fn ds_model_decode(
    model: *const DsModel,
    msg: *const u8,
    msg_len: usize,
    out_probs: *mut f64,
    out_cap: usize,
) -> DsStatus {
    guard(|| {
        nonnull(model, "model")?;
        nonnull(msg, "msg")?;
        let m = &*model;
        let (mode, code) = lift(decode_message(slice::from_raw_parts(msg, msg_len)))?;
        let t = lift(Tensor::from_vec(&[1, code.len()], code.iter().map(|&v| f64::from(v)).collect()))?;
        let probs = lift(m.inner.network.decode(&t, mode))?;
        write_probs(m, &probs, out_probs, out_cap)
    })
}

/// Size of the message header preceding the payload.
#[no_mangle]
pub extern "C" fn ds_wire_header_bytes() -> usize {
    HEADER_BYTES
}

/// Encodes `len` code values (rounded to f32) as a wire message.
///
/// # Safety
/// `code` must hold `len` values, `out_msg` `out_cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn ds_wire_encode(
    mode: DsMode,
    code: *const f64,
    len: usize,
    out_msg: *mut u8,
    out_cap: usize,
    out_written: *mut usize,
) -> DsStatus {
    guard(|| {
        if len > 0 {
            nonnull(code, "code")?;
        }
        nonnull(out_msg, "out_msg")?;
        nonnull(out_written, "out_written")?;
        let values = if len == 0 { &[][..] } else { slice::from_raw_parts(code, len) };
        let msg = encode_message(mode.into(), values);
        if out_cap < msg.len() {
            return Err(fail(DsStatus::BufferTooSmall, format!("message needs {} bytes", msg.len())));
        }
        ptr::copy_nonoverlapping(msg.as_ptr(), out_msg, msg.len());
        *out_written = msg.len();
        Ok(())
    })
}

/// Decodes a wire message into its mode and f32 code values.
///
/// # Safety
/// `msg` must hold `msg_len` bytes, `out_code` `out_cap` floats.
#[no_mangle]
pub unsafe extern "C" fn ds_wire_decode(
    msg: *const u8,
    msg_len: usize,
    out_mode: *mut DsMode,
    out_code: *mut f32,
    out_cap: usize,
    out_len: *mut usize,
) -> DsStatus {
    guard(|| {
        nonnull(msg, "msg")?;
        nonnull(out_mode, "out_mode")?;
        nonnull(out_len, "out_len")?;
        let (mode, code) = lift(decode_message(slice::from_raw_parts(msg, msg_len)))?;
        if out_cap < code.len() {
            return Err(fail(DsStatus::BufferTooSmall, format!("code has {} values", code.len())));
        }
        if !code.is_empty() {
            nonnull(out_code, "out_code")?;
            ptr::copy_nonoverlapping(code.as_ptr(), out_code, code.len());
        }
        *out_mode = match mode {
            Mode::Informative => DsMode::Informative,
            Mode::Compressed => DsMode::Compressed,
        };
        *out_len = code.len();
        Ok(())
    })
}

/// Gaussian-copula MI in bits between `x` (`n x dx`) and `y` (`n x dy`).
///
/// # Safety
/// `x` must hold `n * dx` values and `y` `n * dy` values.
#[no_mangle]
pub unsafe extern "C" fn ds_gcmi(
    x: *const f64,
    dx: usize,
    y: *const f64,
    dy: usize,
    n: usize,
    out_bits: *mut f64,
) -> DsStatus {
    guard(|| {
        nonnull(x, "x")?;
        nonnull(y, "y")?;
        nonnull(out_bits, "out_bits")?;
        let xm = lift(SampleMatrix::new(n, dx, slice::from_raw_parts(x, n * dx).to_vec()))?;
        let ym = lift(SampleMatrix::new(n, dy, slice::from_raw_parts(y, n * dy).to_vec()))?;
        *out_bits = lift(gcmi(&xm, &ym))?.bits;
        Ok(())
    })
}

/// Plug-in MI in bits between two discrete sequences of length `n`.
///
/// # Safety
/// `x` and `y` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn ds_plugin_mi(x: *const i64, y: *const i64, n: usize, out_bits: *mut f64) -> DsStatus {
    guard(|| {
        nonnull(x, "x")?;
        nonnull(y, "y")?;
        nonnull(out_bits, "out_bits")?;
        let xs = slice::from_raw_parts(x, n);
        let ys = slice::from_raw_parts(y, n);
        *out_bits = plugin_discrete_mi(xs, ys).bits;
        Ok(())
    })
}
