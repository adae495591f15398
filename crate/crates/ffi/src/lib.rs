//! C ABI over `umood`.
//!
//! Models and masks cross the boundary as opaque handles created by
//! `umood_*_load`/`umood_model_from_params` and released with the matching
//! `_free`. Every fallible call returns a [`UmoodStatus`]; on failure the
//! message is available from [`umood_last_error`] on the same thread until the
//! next failing call. Panics never unwind into the caller.
//!
//! The header `include/umood.h` is generated from this file by the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use umood::masking::{load_mask, LayerMask};
use umood::metrics::{aupr, auroc, fpr95, ScoredSet};
use umood::nn::{load_checkpoint, Classifier};
use umood::scoring::{score_energy, score_msp, score_odin};
use umood::Error;

/// Result of every fallible call. Non-zero values follow the CLI exit-code
/// classes where one applies.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UmoodStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    NullPointer = 1,
    /// Bad argument, usage or config.
    InvalidArgument = 2,
    /// Malformed or missing file, shape mismatch, I/O.
    Data = 3,
    /// Numeric failure.
    Numeric = 4,
    /// Internal panic; the handle arguments should be considered poisoned.
    Panic = 5,
}

/// Post-hoc score. All are oriented so that larger means in-distribution.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UmoodMethod {
    Msp = 0,
    /// Negative free energy at the given temperature.
    Energy = 1,
    /// Temperature-scaled MSP after an input perturbation of size `epsilon`.
    Odin = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UmoodMetrics {
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr: f64,
}

/// Opaque classifier handle.
pub struct UmoodModel(Classifier);

/// Opaque weight-mask handle.
pub struct UmoodMask(LayerMask);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> UmoodStatus {
    match e.exit_code() {
        2 => UmoodStatus::InvalidArgument,
        3 => UmoodStatus::Data,
        _ => UmoodStatus::Numeric,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UmoodStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UmoodStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null or invalid"));
            UmoodStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            UmoodStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| Fail::Null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_out<'a>(p: *mut f64, n: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn mask_arg<'a>(mask: *const UmoodMask, model: &Classifier) -> Result<Option<&'a LayerMask>, Fail> {
    if mask.is_null() {
        return Ok(None);
    }
    let m = &(*mask).0;
    if m.shapes().len() != model.layer_count()
        || m.layers().iter().enumerate().any(|(l, b)| b.len() != model.weight_count(l))
    {
        return Err(Error::Argument("mask shape does not match the model".into()).into());
    }
    Ok(Some(m))
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn umood_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn umood_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint written by the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn umood_model_load(path: *const c_char, out: *mut *mut UmoodModel) -> UmoodStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let model = load_checkpoint(&path_arg(path, "path")?)?.model()?;
        *out = Box::into_raw(Box::new(UmoodModel(model)));
        Ok(())
    })
}

/// Build a model from layer widths (`n_dims` ≥ 2, input first) and a flat
/// parameter vector in checkpoint order.
///
/// # Safety
/// `dims` and `params` must point to `n_dims` and `n_params` readable values;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn umood_model_from_params(
    dims: *const usize,
    n_dims: usize,
    params: *const f64,
    n_params: usize,
    out: *mut *mut UmoodModel,
) -> UmoodStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let dims = slice_arg(dims, n_dims, "dims")?.to_vec();
        let params = slice_arg(params, n_params, "params")?.to_vec();
        *out = Box::into_raw(Box::new(UmoodModel(Classifier::from_params(dims, params)?)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn umood_model_free(model: *mut UmoodModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn umood_model_input_dim(model: *const UmoodModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn umood_model_class_count(model: *const UmoodModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.class_count())
}

/// Number of parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn umood_model_param_count(model: *const UmoodModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.params().len())
}

/// Load a mask written by the CLI (`umap.mask`, `constraint.mask`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn umood_mask_load(path: *const c_char, out: *mut *mut UmoodMask) -> UmoodStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let mask = load_mask(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(UmoodMask(mask)));
        Ok(())
    })
}

/// # Safety
/// `mask` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn umood_mask_free(mask: *mut UmoodMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Logits for `rows` row-major inputs of width `cols` into `out`
/// (`rows × class_count`). `mask` may be null.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn umood_forward(
    model: *const UmoodModel,
    mask: *const UmoodMask,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> UmoodStatus {
    guard(|| {
        let model = &model.as_ref().ok_or(Fail::Null("model"))?.0;
        let mask = mask_arg(mask, model)?;
        check_shape(model, rows, cols)?;
        let c = model.class_count();
        if out_len != rows * c {
            return Err(Error::Argument(format!("out_len {out_len} != rows × classes = {}", rows * c)).into());
        }
        let x = slice_arg(x, rows * cols, "x")?;
        let out = slice_out(out, out_len, "out")?;
        for r in 0..rows {
            let z = model.forward(&x[r * cols..(r + 1) * cols], mask)?;
            out[r * c..(r + 1) * c].copy_from_slice(&z);
        }
        Ok(())
    })
}

fn check_shape(model: &Classifier, rows: usize, cols: usize) -> Result<(), Fail> {
    if cols != model.input_dim() {
        return Err(Error::Argument(format!("cols {cols} != model input width {}", model.input_dim())).into());
    }
    rows.checked_mul(cols)
        .ok_or_else(|| Error::Argument("rows × cols overflows".into()))?;
    Ok(())
}

/// One score per input row into `out` (`rows` values). `temperature` applies
/// to energy and ODIN, `epsilon` to ODIN only. `mask` may be null.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn umood_score(
    model: *const UmoodModel,
    mask: *const UmoodMask,
    method: UmoodMethod,
    temperature: f64,
    epsilon: f64,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> UmoodStatus {
    guard(|| {
        let model = &model.as_ref().ok_or(Fail::Null("model"))?.0;
        let mask = mask_arg(mask, model)?;
        check_shape(model, rows, cols)?;
        let x = slice_arg(x, rows * cols, "x")?;
        let out = slice_out(out, rows, "out")?;
        for r in 0..rows {
            let xi = &x[r * cols..(r + 1) * cols];
            out[r] = match method {
                UmoodMethod::Msp => score_msp(model, xi, mask)?,
                UmoodMethod::Energy => score_energy(model, xi, temperature, mask)?,
                UmoodMethod::Odin => score_odin(model, xi, temperature, epsilon, mask)?,
            };
        }
        Ok(())
    })
}

/// FPR at 95% TPR, AUROC and AUPR (ID positive) for oriented scores.
///
/// # Safety
/// `id`/`ood` must reference `n_id`/`n_ood` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn umood_metrics(
    id: *const f64,
    n_id: usize,
    ood: *const f64,
    n_ood: usize,
    out: *mut UmoodMetrics,
) -> UmoodStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let set = ScoredSet::new(slice_arg(id, n_id, "id")?.to_vec(), slice_arg(ood, n_ood, "ood")?.to_vec())?;
        *out = UmoodMetrics {
            fpr95: fpr95(&set)?,
            auroc: auroc(&set)?,
            aupr: aupr(&set)?,
        };
        Ok(())
    })
}
