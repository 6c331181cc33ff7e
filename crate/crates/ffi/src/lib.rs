//! C ABI over the csode library.
//!
//! Every function returns a [`CsodeStatus`]; on failure the message is
//! available from [`csode_last_error`] on the same thread. Models are opaque
//! [`CsodeModel`] handles released with [`csode_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use csode::certify::{
    assemble_lmis, search_certificate, sector_bounds_for, verify_certificate, ActivationClassification,
};
use csode::dynamics::{ArchSpec, VectorField};
use csode::simulators::{build_dataset, Protocol, System};
use csode::solvers::SolverConfig;
use csode::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsodeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    ShapeMismatch = 5,
    Numerical = 6,
    Panic = 7,
}

/// Integration method for [`csode_model_rollout`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsodeMethod {
    Euler = 0,
    Rk4 = 1,
    Dopri5 = 2,
}

/// Opaque model handle.
pub struct CsodeModel {
    field: VectorField,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> CsodeStatus {
    match e {
        Error::Io { .. } => CsodeStatus::Io,
        Error::Json(_) | Error::UnknownActivation(_) => CsodeStatus::Parse,
        Error::ShapeMismatch { .. } | Error::DimMismatch(_) | Error::LayoutMismatch(_) | Error::NotSquare { .. } => {
            CsodeStatus::ShapeMismatch
        }
        Error::NonFiniteState { .. }
        | Error::StepLimitExceeded { .. }
        | Error::NonFiniteLoss { .. }
        | Error::CflViolation(_)
        | Error::DryState { .. }
        | Error::ZeroVariance
        | Error::NotSymmetric { .. } => CsodeStatus::Numerical,
        _ => CsodeStatus::InvalidArgument,
    }
}

/// Runs `body`, translating errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), (CsodeStatus, String)>) -> CsodeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            CsodeStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CsodeStatus::Panic
        }
    }
}

fn lib(e: Error) -> (CsodeStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CsodeStatus, String) {
    (CsodeStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (CsodeStatus, String) {
    (CsodeStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CsodeStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn model_ref<'a>(m: *const CsodeModel) -> Result<&'a CsodeModel, (CsodeStatus, String)> {
    m.as_ref().ok_or_else(|| null("model"))
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn csode_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn csode_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a freshly initialised model from an architecture JSON string.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn csode_model_new(spec_json: *const c_char, out: *mut *mut CsodeModel) -> CsodeStatus {
    guard(|| {
        let text = str_arg(spec_json, "spec_json")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let spec: ArchSpec = serde_json::from_str(text).map_err(|e| lib(e.into()))?;
        let field = VectorField::new(spec).map_err(lib)?;
        *out = Box::into_raw(Box::new(CsodeModel { field }));
        Ok(())
    })
}

/// Loads a model file written by `csode train` or [`csode_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn csode_model_load(path: *const c_char, out: *mut *mut CsodeModel) -> CsodeStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let field = VectorField::load_model(Path::new(path)).map_err(lib)?;
        *out = Box::into_raw(Box::new(CsodeModel { field }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn csode_model_save(model: *const CsodeModel, path: *const c_char) -> CsodeStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = str_arg(path, "path")?;
        m.field.save_model(Path::new(path)).map_err(lib)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn csode_model_free(model: *mut CsodeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Observed dimension, full state dimension and trainable parameter count.
/// Any output pointer may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn csode_model_dims(
    model: *const CsodeModel,
    n: *mut usize,
    state_dim: *mut usize,
    param_count: *mut usize,
) -> CsodeStatus {
    guard(|| {
        let m = model_ref(model)?;
        if let Some(p) = n.as_mut() {
            *p = m.field.n();
        }
        if let Some(p) = state_dim.as_mut() {
            *p = m.field.state_dim();
        }
        if let Some(p) = param_count.as_mut() {
            *p = m.field.param_count();
        }
        Ok(())
    })
}

/// Integrates from `x0` (length n) and writes the observed state at each of
/// the `n_times` increasing times into `out` (row-major, `n_times * n`).
/// `step` is the fixed step for Euler/RK4; Dopri5 uses rtol = atol = `step`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn csode_model_rollout(
    model: *const CsodeModel,
    x0: *const f64,
    n: usize,
    times: *const f64,
    n_times: usize,
    method: CsodeMethod,
    step: f64,
    out: *mut f64,
    out_len: usize,
) -> CsodeStatus {
    guard(|| {
        let m = model_ref(model)?;
        if x0.is_null() || times.is_null() || out.is_null() {
            return Err(null("x0, times or out"));
        }
        if n != m.field.n() {
            return Err((
                CsodeStatus::ShapeMismatch,
                format!("x0 has {n} entries, model expects {}", m.field.n()),
            ));
        }
        if out_len < n * n_times {
            return Err((CsodeStatus::ShapeMismatch, format!("out holds {out_len}, need {}", n * n_times)));
        }
        if !(step > 0.0) {
            return Err(invalid("step must be positive"));
        }
        let cfg = match method {
            CsodeMethod::Euler => SolverConfig::euler(step),
            CsodeMethod::Rk4 => SolverConfig::rk4(step),
            CsodeMethod::Dopri5 => SolverConfig::dopri5(step, step),
        };
        let x0 = std::slice::from_raw_parts(x0, n);
        let times = std::slice::from_raw_parts(times, n_times);
        let states = m.field.rollout(x0, times, &cfg).map_err(lib)?;
        let out = std::slice::from_raw_parts_mut(out, out_len);
        for (chunk, s) in out.chunks_mut(n).zip(&states) {
            chunk.copy_from_slice(s);
        }
        Ok(())
    })
}

/// Searches for and verifies a stability certificate (csode models with
/// state dimension at most 2). `certified` receives 1 or 0.
///
/// # Safety
/// `model` must be a live handle and `certified` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn csode_model_certify(model: *const CsodeModel, tol: f64, certified: *mut i32) -> CsodeStatus {
    guard(|| {
        let m = model_ref(model)?;
        let certified = certified.as_mut().ok_or_else(|| null("certified"))?;
        let mats = m
            .field
            .csode_matrices()
            .ok_or_else(|| invalid(format!("{} model has no csode structure", m.field.variant())))?;
        let dims: Vec<usize> = mats.subnets.iter().map(|(_, w, _)| w.rows()).collect();
        let bounds = sector_bounds_for(m.field.spec().activation, &dims)
            .ok_or_else(|| invalid("no sector bounds for this activation"))?;
        let cls = ActivationClassification::of_model(&mats);
        *certified = match search_certificate(&mats, &bounds, &cls, tol).map_err(lib)? {
            Some(c) => {
                let lmis = assemble_lmis(&mats, &c, &bounds, &cls).map_err(lib)?;
                verify_certificate(&lmis, tol).map_err(lib)?.verdict.certified() as i32
            }
            None => 0,
        };
        Ok(())
    })
}

/// Generates a dataset directory (desk-scale protocol). `n_sims` of 0
/// keeps the protocol default.
///
/// # Safety
/// `system` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn csode_simulate(
    system: *const c_char,
    n_sims: usize,
    seed: u64,
    out_dir: *const c_char,
) -> CsodeStatus {
    guard(|| {
        let system: System = str_arg(system, "system")?.parse().map_err(lib)?;
        let out_dir = str_arg(out_dir, "out_dir")?;
        let mut protocol = Protocol::new(system, false);
        if n_sims > 0 {
            protocol = protocol.with_sims(n_sims);
        }
        let ds = build_dataset(&protocol, seed).map_err(lib)?;
        ds.save(Path::new(out_dir)).map_err(lib)
    })
}

/// `k / (width * sqrt(subnets))`, or NaN for zero width or subnets.
#[no_mangle]
pub extern "C" fn csode_scaling_lr(k: f64, width: usize, subnets: usize) -> f64 {
    if width == 0 || subnets == 0 {
        return f64::NAN;
    }
    csode::training::scaling_lr(k, width, subnets)
}
