//! C ABI for trained HJB feedback controllers.
//!
//! The surface is intentionally small: load a `(config, checkpoint)` pair
//! into an opaque policy handle, then evaluate actions `u = grad g*(-B^T V_x)`
//! or the value/gradient pair at raw `double` state buffers. All functions
//! are `extern "C"`, return status codes, and never unwind across the FFI
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hjb_control::controller::{HjbPolicy, Policy};
use hjb_control::diffnet::DifferentialNetwork;
use hjb_control::experiment::policy_from_files;
use hjb_control::value::ValueFunction;

/// Status codes returned by every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HjbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// I/O, parse or config failure while loading; see the error message.
    LoadFailed = 3,
    /// Buffer length does not match the policy's state/action dimension.
    DimensionMismatch = 4,
    /// Evaluation failed (non-finite input or internal fault).
    EvalFailed = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

/// Opaque handle around a loaded feedback policy.
pub struct HjbPolicyHandle {
    policy: HjbPolicy<DifferentialNetwork>,
    /// Discounting the checkpoint was trained down to.
    rho: f64,
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hjb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a policy from an experiment config (TOML) and a checkpoint file.
/// On success writes a handle to `out` and returns `Ok`; the handle must be
/// released with `hjb_policy_free`.
///
/// # Safety
/// `config_path` and `ckpt_path` must be valid NUL-terminated strings and
/// `out` a valid pointer to pointer-sized storage.
#[no_mangle]
pub unsafe extern "C" fn hjb_policy_load(
    config_path: *const c_char,
    ckpt_path: *const c_char,
    out: *mut *mut HjbPolicyHandle,
) -> HjbStatus {
    if config_path.is_null() || ckpt_path.is_null() || out.is_null() {
        set_error("null pointer argument");
        return HjbStatus::NullPointer;
    }
    let parse = |p: *const c_char| -> Result<&str, HjbStatus> {
        unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| {
            set_error("path is not valid UTF-8");
            HjbStatus::InvalidUtf8
        })
    };
    let config = match parse(config_path) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let ckpt = match parse(ckpt_path) {
        Ok(s) => s,
        Err(status) => return status,
    };
    match catch_unwind(|| policy_from_files(Path::new(config), Path::new(ckpt))) {
        Ok(Ok((policy, _, rho))) => {
            let handle = Box::new(HjbPolicyHandle { policy, rho });
            unsafe { *out = Box::into_raw(handle) };
            HjbStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(&e.to_string());
            HjbStatus::LoadFailed
        }
        Err(_) => {
            set_error("internal panic while loading policy");
            HjbStatus::LoadFailed
        }
    }
}

/// State dimension of the loaded policy, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live pointer from `hjb_policy_load`.
#[no_mangle]
pub unsafe extern "C" fn hjb_policy_state_dim(handle: *const HjbPolicyHandle) -> usize {
    if handle.is_null() {
        return 0;
    }
    unsafe { &*handle }.policy.state_dim()
}

/// Action dimension of the loaded policy, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live pointer from `hjb_policy_load`.
#[no_mangle]
pub unsafe extern "C" fn hjb_policy_action_dim(handle: *const HjbPolicyHandle) -> usize {
    if handle.is_null() {
        return 0;
    }
    unsafe { &*handle }.policy.action_dim()
}

/// Discounting the checkpoint was trained down to (NaN for a null handle).
///
/// # Safety
/// `handle` must be null or a live pointer from `hjb_policy_load`.
#[no_mangle]
pub unsafe extern "C" fn hjb_policy_trained_rho(handle: *const HjbPolicyHandle) -> f64 {
    if handle.is_null() {
        return f64::NAN;
    }
    unsafe { &*handle }.rho
}

/// Evaluates the feedback law at `x` (length `n_x`), writing the action into
/// `u_out` (length `n_u`).
///
/// # Safety
/// `handle` must come from `hjb_policy_load`; `x` and `u_out` must point to
/// buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hjb_policy_act(
    handle: *const HjbPolicyHandle,
    x: *const f64,
    n_x: usize,
    u_out: *mut f64,
    n_u: usize,
) -> HjbStatus {
    if handle.is_null() || x.is_null() || u_out.is_null() {
        set_error("null pointer argument");
        return HjbStatus::NullPointer;
    }
    let h = unsafe { &*handle };
    if n_x != h.policy.state_dim() || n_u != h.policy.action_dim() {
        set_error("state or action buffer length mismatch");
        return HjbStatus::DimensionMismatch;
    }
    let state = unsafe { std::slice::from_raw_parts(x, n_x) };
    match catch_unwind(AssertUnwindSafe(|| h.policy.act(state))) {
        Ok(Ok(u)) => {
            unsafe { std::ptr::copy_nonoverlapping(u.as_ptr(), u_out, n_u) };
            HjbStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(&e.to_string());
            HjbStatus::EvalFailed
        }
        Err(_) => {
            set_error("internal panic during evaluation");
            HjbStatus::EvalFailed
        }
    }
}

/// Evaluates the value function: writes `V(x)` to `v_out` and, when
/// `vx_out` is non-null, `dV/dx` into it (length `n_x`).
///
/// # Safety
/// `handle` must come from `hjb_policy_load`; `x` (length `n_x`), `v_out`
/// and the optional `vx_out` must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hjb_policy_value(
    handle: *const HjbPolicyHandle,
    x: *const f64,
    n_x: usize,
    v_out: *mut f64,
    vx_out: *mut f64,
) -> HjbStatus {
    if handle.is_null() || x.is_null() || v_out.is_null() {
        set_error("null pointer argument");
        return HjbStatus::NullPointer;
    }
    let h = unsafe { &*handle };
    if n_x != h.policy.state_dim() {
        set_error("state buffer length mismatch");
        return HjbStatus::DimensionMismatch;
    }
    let state = unsafe { std::slice::from_raw_parts(x, n_x) };
    match catch_unwind(AssertUnwindSafe(|| h.policy.value.value_grad(state))) {
        Ok((v, grad)) => {
            unsafe { *v_out = v };
            if !vx_out.is_null() {
                unsafe { std::ptr::copy_nonoverlapping(grad.as_ptr(), vx_out, n_x) };
            }
            HjbStatus::Ok
        }
        Err(_) => {
            set_error("internal panic during evaluation");
            HjbStatus::EvalFailed
        }
    }
}

/// Releases a handle. Passing null is a no-op.
///
/// # Safety
/// `handle` must be null or a pointer from `hjb_policy_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hjb_policy_free(handle: *mut HjbPolicyHandle) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}
