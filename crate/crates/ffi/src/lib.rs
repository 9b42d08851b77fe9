//! C ABI over `meta-lqr`.
//!
//! Objects are opaque handles created by `*_new`/`*_from_*` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`MlqrStatus`]; on failure [`mlqr_last_error`] gives a message for the
//! calling thread. Matrices cross the boundary as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use meta_lqr::maml::{self, GuardPolicy, MamlConfig, MamlMode};
use meta_lqr::taskgen::{self, GenSpec};
use meta_lqr::theory::{self, TheoryOptions};
use meta_lqr::zo::ZoConfig;
use meta_lqr::{lqr, Error, Gain, LqrTask};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlqrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Dimension = 3,
    Unstable = 4,
    Guard = 5,
    Numerical = 6,
    Config = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// An ordered set of LQR tasks sharing `(n_x, n_u)`.
pub struct MlqrTaskSet {
    tasks: Vec<LqrTask>,
}

/// A feedback gain `K` of shape `n_u × n_x`.
pub struct MlqrGain {
    gain: Gain,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MlqrStatus {
    match e {
        Error::Dimension(_) => MlqrStatus::Dimension,
        Error::InvalidInput(_) | Error::Json(_) => MlqrStatus::InvalidInput,
        Error::Stability { .. } | Error::Estimation { .. } => MlqrStatus::Unstable,
        Error::Guard { .. } => MlqrStatus::Guard,
        Error::Computation(_) | Error::Generation(_) => MlqrStatus::Numerical,
        Error::Config(_) | Error::Io(_) => MlqrStatus::Config,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
    Buffer(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> MlqrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlqrStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("null pointer passed for `{name}`"));
            MlqrStatus::NullPointer
        }
        Ok(Err(Failure::Buffer(need))) => {
            set_error(format!("output buffer too small; {need} values needed"));
            MlqrStatus::BufferTooSmall
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            MlqrStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: the caller guarantees `p` is null or a live handle from this library.
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller guarantees `p` is null or valid for writes.
    unsafe { p.as_mut() }.ok_or(Failure::Null(name))
}

fn task_at(set: &MlqrTaskSet, index: usize) -> Result<&LqrTask, Failure> {
    set.tasks.get(index).ok_or_else(|| {
        Failure::Lib(Error::InvalidInput(format!("task index {index} out of range for {} tasks", set.tasks.len())))
    })
}

fn write_matrix(m: &meta_lqr::linalg::Mat, out: *mut f64, len: usize) -> Result<(), Failure> {
    let need = m.len();
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    if len < need {
        return Err(Failure::Buffer(need));
    }
    let values = meta_lqr::linalg::vec_row_major(m);
    // SAFETY: `out` is non-null and the caller guarantees room for `len >= need` values.
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, need) };
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mlqr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a JSON array of tasks, a `{"tasks": [...]}` object or a generated bundle.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_task_set_from_json(json: *const c_char, out: *mut *mut MlqrTaskSet) -> MlqrStatus {
    guard(|| {
        if json.is_null() {
            return Err(Failure::Null("json"));
        }
        // SAFETY: checked non-null; nul termination is the caller's contract.
        let text = unsafe { CStr::from_ptr(json) }
            .to_str()
            .map_err(|e| Error::InvalidInput(format!("json is not UTF-8: {e}")))?;
        let out = unsafe { out_ptr(out, "out") }?;
        let value: serde_json::Value = serde_json::from_str(text).map_err(Error::from)?;
        let list = match value {
            serde_json::Value::Object(mut o) => o.remove("tasks").ok_or_else(|| Error::InvalidInput("object has no `tasks`".into()))?,
            other => other,
        };
        let tasks: Vec<LqrTask> = serde_json::from_value(list).map_err(Error::from)?;
        if tasks.is_empty() {
            return Err(Error::InvalidInput("empty task set".into()).into());
        }
        if tasks.iter().any(|t| !t.same_shape(&tasks[0])) {
            return Err(Error::Dimension("tasks in a set must share (n_x, n_u)".into()).into());
        }
        *out = Box::into_raw(Box::new(MlqrTaskSet { tasks }));
        Ok(())
    })
}

/// Generates `m` tasks around the Boeing nominal at heterogeneity
/// `levels[0..4]` with the default masks for `seed`.
///
/// # Safety
/// `levels` must point to four doubles and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_task_set_boeing(m: usize, levels: *const f64, seed: u64, out: *mut *mut MlqrTaskSet) -> MlqrStatus {
    guard(|| {
        if levels.is_null() {
            return Err(Failure::Null("levels"));
        }
        // SAFETY: non-null and the caller provides four values.
        let l = unsafe { std::slice::from_raw_parts(levels, 4) };
        let out = unsafe { out_ptr(out, "out") }?;
        let tasks = taskgen::generate(&GenSpec::boeing([l[0], l[1], l[2], l[3]], m, seed))?;
        *out = Box::into_raw(Box::new(MlqrTaskSet { tasks }));
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle or null; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_task_set_len(set: *const MlqrTaskSet, out: *mut usize) -> MlqrStatus {
    guard(|| {
        let set = unsafe { deref(set, "set") }?;
        *unsafe { out_ptr(out, "out") }? = set.tasks.len();
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mlqr_task_set_free(set: *mut MlqrTaskSet) {
    if !set.is_null() {
        // SAFETY: created by Box::into_raw in this library and not freed before.
        drop(unsafe { Box::from_raw(set) });
    }
}

/// Builds a gain from `nu * nx` row-major values.
///
/// # Safety
/// `data` must point to `nu * nx` doubles and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_gain_new(nu: usize, nx: usize, data: *const f64, out: *mut *mut MlqrGain) -> MlqrStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        if nu == 0 || nx == 0 {
            return Err(Error::Dimension("gain dimensions must be positive".into()).into());
        }
        // SAFETY: non-null and the caller provides nu * nx values.
        let values = unsafe { std::slice::from_raw_parts(data, nu * nx) };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("gain has non-finite entries".into()).into());
        }
        let out = unsafe { out_ptr(out, "out") }?;
        *out = Box::into_raw(Box::new(MlqrGain { gain: Gain::from_row_slice(nu, nx, values) }));
        Ok(())
    })
}

/// Stabilizing initial gain for the Boeing nominal.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_gain_boeing_k0(out: *mut *mut MlqrGain) -> MlqrStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = Box::into_raw(Box::new(MlqrGain { gain: taskgen::boeing_nominal().1 }));
        Ok(())
    })
}

/// # Safety
/// `gain` must be a live handle; `nu`, `nx` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_gain_dims(gain: *const MlqrGain, nu: *mut usize, nx: *mut usize) -> MlqrStatus {
    guard(|| {
        let g = unsafe { deref(gain, "gain") }?;
        let (r, c) = g.gain.shape();
        *unsafe { out_ptr(nu, "nu") }? = r;
        *unsafe { out_ptr(nx, "nx") }? = c;
        Ok(())
    })
}

/// Copies the gain into `out` (row-major, `len >= nu * nx`).
///
/// # Safety
/// `gain` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_gain_values(gain: *const MlqrGain, out: *mut f64, len: usize) -> MlqrStatus {
    guard(|| {
        let g = unsafe { deref(gain, "gain") }?;
        write_matrix(g.gain.matrix(), out, len)
    })
}

/// # Safety
/// `gain` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mlqr_gain_free(gain: *mut MlqrGain) {
    if !gain.is_null() {
        // SAFETY: created by Box::into_raw in this library and not freed before.
        drop(unsafe { Box::from_raw(gain) });
    }
}

/// Infinite-horizon cost of `gain` on task `index`.
///
/// # Safety
/// Handles must be live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_cost(set: *const MlqrTaskSet, index: usize, gain: *const MlqrGain, out: *mut f64) -> MlqrStatus {
    guard(|| {
        let set = unsafe { deref(set, "set") }?;
        let g = unsafe { deref(gain, "gain") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let task = task_at(set, index)?;
        task.check_gain(&g.gain)?;
        *out = lqr::cost(task, &g.gain)?;
        Ok(())
    })
}

/// Exact policy gradient of task `index` at `gain`, written row-major.
///
/// # Safety
/// Handles must be live; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_gradient(set: *const MlqrTaskSet, index: usize, gain: *const MlqrGain, out: *mut f64, len: usize) -> MlqrStatus {
    guard(|| {
        let set = unsafe { deref(set, "set") }?;
        let g = unsafe { deref(gain, "gain") }?;
        let task = task_at(set, index)?;
        task.check_gain(&g.gain)?;
        write_matrix(&lqr::gradient_exact(task, &g.gain)?, out, len)
    })
}

/// Optimal gain of task `index`.
///
/// # Safety
/// `set` must be live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_optimal_gain(set: *const MlqrTaskSet, index: usize, out: *mut *mut MlqrGain) -> MlqrStatus {
    guard(|| {
        let set = unsafe { deref(set, "set") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let gain = lqr::optimal_gain(task_at(set, index)?)?;
        *out = Box::into_raw(Box::new(MlqrGain { gain }));
        Ok(())
    })
}

/// Step sizes and iteration count shared by the meta-learning entry points.
/// `max_halvings = 0` halts on the first destabilizing step.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct MlqrMamlParams {
    pub eta_l: f64,
    pub eta: f64,
    pub iterations: usize,
    pub max_halvings: u32,
}

/// Smoothing radius, sample count and seed of the two-point estimator.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct MlqrZoParams {
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
}

fn maml_config(p: &MlqrMamlParams, mode: MamlMode) -> MamlConfig {
    MamlConfig {
        eta_l: p.eta_l,
        eta: p.eta,
        iterations: p.iterations,
        guard: if p.max_halvings == 0 { GuardPolicy::Halt } else { GuardPolicy::Backtrack(p.max_halvings) },
        mode,
    }
}

fn zo_config(z: &MlqrZoParams) -> ZoConfig {
    ZoConfig { r: z.radius, m: z.samples, rng_seed: z.seed, ..ZoConfig::default() }
}

/// Model-based meta-learning from `g0`; the learned gain goes to `out`.
///
/// # Safety
/// Handles and `params` must be live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_run_model_based(
    set: *const MlqrTaskSet,
    g0: *const MlqrGain,
    params: *const MlqrMamlParams,
    out: *mut *mut MlqrGain,
) -> MlqrStatus {
    guard(|| {
        let set = unsafe { deref(set, "set") }?;
        let g0 = unsafe { deref(g0, "g0") }?;
        let params = unsafe { deref(params, "params") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let cfg = maml_config(params, MamlMode::ModelBased);
        cfg.validate()?;
        let (gain, _) = maml::run_model_based(&set.tasks, &g0.gain, &cfg)?;
        *out = Box::into_raw(Box::new(MlqrGain { gain }));
        Ok(())
    })
}

/// Model-free meta-learning from `g0`; the learned gain goes to `out`.
///
/// # Safety
/// Handles and parameter pointers must be live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_run_model_free(
    set: *const MlqrTaskSet,
    g0: *const MlqrGain,
    params: *const MlqrMamlParams,
    zo: *const MlqrZoParams,
    out: *mut *mut MlqrGain,
) -> MlqrStatus {
    guard(|| {
        let set = unsafe { deref(set, "set") }?;
        let g0 = unsafe { deref(g0, "g0") }?;
        let params = unsafe { deref(params, "params") }?;
        let zo = unsafe { deref(zo, "zo") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let cfg = maml_config(params, MamlMode::ModelFree(zo_config(zo)));
        cfg.validate()?;
        let (gain, _) = maml::run_model_free(&set.tasks, &g0.gain, &cfg)?;
        *out = Box::into_raw(Box::new(MlqrGain { gain }));
        Ok(())
    })
}

/// Theorem-condition report at `g0` as a JSON string. `zo` may be null.
/// Free the string with [`mlqr_string_free`].
///
/// # Safety
/// Handles and `params` must be live; `zo` live or null; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mlqr_check_theory(
    set: *const MlqrTaskSet,
    g0: *const MlqrGain,
    params: *const MlqrMamlParams,
    zo: *const MlqrZoParams,
    out: *mut *mut c_char,
) -> MlqrStatus {
    guard(|| {
        let set = unsafe { deref(set, "set") }?;
        let g0 = unsafe { deref(g0, "g0") }?;
        let params = unsafe { deref(params, "params") }?;
        // SAFETY: null is allowed; otherwise a live pointer from the caller.
        let zo = unsafe { zo.as_ref() }.map(zo_config);
        let out = unsafe { out_ptr(out, "out") }?;
        let mode = zo.clone().map_or(MamlMode::ModelBased, MamlMode::ModelFree);
        let report = theory::theorem_conditions(
            &set.tasks,
            &g0.gain,
            &maml_config(params, mode),
            zo.as_ref(),
            &[],
            &TheoryOptions::default(),
        )?;
        let json = serde_json::to_string(&report).map_err(Error::from)?;
        *out = CString::new(json).expect("JSON has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mlqr_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: produced by CString::into_raw in this library.
        drop(unsafe { CString::from_raw(s) });
    }
}
