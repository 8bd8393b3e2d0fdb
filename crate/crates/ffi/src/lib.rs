//! C ABI for the `tlsbath` simulator.
//!
//! Objects are opaque handles created and destroyed through this API. Every
//! fallible call returns a [`TlsbStatus`]; on failure the message is available
//! from [`tlsb_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tlsbath::device::FieldSource;
use tlsbath::dynamics::Engine;
use tlsbath::ensemble::{run_trial, Field, RunConfig, TrialOutput};
use tlsbath::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlsbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Parse = 5,
    Simulation = 6,
    Unresolved = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlsbEngine {
    Fast = 0,
    Full = 1,
}

/// Parameters of one trial. Obtain defaults from [`tlsb_trial_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TlsbTrialParams {
    pub seed: u64,
    /// Defects sampled before ranking.
    pub n_total: u64,
    /// Defects kept in the model.
    pub retain_k: u32,
    pub dipole_debye: f64,
    pub t1_min_us: f64,
    pub horizon_us: f64,
    pub output_points: u32,
    /// A [`TlsbEngine`] value.
    pub engine: u32,
    /// Nonzero to also simulate the superposition and fit T2.
    pub compute_t2: u32,
}

/// Field the defects are sampled in.
pub struct TlsbField {
    field: Field,
}

/// Result of one simulated trial.
pub struct TlsbTrial {
    output: TrialOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TlsbStatus {
    match e {
        Error::Parameter(_)
        | Error::Dimension { .. }
        | Error::Size { .. }
        | Error::OutOfBounds { .. }
        | Error::UnsupportedState(_) => TlsbStatus::InvalidArgument,
        Error::Config(_) | Error::MissingInput(_) => TlsbStatus::Config,
        Error::Io(_) => TlsbStatus::Io,
        Error::Parse { .. } | Error::Json(_) => TlsbStatus::Parse,
        Error::UnresolvedDecay { .. } => TlsbStatus::Unresolved,
        _ => TlsbStatus::Simulation,
    }
}

fn fail(status: TlsbStatus, msg: &str) -> TlsbStatus {
    set_error(msg);
    status
}

fn lib_err(e: Error) -> TlsbStatus {
    fail(status_of(&e), &e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), TlsbStatus>) -> TlsbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TlsbStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(TlsbStatus::Panic, "internal panic"),
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), TlsbStatus> {
    if p.is_null() {
        Err(fail(TlsbStatus::NullPointer, &format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tlsb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tlsb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fills `out` with the default trial parameters.
///
/// # Safety
/// `out` must be null or point to writable memory for one `TlsbTrialParams`.
#[no_mangle]
pub unsafe extern "C" fn tlsb_trial_params_default(out: *mut TlsbTrialParams) -> TlsbStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = RunConfig::default();
        // SAFETY: checked non-null; caller guarantees it is writable.
        unsafe {
            out.write(TlsbTrialParams {
                seed: 0,
                n_total: cfg.ensemble.n_total as u64,
                retain_k: cfg.ensemble.retain_k as u32,
                dipole_debye: cfg.ensemble.dipole_debye,
                t1_min_us: cfg.ensemble.t1_min_us,
                horizon_us: cfg.integrator.horizon,
                output_points: cfg.integrator.output_points as u32,
                engine: TlsbEngine::Fast as u32,
                compute_t2: 1,
            })
        };
        Ok(())
    })
}

/// Creates the default analytic surface field.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn tlsb_field_synthetic(out: *mut *mut TlsbField) -> TlsbStatus {
    guard(|| {
        non_null(out, "out")?;
        let field = RunConfig::default().field().map_err(lib_err)?;
        // SAFETY: checked non-null.
        unsafe { out.write(Box::into_raw(Box::new(TlsbField { field }))) };
        Ok(())
    })
}

/// Loads a field-map file. Maps not yet scaled to a single photon need the
/// simulation energy `sim_energy_j` (J); pass a value ≤ 0 otherwise.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tlsb_field_load(
    path: *const c_char,
    sim_energy_j: f64,
    out: *mut *mut TlsbField,
) -> TlsbStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        // SAFETY: caller guarantees a valid C string.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| fail(TlsbStatus::InvalidArgument, "path is not UTF-8"))?;
        let mut cfg = RunConfig::default();
        cfg.field.path = Some(PathBuf::from(path));
        cfg.field.sim_energy_j = (sim_energy_j > 0.0).then_some(sim_energy_j);
        let field = cfg.field().map_err(lib_err)?;
        // SAFETY: checked non-null.
        unsafe { out.write(Box::into_raw(Box::new(TlsbField { field }))) };
        Ok(())
    })
}

/// Field magnitude (V/m) at a surface point (μm).
///
/// # Safety
/// `field` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tlsb_field_magnitude(
    field: *const TlsbField,
    x_um: f64,
    y_um: f64,
    out: *mut f64,
) -> TlsbStatus {
    guard(|| {
        non_null(field, "field")?;
        non_null(out, "out")?;
        // SAFETY: handle created by this library and not yet freed.
        let field = unsafe { &*field };
        let pos = tlsbath::device::Position {
            x: x_um,
            y: y_um,
            depth: 0.0,
        };
        let v = field.field.field_at(&pos).map_err(lib_err)?;
        // SAFETY: checked non-null.
        unsafe { out.write(tlsbath::device::magnitude(&v)) };
        Ok(())
    })
}

/// Releases a field. Null is ignored.
///
/// # Safety
/// `field` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tlsb_field_free(field: *mut TlsbField) {
    if !field.is_null() {
        // SAFETY: ownership returns to Rust exactly once.
        drop(unsafe { Box::from_raw(field) });
    }
}

fn run_config(p: &TlsbTrialParams) -> Result<RunConfig, TlsbStatus> {
    let mut cfg = RunConfig::default();
    cfg.seed = p.seed;
    cfg.ensemble.n_total = p.n_total as usize;
    cfg.ensemble.retain_k = p.retain_k as usize;
    cfg.ensemble.dipole_debye = p.dipole_debye;
    cfg.ensemble.t1_min_us = p.t1_min_us;
    cfg.integrator.horizon = p.horizon_us;
    cfg.integrator.output_points = p.output_points as usize;
    cfg.engine = match p.engine {
        0 => Engine::Fast,
        1 => Engine::Full,
        other => return Err(fail(TlsbStatus::InvalidArgument, &format!("unknown engine {other}"))),
    };
    cfg.compute_t2 = p.compute_t2 != 0;
    cfg.convergence.k_list = vec![cfg.ensemble.retain_k.max(1)];
    cfg.validate()
        .map_err(|e| fail(TlsbStatus::InvalidArgument, &e.to_string()))?;
    Ok(cfg)
}

/// Samples, simulates and fits one trial.
///
/// # Safety
/// `field` and `params` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tlsb_trial_run(
    field: *const TlsbField,
    params: *const TlsbTrialParams,
    out: *mut *mut TlsbTrial,
) -> TlsbStatus {
    guard(|| {
        non_null(field, "field")?;
        non_null(params, "params")?;
        non_null(out, "out")?;
        // SAFETY: valid pointers per the contract above.
        let (field, params) = unsafe { (&*field, &*params) };
        let cfg = run_config(params)?;
        let output = run_trial(&cfg, &field.field, 0);
        if let Some(e) = &output.record.error {
            return Err(fail(TlsbStatus::Simulation, e));
        }
        // SAFETY: checked non-null.
        unsafe { out.write(Box::into_raw(Box::new(TlsbTrial { output }))) };
        Ok(())
    })
}

fn trial<'a>(t: *const TlsbTrial) -> Result<&'a TlsbTrial, TlsbStatus> {
    non_null(t, "trial")?;
    // SAFETY: handle created by this library and not yet freed.
    Ok(unsafe { &*t })
}

/// Fitted T1 (μs). `censored` (nullable) is set to 1 when the decay was not
/// resolved and `t1_us` is only a lower bound.
///
/// # Safety
/// `trial` must be valid; `t1_us` writable; `censored` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tlsb_trial_t1(
    trial_ptr: *const TlsbTrial,
    t1_us: *mut f64,
    censored: *mut u32,
) -> TlsbStatus {
    guard(|| {
        let t = trial(trial_ptr)?;
        non_null(t1_us, "t1_us")?;
        let r = &t.output.record;
        let v = r
            .t1_q
            .ok_or_else(|| fail(TlsbStatus::Simulation, "trial has no T1"))?;
        // SAFETY: checked non-null.
        unsafe {
            t1_us.write(v);
            if !censored.is_null() {
                censored.write(r.censored as u32);
            }
        }
        Ok(())
    })
}

/// Fitted T2 (μs); `TLSB_STATUS_UNRESOLVED` if it was not computed or resolved.
///
/// # Safety
/// `trial` must be valid; `t2_us` writable.
#[no_mangle]
pub unsafe extern "C" fn tlsb_trial_t2(trial_ptr: *const TlsbTrial, t2_us: *mut f64) -> TlsbStatus {
    guard(|| {
        let t = trial(trial_ptr)?;
        non_null(t2_us, "t2_us")?;
        let v = t
            .output
            .record
            .t2_q
            .ok_or_else(|| fail(TlsbStatus::Unresolved, "T2 not available for this trial"))?;
        // SAFETY: checked non-null.
        unsafe { t2_us.write(v) };
        Ok(())
    })
}

/// Number of output points of the relaxation trajectory.
///
/// # Safety
/// `trial` must be valid; `len` writable.
#[no_mangle]
pub unsafe extern "C" fn tlsb_trial_len(trial_ptr: *const TlsbTrial, len: *mut usize) -> TlsbStatus {
    guard(|| {
        let t = trial(trial_ptr)?;
        non_null(len, "len")?;
        let n = t.output.relaxation.as_ref().map_or(0, |r| r.len());
        // SAFETY: checked non-null.
        unsafe { len.write(n) };
        Ok(())
    })
}

/// Copies the relaxation trajectory into caller buffers of length `cap`.
/// Any of the output arrays may be null to skip it.
///
/// # Safety
/// Each non-null array must have room for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn tlsb_trial_trajectory(
    trial_ptr: *const TlsbTrial,
    t_us: *mut f64,
    p_qubit: *mut f64,
    p_tls_total: *mut f64,
    cap: usize,
) -> TlsbStatus {
    guard(|| {
        let t = trial(trial_ptr)?;
        let traj = t
            .output
            .relaxation
            .as_ref()
            .ok_or_else(|| fail(TlsbStatus::Simulation, "trial has no trajectory"))?;
        if cap < traj.len() {
            return Err(fail(
                TlsbStatus::BufferTooSmall,
                &format!("need {} points, buffer holds {cap}", traj.len()),
            ));
        }
        for (dst, src) in [(t_us, &traj.t), (p_qubit, &traj.p_qubit), (p_tls_total, &traj.p_tls_total)] {
            if !dst.is_null() {
                // SAFETY: caller guarantees `cap` ≥ len writable doubles.
                unsafe { ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len()) };
            }
        }
        Ok(())
    })
}

/// Distance (μm) to the junction and signed coupling Ω (Hz) of the strongest
/// defect.
///
/// # Safety
/// `trial` must be valid; outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn tlsb_trial_strongest(
    trial_ptr: *const TlsbTrial,
    distance_to_jj_um: *mut f64,
    omega_hz: *mut f64,
) -> TlsbStatus {
    guard(|| {
        let t = trial(trial_ptr)?;
        let s = t
            .output
            .record
            .strongest
            .ok_or_else(|| fail(TlsbStatus::Simulation, "trial has no retained defects"))?;
        // SAFETY: each written only when non-null.
        unsafe {
            if !distance_to_jj_um.is_null() {
                distance_to_jj_um.write(s.distance_to_jj_um);
            }
            if !omega_hz.is_null() {
                omega_hz.write(s.omega_hz);
            }
        }
        Ok(())
    })
}

/// Releases a trial. Null is ignored.
///
/// # Safety
/// `trial` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tlsb_trial_free(trial: *mut TlsbTrial) {
    if !trial.is_null() {
        // SAFETY: ownership returns to Rust exactly once.
        drop(unsafe { Box::from_raw(trial) });
    }
}
