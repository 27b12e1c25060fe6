//! C ABI over `peduncle-core`.
//!
//! Trials and fit results are opaque heap handles created by this library and
//! released with the matching `*_free` function. Every fallible call returns a
//! [`PedStatus`]; on failure a message is available from
//! [`ped_last_error_message`] on the same thread. Vectors are `double[3]`,
//! quaternions `double[4]` in `w, x, y, z` order, units SI.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use peduncle_core::evaluation;
use peduncle_core::geometry::quaternion_wxyz;
use peduncle_core::io::{load_trial, save_trial};
use peduncle_core::model::{bias_compensate, Label};
use peduncle_core::simulator::{generate_trial, trial_rng, SimConfig};
use peduncle_core::{
    fit, Error, FitResult, RigidTransform, SolverConfig, SpringParams, Trial, TrialSample, Vec3, Wrench,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PedStatus {
    Ok = 0,
    /// Malformed or inconsistent input.
    Validation = 1,
    /// The fit finished without meeting its convergence test. The result
    /// handle is still produced.
    NotConverged = 2,
    Io = 3,
    NullArgument = 4,
    /// Numerical failure: singular samples, degenerate geometry, solver breakdown.
    Solver = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Opaque trial handle.
pub struct PedTrial(Trial);

/// Opaque fit result handle.
pub struct PedFitResult(FitResult);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedSolverConfig {
    pub mse_target: f64,
    pub max_restarts: u32,
    pub max_iterations_per_run: u32,
    pub relative_step_tolerance: f64,
    pub relative_cost_tolerance: f64,
    pub constraint_tolerance: f64,
    pub optimality_tolerance: f64,
    /// Distance of the starting point from the initial fruit position, m.
    /// Zero or NaN selects the spring resting length.
    pub initial_offset_magnitude: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedFitSummary {
    pub r_o_hat: [f64; 3],
    pub final_mse: f64,
    pub iterations_total: u64,
    pub restarts_used: u64,
    pub runtime: f64,
    pub converged: bool,
    pub max_constraint_violation: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(PedStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => PedStatus::Io,
            e if e.is_validation() => PedStatus::Validation,
            _ => PedStatus::Solver,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(PedStatus::NullArgument, format!("`{name}` is null"))
}

fn guard(f: impl FnOnce() -> Result<PedStatus, Failure>) -> PedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => {
            if status == PedStatus::Ok {
                set_last_error("");
            }
            status
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {message}"));
            PedStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PedStatus::Validation, format!("`{name}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn vec3_arg(p: *const f64, name: &str) -> Result<Vec3, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = slice::from_raw_parts(p, 3);
    Ok(Vec3::new(s[0], s[1], s[2]))
}

unsafe fn trial_ref<'a>(p: *const PedTrial) -> Result<&'a Trial, Failure> {
    p.as_ref().map(|t| &t.0).ok_or_else(|| null("trial"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ped_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failed call on this thread; empty after a
/// successful call. Valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn ped_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads and validates a trial file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ped_trial_load(path: *const c_char, out: *mut *mut PedTrial) -> PedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let trial = load_trial(path_arg(path, "path")?)?;
        put(out, PedTrial(trial));
        Ok(PedStatus::Ok)
    })
}

/// # Safety
/// `trial` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ped_trial_save(trial: *const PedTrial, path: *const c_char) -> PedStatus {
    guard(|| {
        save_trial(trial_ref(trial)?, path_arg(path, "path")?)?;
        Ok(PedStatus::Ok)
    })
}

/// Builds a trial from flat arrays of `n` samples: `t[n]`,
/// `translations[3n]`, `rotations_wxyz[4n]`, sensor-frame `forces[3n]` and
/// `torques[3n]`. `torques` and `ground_truth` may be null.
///
/// # Safety
/// Every non-null pointer must reference at least the stated number of
/// doubles; `id` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ped_trial_from_arrays(
    id: *const c_char,
    success: bool,
    k: f64,
    l: f64,
    grasp_point: *const f64,
    n: usize,
    t: *const f64,
    translations: *const f64,
    rotations_wxyz: *const f64,
    forces: *const f64,
    torques: *const f64,
    ground_truth: *const f64,
    out: *mut *mut PedTrial,
) -> PedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let id = path_arg(id, "id")?.to_string_lossy().into_owned();
        let grasp = vec3_arg(grasp_point, "grasp_point")?;
        for (p, name) in [(t, "t"), (translations, "translations"), (rotations_wxyz, "rotations_wxyz"), (forces, "forces")] {
            if p.is_null() && n > 0 {
                return Err(null(name));
            }
        }
        let truth = if ground_truth.is_null() {
            None
        } else {
            Some(vec3_arg(ground_truth, "ground_truth")?)
        };
        let samples = (0..n)
            .map(|i| {
                let v = |p: *const f64| {
                    let s = slice::from_raw_parts(p.add(3 * i), 3);
                    Vec3::new(s[0], s[1], s[2])
                };
                let q = slice::from_raw_parts(rotations_wxyz.add(4 * i), 4);
                TrialSample {
                    t: *t.add(i),
                    pose: RigidTransform::new(quaternion_wxyz(q[0], q[1], q[2], q[3]), v(translations)),
                    wrench: Wrench::sensor(v(forces), if torques.is_null() { Vec3::zeros() } else { v(torques) }),
                }
            })
            .collect();
        let label = if success { Label::Success } else { Label::Failure };
        let spring = SpringParams::new(k, l)?;
        let trial = Trial::new(id, label, spring, grasp, truth, samples)?;
        put(out, PedTrial(trial));
        Ok(PedStatus::Ok)
    })
}

/// # Safety
/// `trial` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ped_trial_free(trial: *mut PedTrial) {
    if !trial.is_null() {
        drop(Box::from_raw(trial));
    }
}

/// Number of samples, 0 for a null handle.
///
/// # Safety
/// `trial` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ped_trial_sample_count(trial: *const PedTrial) -> usize {
    trial.as_ref().map_or(0, |t| t.0.len())
}

/// Writes the ground-truth attachment point; `VALIDATION` if the trial has none.
///
/// # Safety
/// `trial` must come from this library; `out` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ped_trial_ground_truth(trial: *const PedTrial, out: *mut f64) -> PedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let truth = trial_ref(trial)?
            .ground_truth()
            .ok_or_else(|| Failure(PedStatus::Validation, "trial has no ground truth".into()))?;
        slice::from_raw_parts_mut(out, 3).copy_from_slice(truth.as_slice());
        Ok(PedStatus::Ok)
    })
}

/// New trial with the first sample's wrench subtracted from every sample.
///
/// # Safety
/// `trial` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ped_trial_bias_compensate(trial: *const PedTrial, out: *mut *mut PedTrial) -> PedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let compensated = bias_compensate(trial_ref(trial)?);
        put(out, PedTrial(compensated));
        Ok(PedStatus::Ok)
    })
}

#[no_mangle]
pub extern "C" fn ped_solver_config_default() -> PedSolverConfig {
    let d = SolverConfig::default();
    PedSolverConfig {
        mse_target: d.mse_target,
        max_restarts: d.max_restarts as u32,
        max_iterations_per_run: d.max_iterations_per_run as u32,
        relative_step_tolerance: d.relative_step_tolerance,
        relative_cost_tolerance: d.relative_cost_tolerance,
        constraint_tolerance: d.constraint_tolerance,
        optimality_tolerance: d.optimality_tolerance,
        initial_offset_magnitude: 0.0,
    }
}

fn solver_config(c: &PedSolverConfig) -> SolverConfig {
    let offset = c.initial_offset_magnitude;
    SolverConfig {
        mse_target: c.mse_target,
        max_restarts: c.max_restarts as usize,
        max_iterations_per_run: c.max_iterations_per_run as usize,
        relative_step_tolerance: c.relative_step_tolerance,
        relative_cost_tolerance: c.relative_cost_tolerance,
        constraint_tolerance: c.constraint_tolerance,
        optimality_tolerance: c.optimality_tolerance,
        initial_offset_magnitude: (offset > 0.0).then_some(offset),
        trace: false,
    }
}

/// Fits the attachment point. `config` may be null for defaults. Returns
/// `OK` or `NOT_CONVERGED`, both with `*out` set.
///
/// # Safety
/// `trial` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ped_fit(
    trial: *const PedTrial,
    config: *const PedSolverConfig,
    out: *mut *mut PedFitResult,
) -> PedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = config.as_ref().map_or_else(SolverConfig::default, solver_config);
        let result = fit(trial_ref(trial)?, &config)?;
        let converged = result.converged;
        put(out, PedFitResult(result));
        if converged {
            Ok(PedStatus::Ok)
        } else {
            Err(Failure(PedStatus::NotConverged, "fit did not converge".into()))
        }
    })
}

/// # Safety
/// `result` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ped_fit_result_get(result: *const PedFitResult, out: *mut PedFitSummary) -> PedStatus {
    guard(|| {
        let r = &result.as_ref().ok_or_else(|| null("result"))?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = PedFitSummary {
            r_o_hat: [r.r_o_hat.x, r.r_o_hat.y, r.r_o_hat.z],
            final_mse: r.final_mse,
            iterations_total: r.iterations_total as u64,
            restarts_used: r.restarts_used as u64,
            runtime: r.runtime,
            converged: r.converged,
            max_constraint_violation: r.max_constraint_violation,
        };
        Ok(PedStatus::Ok)
    })
}

/// # Safety
/// `result` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ped_fit_result_free(result: *mut PedFitResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Synthetic trial `index` of a corpus seeded with `seed`. `config_json` is a
/// simulator configuration object; null or `"{}"` selects the defaults.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ped_simulate_trial(
    config_json: *const c_char,
    seed: u64,
    index: u64,
    out: *mut *mut PedTrial,
) -> PedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mut config: SimConfig = if config_json.is_null() {
            SimConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| Failure(PedStatus::Validation, "config is not valid UTF-8".into()))?;
            serde_json::from_str(text).map_err(|e| Failure(PedStatus::Validation, format!("config: {e}")))?
        };
        config.seed = seed;
        let record = generate_trial(&config, &mut trial_rng(seed, index))?;
        put(out, PedTrial(record.trial));
        Ok(PedStatus::Ok)
    })
}

/// Distance between two points, m. NaN if either pointer is null.
///
/// # Safety
/// Non-null pointers must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ped_localization_error(r_hat: *const f64, r_true: *const f64) -> f64 {
    match (vec3_arg(r_hat, "r_hat"), vec3_arg(r_true, "r_true")) {
        (Ok(a), Ok(b)) => evaluation::localization_error(&a, &b),
        _ => f64::NAN,
    }
}

/// Angle at `r_a0` between the true and estimated attachment directions,
/// degrees.
///
/// # Safety
/// The three inputs must hold 3 doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ped_orientation_error(
    r_hat: *const f64,
    r_true: *const f64,
    r_a0: *const f64,
    out: *mut f64,
) -> PedStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = evaluation::orientation_error(
            &vec3_arg(r_hat, "r_hat")?,
            &vec3_arg(r_true, "r_true")?,
            &vec3_arg(r_a0, "r_a0")?,
        )?;
        Ok(PedStatus::Ok)
    })
}
