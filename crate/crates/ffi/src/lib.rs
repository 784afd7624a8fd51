//! C ABI for the humanmpc controller.
//!
//! Every fallible function returns an [`HmpcStatus`]. On failure a message is
//! stored per thread and can be read with [`hmpc_last_error`]. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use humanmpc::controller::{setpoint_reference, ControllerConfig, Mpc};
use humanmpc::dynamics::{build_model, ModelParams, StateVector, INPUT_DIM, STATE_DIM};
use humanmpc::harness::{load_scenario, run_scenario, MethodKind, RunOptions};
use humanmpc::humans::{HumanFrame, Joints, NUM_JOINTS};
use humanmpc::reach::{HumanObservation, HumanReachParams, SetRegime, SkeletonMap};
use humanmpc::Error;
use nalgebra::Vector3;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    ConfigError = 4,
    IoError = 5,
    SolverError = 6,
    Panic = 7,
}

/// Opaque controller handle.
pub struct HmpcController {
    mpc: Mpc,
    params: HumanReachParams,
}

/// Diagnostics of one control step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HmpcStepInfo {
    /// Safety rows were dropped and replaced by the penalty term.
    pub softened: bool,
    /// No solve succeeded; the returned input is the clamped zero input.
    pub emergency: bool,
    /// The safety rows admitted a control inside the box.
    pub feasible: bool,
    pub iterations: u32,
    pub num_rows: u32,
    pub solve_time_ms: f64,
    pub assembly_time_ms: f64,
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

fn status_of(err: &Error) -> HmpcStatus {
    match err {
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => HmpcStatus::ParseError,
        Error::Config(_) | Error::ScenarioSpace(_) => HmpcStatus::ConfigError,
        Error::Io(_) => HmpcStatus::IoError,
        Error::InvalidProblem(_) => HmpcStatus::SolverError,
        _ => HmpcStatus::InvalidArgument,
    }
}

fn fail(status: HmpcStatus, msg: impl Into<String>) -> HmpcStatus {
    set_error(msg);
    status
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (HmpcStatus, String)>) -> HmpcStatus {
    clear_error();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(Ok(())) => HmpcStatus::Ok,
        Ok(Err((s, m))) => fail(s, m),
        Err(_) => fail(HmpcStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> (HmpcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (HmpcStatus, String) {
    (HmpcStatus::NullPointer, format!("{what} is NULL"))
}

/// # Safety
/// `s` must be NULL or a valid NUL-terminated string.
unsafe fn opt_str<'a>(s: *const c_char, what: &str) -> Result<Option<&'a str>, (HmpcStatus, String)> {
    if s.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(s)
        .to_str()
        .map(Some)
        .map_err(|_| (HmpcStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn parse_json<T: serde::de::DeserializeOwned + Default>(s: Option<&str>) -> Result<T, (HmpcStatus, String)> {
    match s {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| (HmpcStatus::ParseError, e.to_string())),
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn hmpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hmpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create a controller.
///
/// `controller_json`, `model_json` and `human_json` hold the controller
/// configuration, the model parameters and the human reachability parameters
/// as JSON objects; NULL selects the defaults. The handle is written to `out`.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hmpc_controller_new(
    controller_json: *const c_char,
    model_json: *const c_char,
    human_json: *const c_char,
    out: *mut *mut HmpcController,
) -> HmpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let mut cfg: ControllerConfig = parse_json(opt_str(controller_json, "controller_json")?)?;
        let model: ModelParams = parse_json(opt_str(model_json, "model_json")?)?;
        let params: HumanReachParams = parse_json(opt_str(human_json, "human_json")?)?;
        if controller_json.is_null() {
            cfg.ts = model.ts;
        }
        let mpc = Mpc::new(cfg, &model)
            .and_then(|m| m.with_humans(params, SkeletonMap::default(), SetRegime::Hybrid))
            .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(HmpcController { mpc, params }));
        Ok(())
    })
}

/// Release a controller. NULL is ignored.
///
/// # Safety
/// `ctrl` must be NULL or a handle from [`hmpc_controller_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hmpc_controller_free(ctrl: *mut HmpcController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Horizon length in steps, or 0 for a NULL handle.
///
/// # Safety
/// `ctrl` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hmpc_controller_horizon(ctrl: *const HmpcController) -> usize {
    ctrl.as_ref().map_or(0, |c| c.mpc.horizon())
}

/// Forget the warm start and the previous safety rows.
///
/// # Safety
/// `ctrl` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hmpc_controller_reset(ctrl: *mut HmpcController) -> HmpcStatus {
    guard(|| {
        let c = ctrl.as_mut().ok_or_else(|| null("ctrl"))?;
        c.mpc.reset();
        Ok(())
    })
}

/// One setpoint-tracking control step.
///
/// * `state`: 10 values `[x, y, z, vx, vy, vz, pitch, pitch_rate, roll, roll_rate]`.
/// * `joints`: `num_humans * 24 * 3` joint coordinates, human-major.
/// * `joint_speed`: `num_humans * 24` speed bounds, or NULL to assume the
///   maximum human speed for every joint.
/// * `goal`: 3 values.
/// * `u0`: receives `[thrust, pitch_ref, roll_ref]`.
/// * `info`: optional, may be NULL.
///
/// # Safety
/// All non-NULL pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hmpc_controller_step(
    ctrl: *mut HmpcController,
    state: *const f64,
    joints: *const f64,
    joint_speed: *const f64,
    num_humans: usize,
    goal: *const f64,
    u0: *mut f64,
    info: *mut HmpcStepInfo,
) -> HmpcStatus {
    guard(|| {
        let c = ctrl.as_mut().ok_or_else(|| null("ctrl"))?;
        if state.is_null() {
            return Err(null("state"));
        }
        if goal.is_null() {
            return Err(null("goal"));
        }
        if u0.is_null() {
            return Err(null("u0"));
        }
        if num_humans > 0 && joints.is_null() {
            return Err(null("joints"));
        }
        let x0 = StateVector::from_column_slice(std::slice::from_raw_parts(state, STATE_DIM));
        let g = std::slice::from_raw_parts(goal, 3);
        let goal = Vector3::new(g[0], g[1], g[2]);
        if !x0.iter().all(|v| v.is_finite()) || !goal.iter().all(|v| v.is_finite()) {
            return Err((HmpcStatus::InvalidArgument, "state and goal must be finite".into()));
        }
        let mut observations = Vec::with_capacity(num_humans);
        if num_humans > 0 {
            let flat = std::slice::from_raw_parts(joints, num_humans * NUM_JOINTS * 3);
            for h in 0..num_humans {
                let mut js: Joints = [Vector3::zeros(); NUM_JOINTS];
                for (j, p) in js.iter_mut().enumerate() {
                    let o = (h * NUM_JOINTS + j) * 3;
                    *p = Vector3::new(flat[o], flat[o + 1], flat[o + 2]);
                }
                let frame = HumanFrame::new(0.0, js);
                if !frame.is_finite() {
                    return Err((HmpcStatus::InvalidArgument, format!("joints of human {h} are not finite")));
                }
                let mut obs = HumanObservation::conservative(frame, &c.params);
                if !joint_speed.is_null() {
                    let speeds = std::slice::from_raw_parts(joint_speed.add(h * NUM_JOINTS), NUM_JOINTS);
                    for (dst, &s) in obs.joint_speed.iter_mut().zip(speeds) {
                        if !(s >= 0.0) {
                            return Err((HmpcStatus::InvalidArgument, "joint speeds must be >= 0".into()));
                        }
                        *dst = s.min(c.params.v_max);
                    }
                }
                observations.push(obs);
            }
        }
        let reference = setpoint_reference(&goal, c.mpc.horizon());
        let res = c.mpc.step(&x0, &observations, &reference).map_err(lib_err)?;
        let u = res.u0.to_vector();
        std::slice::from_raw_parts_mut(u0, INPUT_DIM).copy_from_slice(u.as_slice());
        if let Some(info) = info.as_mut() {
            *info = HmpcStepInfo {
                softened: res.softened,
                emergency: res.emergency,
                feasible: res.report.feasible_under_bounds,
                iterations: res.iterations as u32,
                num_rows: res.report.rows.len() as u32,
                solve_time_ms: res.solve_time * 1e3,
                assembly_time_ms: res.assembly_time * 1e3,
            };
        }
        Ok(())
    })
}

/// Exact zero-order-hold discretization. `a` receives 100 values and `b` 30,
/// both row-major. `model_json` may be NULL for the default parameters.
///
/// # Safety
/// `a` and `b` must be writable arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hmpc_discretize(model_json: *const c_char, a: *mut f64, b: *mut f64) -> HmpcStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("output matrix"));
        }
        let params: ModelParams = parse_json(opt_str(model_json, "model_json")?)?;
        let m = build_model(&params).map_err(lib_err)?;
        let a = std::slice::from_raw_parts_mut(a, STATE_DIM * STATE_DIM);
        let b = std::slice::from_raw_parts_mut(b, STATE_DIM * INPUT_DIM);
        for r in 0..STATE_DIM {
            for c in 0..STATE_DIM {
                a[r * STATE_DIM + c] = m.a[(r, c)];
            }
            for c in 0..INPUT_DIM {
                b[r * INPUT_DIM + c] = m.b[(r, c)];
            }
        }
        Ok(())
    })
}

/// Simulate a scenario file closed loop and return the run metrics as a JSON
/// string in `out_json`, to be released with [`hmpc_string_free`]. `method`
/// may be NULL to use the scenario's own method.
///
/// # Safety
/// `scenario_path` must be NUL-terminated; `method` NULL or NUL-terminated;
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn hmpc_simulate(
    scenario_path: *const c_char,
    method: *const c_char,
    out_json: *mut *mut c_char,
) -> HmpcStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        *out_json = ptr::null_mut();
        let path = opt_str(scenario_path, "scenario_path")?.ok_or_else(|| null("scenario_path"))?;
        let method = opt_str(method, "method")?
            .map(|m| m.parse::<MethodKind>())
            .transpose()
            .map_err(lib_err)?;
        let path = Path::new(path);
        let sc = load_scenario(path).map_err(lib_err)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let log = run_scenario(&sc, dir, &RunOptions { method, horizon: None, full_reports: false }).map_err(lib_err)?;
        let json = serde_json::to_string(&log.metrics).map_err(|e| (HmpcStatus::ParseError, e.to_string()))?;
        *out_json = CString::new(json).map_err(|e| (HmpcStatus::ParseError, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hmpc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
