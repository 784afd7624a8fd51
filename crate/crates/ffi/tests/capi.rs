use std::ffi::{CStr, CString};
use std::ptr;

use humanmpc::harness::{gen_scenarios, save_scenario, ScenarioSpace};
use humanmpc::humans::{standing_pose, NUM_JOINTS};
use humanmpc_ffi::*;

fn last_error() -> String {
    let p = hmpc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn controller() -> *mut HmpcController {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { hmpc_controller_new(ptr::null(), ptr::null(), ptr::null(), &mut c) }, HmpcStatus::Ok);
    assert!(!c.is_null());
    c
}

#[test]
fn version_is_semver() {
    let v = unsafe { CStr::from_ptr(hmpc_version()) }.to_str().unwrap();
    assert_eq!(v.split('.').count(), 3);
}

#[test]
fn default_controller_lifecycle() {
    let c = controller();
    assert_eq!(unsafe { hmpc_controller_horizon(c) }, 40);
    assert_eq!(unsafe { hmpc_controller_reset(c) }, HmpcStatus::Ok);
    unsafe { hmpc_controller_free(c) };
    unsafe { hmpc_controller_free(ptr::null_mut()) };
    assert_eq!(unsafe { hmpc_controller_horizon(ptr::null()) }, 0);
}

#[test]
fn step_without_humans_moves_toward_goal() {
    let c = controller();
    let state = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let goal = [3.0, 0.0, 1.0];
    let mut u = [f64::NAN; 3];
    let mut info = HmpcStepInfo::default();
    let s = unsafe {
        hmpc_controller_step(c, state.as_ptr(), ptr::null(), ptr::null(), 0, goal.as_ptr(), u.as_mut_ptr(), &mut info)
    };
    assert_eq!(s, HmpcStatus::Ok);
    // Positive pitch accelerates along +x.
    assert!(u[1] > 0.0, "{u:?}");
    assert!(!info.softened && !info.emergency && info.feasible);
    assert_eq!(info.num_rows, 0);
    unsafe { hmpc_controller_free(c) };
}

#[test]
fn step_with_human_builds_rows() {
    let c = controller();
    let mut joints = Vec::with_capacity(NUM_JOINTS * 3);
    for p in standing_pose() {
        joints.extend_from_slice(&[p.x + 3.0, p.y, p.z]);
    }
    let speeds = [0.0; NUM_JOINTS];
    let state = [0.0, 0.0, 1.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let goal = [6.0, 0.0, 1.2];
    let mut u = [0.0; 3];
    let mut info = HmpcStepInfo::default();
    let s = unsafe {
        hmpc_controller_step(c, state.as_ptr(), joints.as_ptr(), speeds.as_ptr(), 1, goal.as_ptr(), u.as_mut_ptr(), &mut info)
    };
    assert_eq!(s, HmpcStatus::Ok, "{}", last_error());
    assert!(info.num_rows > 0);
    assert!(info.feasible);
    unsafe { hmpc_controller_free(c) };
}

#[test]
fn null_and_bad_arguments_report_errors() {
    let mut u = [0.0; 3];
    let goal = [0.0; 3];
    let s = unsafe {
        hmpc_controller_step(ptr::null_mut(), goal.as_ptr(), ptr::null(), ptr::null(), 0, goal.as_ptr(), u.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(s, HmpcStatus::NullPointer);
    assert!(last_error().contains("ctrl"));

    let c = controller();
    let state = [f64::NAN; 10];
    let s = unsafe {
        hmpc_controller_step(c, state.as_ptr(), ptr::null(), ptr::null(), 0, goal.as_ptr(), u.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(s, HmpcStatus::InvalidArgument);
    let s = unsafe {
        hmpc_controller_step(c, goal.as_ptr(), ptr::null(), ptr::null(), 1, goal.as_ptr(), u.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(s, HmpcStatus::NullPointer);
    unsafe { hmpc_controller_free(c) };

    let bad = CString::new("{not json").unwrap();
    let mut out = ptr::null_mut();
    let s = unsafe { hmpc_controller_new(bad.as_ptr(), ptr::null(), ptr::null(), &mut out) };
    assert_eq!(s, HmpcStatus::ParseError);
    assert!(out.is_null());

    let cfg = CString::new(r#"{"T": 0}"#).unwrap();
    let s = unsafe { hmpc_controller_new(cfg.as_ptr(), ptr::null(), ptr::null(), &mut out) };
    assert_ne!(s, HmpcStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn successful_call_clears_error() {
    let mut out = ptr::null_mut();
    let bad = CString::new("42").unwrap();
    assert_ne!(unsafe { hmpc_controller_new(bad.as_ptr(), ptr::null(), ptr::null(), &mut out) }, HmpcStatus::Ok);
    assert!(!hmpc_last_error().is_null());
    let c = controller();
    assert!(hmpc_last_error().is_null());
    unsafe { hmpc_controller_free(c) };
}

#[test]
fn discretization_matches_core() {
    let mut a = [0.0; 100];
    let mut b = [0.0; 30];
    assert_eq!(unsafe { hmpc_discretize(ptr::null(), a.as_mut_ptr(), b.as_mut_ptr()) }, HmpcStatus::Ok);
    let m = humanmpc::dynamics::build_model(&Default::default()).unwrap();
    for r in 0..10 {
        for c in 0..10 {
            assert_eq!(a[r * 10 + c], m.a[(r, c)]);
        }
        for c in 0..3 {
            assert_eq!(b[r * 3 + c], m.b[(r, c)]);
        }
    }
    let bad = CString::new(r#"{"g": 9.81, "c_x": 0.01, "c_y": 0.01, "c_z": 0.01, "b1": 1, "b2": 0.1, "b3": 1, "b4": 0.1, "Ts": -1}"#).unwrap();
    assert_eq!(unsafe { hmpc_discretize(bad.as_ptr(), a.as_mut_ptr(), b.as_mut_ptr()) }, HmpcStatus::InvalidArgument);
}

#[test]
fn simulate_scenario_returns_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let space = ScenarioSpace { max_time: 8.0, ..Default::default() };
    let sc = gen_scenarios(1, &space, 3, dir.path()).unwrap().remove(0);
    let path = dir.path().join("s.json");
    save_scenario(&sc, &path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let method = CString::new("ours").unwrap();
    let mut json = ptr::null_mut();
    let s = unsafe { hmpc_simulate(cpath.as_ptr(), method.as_ptr(), &mut json) };
    assert_eq!(s, HmpcStatus::Ok, "{}", last_error());
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { hmpc_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["collision_avoided"], true);

    let bogus = CString::new("warp-drive").unwrap();
    let s = unsafe { hmpc_simulate(cpath.as_ptr(), bogus.as_ptr(), &mut json) };
    assert_eq!(s, HmpcStatus::ConfigError);
    assert!(json.is_null());
    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { hmpc_simulate(missing.as_ptr(), ptr::null(), &mut json) }, HmpcStatus::IoError);
}

#[test]
fn header_declares_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/humanmpc.h")).unwrap();
    for sym in [
        "hmpc_controller_new",
        "hmpc_controller_step",
        "hmpc_controller_free",
        "hmpc_last_error",
        "hmpc_string_free",
        "HmpcStepInfo",
        "HMPC_STATUS_NULL_POINTER",
    ] {
        assert!(h.contains(sym), "{sym} missing from header");
    }
}
