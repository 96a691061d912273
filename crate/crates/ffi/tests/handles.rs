use std::ffi::{CStr, CString};
use std::ptr;

use primtrack_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pt_last_error()) }.to_string_lossy().into_owned()
}

fn config(toml: &str) -> *mut PtConfig {
    let text = CString::new(toml).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { pt_config_from_toml(text.as_ptr(), &mut cfg) }, PtStatus::Ok, "{}", last_error());
    cfg
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        assert_eq!(pt_config_default(ptr::null_mut()), PtStatus::NullPointer);
        assert!(last_error().contains("out"));
        let mut cfg = ptr::null_mut();
        assert_eq!(pt_config_from_toml(ptr::null(), &mut cfg), PtStatus::NullPointer);
        assert!(cfg.is_null());
        assert_eq!(pt_world_build(ptr::null(), 0, &mut ptr::null_mut()), PtStatus::NullPointer);
        pt_config_free(ptr::null_mut());
        pt_world_free(ptr::null_mut());
        pt_planner_free(ptr::null_mut());
        pt_plan_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_maps_to_config_status() {
    let text = CString::new("bogus = 1").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { pt_config_from_toml(text.as_ptr(), &mut cfg) }, PtStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("bogus"));

    let path = CString::new("/nonexistent/run.toml").unwrap();
    assert_eq!(unsafe { pt_config_load(path.as_ptr(), &mut cfg) }, PtStatus::Io);
}

#[test]
fn head_backend_without_weights_is_invalid() {
    let cfg = config("backend = \"head\"\n");
    let mut planner = ptr::null_mut();
    assert_eq!(unsafe { pt_planner_new(cfg, &mut planner) }, PtStatus::InvalidArgument);
    assert!(planner.is_null());
    unsafe { pt_config_free(cfg) };
}

#[test]
fn plan_in_empty_world_reaches_toward_goal() {
    let cfg = config("[world]\nempty = true\n");
    unsafe {
        let mut world = ptr::null_mut();
        assert_eq!(pt_world_build(cfg, 0, &mut world), PtStatus::Ok);
        let mut d = 0.0;
        let mut g = [0.0; 3];
        assert_eq!(pt_world_distance(world, [10.0, 0.0, 2.0].as_ptr(), &mut d, g.as_mut_ptr()), PtStatus::Ok);
        assert!(d > 1.0);

        let mut planner = ptr::null_mut();
        assert_eq!(pt_planner_new(cfg, &mut planner), PtStatus::Ok);
        let start = PtState { position: [0.0, 0.0, 2.0], ..Default::default() };
        let goal = [40.0, 0.0, 2.0];
        let mut plan = ptr::null_mut();
        assert_eq!(
            pt_plan_navigation(planner, world, &start, 0.0, goal.as_ptr(), 0.3, &mut plan),
            PtStatus::Ok,
            "{}",
            last_error()
        );
        let mut horizon = 0.0;
        let mut estop = true;
        assert_eq!(pt_plan_horizon(plan, &mut horizon), PtStatus::Ok);
        assert_eq!(pt_plan_estop(plan, &mut estop), PtStatus::Ok);
        assert!(horizon > 0.0 && !estop);
        let mut p0 = [0.0; 3];
        let mut p1 = [0.0; 3];
        assert_eq!(pt_plan_sample(plan, 0.0, 0, p0.as_mut_ptr()), PtStatus::Ok);
        assert_eq!(pt_plan_sample(plan, horizon, 0, p1.as_mut_ptr()), PtStatus::Ok);
        assert!((p0[0] - 0.0).abs() < 1e-9 && (p0[2] - 2.0).abs() < 1e-9);
        assert!(p1[0] > 3.0, "end point {p1:?}");
        assert_eq!(pt_plan_sample(plan, horizon, 9, p1.as_mut_ptr()), PtStatus::InvalidArgument);

        pt_plan_free(plan);
        pt_planner_free(planner);
        pt_world_free(world);
        pt_config_free(cfg);
    }
}

#[test]
fn navigation_episode_summary() {
    let cfg = config("[world]\nempty = true\n");
    let mut summary = PtEpisodeSummary::default();
    assert_eq!(unsafe { pt_run_episode(cfg, PtEpisodeKind::Navigation, 0, &mut summary) }, PtStatus::Ok);
    assert!(summary.success);
    assert_eq!(summary.failure, PtFailure::None);
    assert!(summary.path_length > 39.0);
    unsafe { pt_config_free(cfg) };
}

#[test]
fn grad_check_through_ffi() {
    let cfg = config("[grad_check]\nfixtures = 20\n");
    let mut passed = false;
    let mut errors = [f64::NAN; 4];
    assert_eq!(unsafe { pt_grad_check(cfg, &mut passed, errors.as_mut_ptr()) }, PtStatus::Ok);
    assert!(passed);
    assert!(errors.iter().all(|e| e.is_finite() && *e < 1e-3));
    unsafe { pt_config_free(cfg) };
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(pt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
