//! C interface. Every object is an opaque handle created by a `pt_*_new`
//! style constructor and released with the matching `pt_*_free`. Functions
//! return a [`PtStatus`]; on failure [`pt_last_error`] describes the cause.
//!
//! Handles are not synchronized: a handle may move between threads but must
//! not be used from two threads at once. The last-error message is per thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::Vector3;
use primtrack::config::RunConfig;
use primtrack::costs::{effective_goal, TaskMode};
use primtrack::experiments::planner_for;
use primtrack::gradcheck::{run_grad_check, Category};
use primtrack::simulator::{
    build_world, navigation_world, run_navigation_episode, run_tracking_episode, tracking_world, PlanOutcome,
    PlanRequest, Planner, World,
};
use primtrack::tracker::Tracker;
use primtrack::trajectory::BoundaryDerivatives;
use primtrack::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Numeric = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PtEpisodeKind {
    Tracking = 0,
    Navigation = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PtFailure {
    #[default]
    None = 0,
    PlanningFailed = 1,
    TargetMissed = 2,
    Unreachable = 3,
}

/// Position, velocity and acceleration of a flat state.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PtState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub acceleration: [f64; 3],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PtEpisodeSummary {
    pub success: bool,
    pub failure: PtFailure,
    pub min_clearance: f64,
    pub smoothness: f64,
    pub fov_fraction: f64,
    pub mean_latency_ms: f64,
    pub path_length: f64,
    pub duration: f64,
    pub estops: usize,
    pub final_position: [f64; 3],
}

/// Parsed run configuration.
pub struct PtConfig(RunConfig);
/// Forest point cloud with its distance field.
pub struct PtWorld(World);
/// Anchor library and backend.
pub struct PtPlanner(Planner);
/// Result of one planning cycle.
pub struct PtPlan(PlanOutcome);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PtStatus {
    match e {
        Error::InvalidArgument(_) | Error::OutOfRange { .. } | Error::Unsupported(_) | Error::Empty(_) => {
            PtStatus::InvalidArgument
        }
        Error::DegenerateThrust(_) => PtStatus::Numeric,
        Error::Format(_) | Error::Config(_) => PtStatus::Config,
        Error::Io(_) => PtStatus::Io,
    }
}

struct Fail(PtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PtStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PtStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            PtStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PtStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn vec3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

unsafe fn read3(p: *const f64, what: &str) -> Result<Vector3<f64>, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(Vector3::new(*p, *p.add(1), *p.add(2)))
}

unsafe fn write3(p: *mut f64, v: &Vector3<f64>) {
    *p = v.x;
    *p.add(1) = v.y;
    *p.add(2) = v.z;
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pt_config_default(out: *mut *mut PtConfig) -> PtStatus {
    guard(|| {
        *out_ref(out, "out")? = Box::into_raw(Box::new(PtConfig(RunConfig::default())));
        Ok(())
    })
}

/// Parses a TOML document.
///
/// # Safety
/// `toml` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_config_from_toml(toml: *const c_char, out: *mut *mut PtConfig) -> PtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = RunConfig::from_toml(text(toml, "toml")?)?;
        *out = Box::into_raw(Box::new(PtConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_config_load(path: *const c_char, out: *mut *mut PtConfig) -> PtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = RunConfig::load(text(path, "path")?)?;
        *out = Box::into_raw(Box::new(PtConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from a `pt_config_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn pt_config_free(cfg: *mut PtConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Forest of `seed` under the configured world block.
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_world_build(cfg: *const PtConfig, seed: u64, out: *mut *mut PtWorld) -> PtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let world = build_world(&deref(cfg, "cfg")?.0.world, seed, &[])?;
        *out = Box::into_raw(Box::new(PtWorld(world)));
        Ok(())
    })
}

/// Interpolated distance and its gradient at `point`.
///
/// # Safety
/// `world` must be live; `point` must hold 3 values; `gradient` is null or holds 3.
#[no_mangle]
pub unsafe extern "C" fn pt_world_distance(
    world: *const PtWorld,
    point: *const f64,
    distance: *mut f64,
    gradient: *mut f64,
) -> PtStatus {
    guard(|| {
        let w = deref(world, "world")?;
        let s = w.0.grid.query(&read3(point, "point")?);
        *out_ref(distance, "distance")? = s.distance;
        if !gradient.is_null() {
            write3(gradient, &s.gradient);
        }
        Ok(())
    })
}

/// # Safety
/// `world` must come from `pt_world_build` or be null.
#[no_mangle]
pub unsafe extern "C" fn pt_world_free(world: *mut PtWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Planner for the configured backend. The head backend loads its weights
/// from the configured path.
///
/// # Safety
/// `cfg` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_planner_new(cfg: *const PtConfig, out: *mut *mut PtPlanner) -> PtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let planner = planner_for(&deref(cfg, "cfg")?.0)?;
        *out = Box::into_raw(Box::new(PtPlanner(planner)));
        Ok(())
    })
}

/// # Safety
/// `planner` must come from `pt_planner_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn pt_planner_free(planner: *mut PtPlanner) {
    if !planner.is_null() {
        drop(Box::from_raw(planner));
    }
}

/// One navigation planning cycle from `start` with heading `yaw` toward `goal`.
/// Candidates closer than `min_clearance` to an obstacle are rejected.
///
/// # Safety
/// All pointers must be valid; `goal` holds 3 values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_plan_navigation(
    planner: *const PtPlanner,
    world: *const PtWorld,
    start: *const PtState,
    yaw: f64,
    goal: *const f64,
    min_clearance: f64,
    out: *mut *mut PtPlan,
) -> PtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let planner = &deref(planner, "planner")?.0;
        let world = &deref(world, "world")?.0;
        let s = deref(start, "start")?;
        let start = BoundaryDerivatives::new(vec3(&s.position), vec3(&s.velocity), vec3(&s.acceleration));
        let goal = read3(goal, "goal")?;
        let goal_point = effective_goal(TaskMode::Navigation, &start.position, &goal, planner.config.lattice.radius)?;
        let req = PlanRequest {
            grid: &world.grid,
            start,
            yaw,
            mode: TaskMode::Navigation,
            goal_point: Some(goal_point),
            detection: None,
            privileged_target: None,
            min_clearance,
        };
        let mut tracker = Tracker::new(Default::default())?;
        let outcome = planner.plan(&req, &mut tracker)?;
        *out = Box::into_raw(Box::new(PtPlan(outcome)));
        Ok(())
    })
}

/// Duration of the planned trajectory in seconds.
///
/// # Safety
/// `plan` must be live.
#[no_mangle]
pub unsafe extern "C" fn pt_plan_horizon(plan: *const PtPlan, out: *mut f64) -> PtStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(plan, "plan")?.0.trajectory.horizon();
        Ok(())
    })
}

/// Whether no candidate kept clearance and a braking trajectory was used.
///
/// # Safety
/// `plan` must be live.
#[no_mangle]
pub unsafe extern "C" fn pt_plan_estop(plan: *const PtPlan, out: *mut bool) -> PtStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(plan, "plan")?.0.estop;
        Ok(())
    })
}

/// Derivative `order` (0 to 5) of the plan at time `t` in `[0, horizon]`.
///
/// # Safety
/// `plan` must be live; `out` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn pt_plan_sample(plan: *const PtPlan, t: f64, order: u32, out: *mut f64) -> PtStatus {
    guard(|| {
        let v = deref(plan, "plan")?.0.trajectory.evaluate(t, order as usize)?;
        if out.is_null() {
            return Err(null("out"));
        }
        write3(out, &v);
        Ok(())
    })
}

/// # Safety
/// `plan` must come from a `pt_plan_*` call or be null.
#[no_mangle]
pub unsafe extern "C" fn pt_plan_free(plan: *mut PtPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Runs one closed-loop episode of the configured scenario.
///
/// # Safety
/// `cfg` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_run_episode(
    cfg: *const PtConfig,
    kind: PtEpisodeKind,
    seed: u64,
    out: *mut PtEpisodeSummary,
) -> PtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = &deref(cfg, "cfg")?.0;
        let planner = planner_for(cfg)?;
        let (m, _) = match kind {
            PtEpisodeKind::Tracking => {
                let world = tracking_world(&cfg.world, &cfg.tracking, seed)?;
                run_tracking_episode(&cfg.episode, &cfg.tracking, &planner, &world, seed)?
            }
            PtEpisodeKind::Navigation => {
                let world = navigation_world(&cfg.world, seed)?;
                run_navigation_episode(&cfg.episode, &cfg.navigation, &planner, &world)?
            }
        };
        use primtrack::simulator::FailureClass as F;
        *out = PtEpisodeSummary {
            success: m.success,
            failure: match m.failure {
                F::None => PtFailure::None,
                F::PlanningFailed => PtFailure::PlanningFailed,
                F::TargetMissed => PtFailure::TargetMissed,
                F::Unreachable => PtFailure::Unreachable,
            },
            min_clearance: m.min_clearance,
            smoothness: m.smoothness,
            fov_fraction: m.fov_fraction,
            mean_latency_ms: m.mean_latency_ms,
            path_length: m.path_length,
            duration: m.duration,
            estops: m.estops,
            final_position: [m.final_position.x, m.final_position.y, m.final_position.z],
        };
        Ok(())
    })
}

/// Finite-difference gradient check. `max_errors` receives the worst relative
/// error of the smoothness, goal, collision and chain-rule checks, in order.
///
/// # Safety
/// `cfg` must be live; `passed` must be writable; `max_errors` is null or holds 4.
#[no_mangle]
pub unsafe extern "C" fn pt_grad_check(cfg: *const PtConfig, passed: *mut bool, max_errors: *mut f64) -> PtStatus {
    guard(|| {
        let passed = out_ref(passed, "passed")?;
        let report = run_grad_check(&deref(cfg, "cfg")?.0.grad_check)?;
        *passed = report.passed();
        if !max_errors.is_null() {
            for (i, c) in Category::ALL.into_iter().enumerate() {
                *max_errors.add(i) = report.max_error(c);
            }
        }
        Ok(())
    })
}
