use nalgebra::Vector3;
use primtrack::simulator::*;

fn empty_world() -> World {
    let cfg = WorldConfig { empty: true, ..Default::default() };
    build_world(&cfg, 0, &[]).unwrap()
}

fn refiner() -> Planner {
    Planner::new(PlannerConfig::default(), Backend::Refiner).unwrap()
}

fn stationary_target() -> TrackingScenario {
    let mut sc = TrackingScenario::default();
    sc.evader.speed = 0.0;
    sc.evader.switch_goal = false;
    sc
}

#[test]
fn empty_map_stationary_target_settles_in_band() {
    let world = empty_world();
    let (m, log) =
        run_tracking_episode(&EpisodeSettings::default(), &stationary_target(), &refiner(), &world, 0).unwrap();
    assert!(m.success, "{:?}", m.failure);
    let last = log.rows.last().unwrap();
    let d = (last.target.unwrap() - last.position).xy().norm();
    assert!((2.0..=6.0).contains(&d), "final distance {d}");
    assert!(m.fov_fraction > 0.999, "fov {}", m.fov_fraction);
}

#[test]
fn empty_map_navigation_is_nearly_straight() {
    let world = empty_world();
    let (m, _) =
        run_navigation_episode(&EpisodeSettings::default(), &NavigationScenario::default(), &refiner(), &world).unwrap();
    assert!(m.success, "{:?}", m.failure);
    assert!((m.path_length - 40.0).abs() <= 0.02 * 40.0, "path {}", m.path_length);
    assert_eq!(m.estops, 0);
}

#[test]
fn facing_away_misses_target() {
    let world = empty_world();
    let sc = TrackingScenario { yaw_offset: std::f64::consts::PI, ..stationary_target() };
    let (m, log) = run_tracking_episode(&EpisodeSettings::default(), &sc, &refiner(), &world, 0).unwrap();
    assert!(!m.success);
    assert_eq!(m.failure, FailureClass::TargetMissed);
    assert!(log.rows.len() <= 1, "episode ran {} steps", log.rows.len());
}

#[test]
fn goal_inside_obstacle_is_unreachable() {
    let cfg = WorldConfig::default();
    let world = navigation_world(&cfg, 4).unwrap();
    let trunk = world.forest.trunks.iter().find(|t| t.norm() > 10.0).unwrap();
    let sc = NavigationScenario { goal: Some([trunk.x, trunk.y, 2.0]), ..Default::default() };
    let (m, log) = run_navigation_episode(&EpisodeSettings::default(), &sc, &refiner(), &world).unwrap();
    assert!(!m.success);
    assert_eq!(m.failure, FailureClass::Unreachable);
    assert!(log.rows.len() <= 1);
}

#[test]
fn episodes_are_deterministic() {
    let cfg = WorldConfig::default();
    let sc = TrackingScenario::default();
    let world = tracking_world(&cfg, &sc, 2).unwrap();
    let planner = refiner();
    let settings = EpisodeSettings::default();
    let (mut a, la) = run_tracking_episode(&settings, &sc, &planner, &world, 2).unwrap();
    let (mut b, lb) = run_tracking_episode(&settings, &sc, &planner, &world, 2).unwrap();
    a.mean_latency_ms = 0.0;
    b.mean_latency_ms = 0.0;
    assert_eq!(a, b);
    assert_eq!(la.rows, lb.rows);
}

#[test]
fn control_rate_does_not_move_the_endpoint() {
    let world = empty_world();
    let planner = refiner();
    let run = |rate: f64| {
        let mut settings = EpisodeSettings::default();
        settings.sim.control_rate = rate;
        let (m, _) = run_tracking_episode(&settings, &stationary_target(), &planner, &world, 0).unwrap();
        assert!(m.success);
        m.final_position
    };
    let a = run(200.0);
    let b = run(400.0);
    assert!((a - b).norm() < 0.05, "{a:?} vs {b:?}");
}

#[test]
fn constant_velocity_log_has_zero_jerk() {
    let world = empty_world();
    let dt = 0.005;
    let v = Vector3::new(3.0, 0.5, 0.0);
    let rows = (0..2000)
        .map(|k| {
            let t = k as f64 * dt;
            LogRow {
                time: t,
                position: Vector3::new(0.0, 0.0, 2.0) + v * t,
                velocity: v,
                acceleration: Vector3::zeros(),
                acc_des: Vector3::zeros(),
                yaw: 0.0,
                thrust: 9.8,
                disturbance: Vector3::zeros(),
                target: None,
                estimate: None,
                target_visible: false,
                detected: false,
                chosen: None,
                cost: 0.0,
                estop: false,
            }
        })
        .collect();
    let log = EpisodeLog { dt, rows, ..Default::default() };
    let m = compute_metrics(&log, &world.grid);
    assert!(m.smoothness.abs() < 1e-12);
    assert!((m.path_length - v.norm() * 1999.0 * dt).abs() < 1e-9);
}
