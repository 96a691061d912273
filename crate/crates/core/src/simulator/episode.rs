use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::{step, DynamicsConfig, QuadState};
use super::evader::{Evader, EvaderConfig};
use super::metrics::{compute_metrics, EpisodeLog, EpisodeMetrics, FailureClass, LogRow};
use super::planner::{PlanRequest, Planner};
use super::sensing::{simulate_detection, DetectionNoise};
use crate::control::{flatness_commands, Command, ObserverConfig, ObserverState};
use crate::costs::{effective_goal, TaskMode};
use crate::environment::{forest_from_trunks, generate_forest, EsdfGrid, Forest, ForestSpec, GridGeometry};
use crate::error::{invalid, Result};
use crate::policy::{tracking_goal_point, visible_cell};
use crate::tracker::{plan_yaw, Tracker, TrackerConfig};
use crate::trajectory::{BoundaryDerivatives, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub control_rate: f64,
    pub planner_rate: f64,
    pub collision_radius: f64,
    /// Selected trajectories must keep `estop_factor * collision_radius` clearance.
    pub estop_factor: f64,
    pub altitude: f64,
    pub max_duration: f64,
    /// Largest final planar distance to the target that still counts as following.
    pub follow_distance: f64,
    /// Planar distance at which the target counts as escaped.
    pub escape_distance: f64,
    /// Seconds without an accepted detection before the episode is lost.
    pub lost_timeout: f64,
    /// Seconds of continuous braking before planning counts as failed.
    pub stall_time: f64,
    /// Time flown after the evader reaches its goal.
    pub settle_time: f64,
    /// Position and velocity feedback added to the feed-forward acceleration.
    pub kp: f64,
    pub kv: f64,
    /// Distance to the navigation goal that counts as reached.
    pub goal_radius: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_rate: 200.0,
            planner_rate: 30.0,
            collision_radius: 0.2,
            estop_factor: 1.5,
            altitude: 2.0,
            max_duration: 60.0,
            follow_distance: 8.0,
            escape_distance: 15.0,
            lost_timeout: 3.0,
            stall_time: 2.0,
            settle_time: 1.0,
            kp: 0.0,
            kv: 0.0,
            goal_radius: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_rate > 0.0 && self.planner_rate > 0.0 && self.planner_rate <= self.control_rate) {
            return Err(invalid("rates must be positive with the planner no faster than control"));
        }
        if !(self.collision_radius > 0.0 && self.estop_factor >= 1.0 && self.max_duration > 0.0 && self.goal_radius > 0.0) {
            return Err(invalid("collision radius, emergency-stop factor, duration or goal radius out of range"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate
    }
}

/// Forest world with its ground-truth distance field.
#[derive(Clone, Debug)]
pub struct World {
    pub forest: Forest,
    pub grid: EsdfGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// No trees, ground only.
    pub empty: bool,
    pub forest: ForestSpec,
    pub resolution: f64,
    pub truncation: f64,
    /// Extra mapped border around the forest, m.
    pub margin: f64,
    pub z_range: [f64; 2],
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            empty: false,
            forest: ForestSpec { origin: [-2.0, -25.0], area: [57.0, 50.0], ..Default::default() },
            resolution: 0.2,
            truncation: crate::environment::DEFAULT_TRUNCATION,
            margin: 5.0,
            z_range: [-0.5, 6.5],
        }
    }
}

/// Grid covering the forested area plus its margin.
pub fn world_geometry(cfg: &WorldConfig) -> Result<GridGeometry> {
    let f = &cfg.forest;
    let lo = Vector3::new(f.origin[0] - cfg.margin, f.origin[1] - cfg.margin, cfg.z_range[0]);
    let hi = Vector3::new(f.origin[0] + f.area[0] + cfg.margin, f.origin[1] + f.area[1] + cfg.margin, cfg.z_range[1]);
    GridGeometry::covering(lo, hi, cfg.resolution)
}

/// Builds the forest for `seed` with the given clearings and its field.
pub fn build_world(cfg: &WorldConfig, seed: u64, clearings: &[[f64; 2]]) -> Result<World> {
    let mut spec = cfg.forest.clone();
    spec.seed = seed;
    spec.clear_points.extend_from_slice(clearings);
    spec.validate()?;
    let forest = if cfg.empty {
        forest_from_trunks(Vec::new(), &spec)?
    } else {
        generate_forest(&spec)?
    };
    let grid = EsdfGrid::build(&forest.cloud, world_geometry(cfg)?, cfg.truncation)?;
    Ok(World { forest, grid })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingScenario {
    pub evader: EvaderConfig,
    /// Initial planar gap between follower and target along the course, m.
    pub initial_gap: f64,
    /// Course heading, rad.
    pub heading: f64,
    /// Follower yaw relative to the course at take-off.
    pub yaw_offset: f64,
    pub detection: DetectionNoise,
}

impl Default for TrackingScenario {
    fn default() -> Self {
        Self {
            evader: EvaderConfig::default(),
            initial_gap: 4.0,
            heading: 0.0,
            yaw_offset: 0.0,
            detection: DetectionNoise::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavigationScenario {
    pub goal_distance: f64,
    pub heading: f64,
    /// Explicit goal instead of `goal_distance` along `heading`.
    pub goal: Option<[f64; 3]>,
}

impl Default for NavigationScenario {
    fn default() -> Self {
        Self { goal_distance: 40.0, heading: 0.0, goal: None }
    }
}

/// Everything an episode needs besides the world and the planner.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSettings {
    pub sim: SimConfig,
    pub dynamics: DynamicsConfig,
    pub observer: ObserverConfig,
    pub tracker: TrackerConfig,
}

/// Follower take-off point, the origin of the course.
pub fn spawn_point(altitude: f64) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, altitude)
}

struct FlightLoop<'a> {
    settings: &'a EpisodeSettings,
    grid: &'a EsdfGrid,
    state: QuadState,
    observer: ObserverState,
    command: Command,
    plan: Option<(Trajectory, f64)>,
    yaw: f64,
    log: EpisodeLog,
    time: f64,
    next_plan: f64,
    braking_since: Option<f64>,
    last_cost: f64,
    last_chosen: Option<usize>,
    last_estop: bool,
}

impl<'a> FlightLoop<'a> {
    fn new(settings: &'a EpisodeSettings, grid: &'a EsdfGrid, start: Vector3<f64>, yaw: f64) -> Result<Self> {
        settings.sim.validate()?;
        settings.dynamics.validate()?;
        let mass = settings.dynamics.mass;
        Ok(Self {
            settings,
            grid,
            state: QuadState::hovering(start, yaw, mass),
            observer: ObserverState::new(settings.observer, mass, &Vector3::zeros())?,
            command: Command::hover(mass, yaw),
            plan: None,
            yaw,
            log: EpisodeLog { dt: settings.sim.dt(), ..Default::default() },
            time: 0.0,
            next_plan: 0.0,
            braking_since: None,
            last_cost: f64::NAN,
            last_chosen: None,
            last_estop: false,
        })
    }

    fn plan_due(&self) -> bool {
        self.time + 1e-9 >= self.next_plan
    }

    /// Start state of a replan: measured position and velocity, acceleration
    /// from the running plan.
    fn start_state(&self) -> BoundaryDerivatives {
        let acc = match &self.plan {
            Some((traj, t0)) => traj.eval_clamped(self.time - t0, 2),
            None => Vector3::zeros(),
        };
        BoundaryDerivatives::new(self.state.position, self.state.velocity, acc)
    }

    fn request(&self, mode: TaskMode, goal_point: Option<Vector3<f64>>) -> PlanRequest<'a> {
        PlanRequest {
            grid: self.grid,
            start: self.start_state(),
            yaw: self.yaw,
            mode,
            goal_point,
            detection: None,
            privileged_target: None,
            min_clearance: self.settings.sim.collision_radius * self.settings.sim.estop_factor,
        }
    }

    fn accept_plan(&mut self, outcome: super::planner::PlanOutcome) {
        self.next_plan += 1.0 / self.settings.sim.planner_rate;
        self.log.latencies_ms.push(outcome.latency_ms);
        self.last_estop = outcome.estop;
        if outcome.estop {
            self.log.estops += 1;
            self.braking_since.get_or_insert(self.time);
        } else {
            self.braking_since = None;
        }
        self.last_chosen = outcome.selection.chosen;
        self.last_cost = outcome.selection.chosen.map_or(f64::NAN, |i| outcome.candidates[i].y_c);
        self.plan = Some((outcome.trajectory, self.time));
    }

    fn stalled(&self) -> bool {
        self.braking_since.is_some_and(|t| self.time - t >= self.settings.sim.stall_time)
    }

    /// One control step toward `desired_yaw`; returns the row to log.
    fn control_step(&mut self, desired_yaw: Option<f64>, yaw_rate: f64, target: Option<Vector3<f64>>, estimate: Option<Vector3<f64>>, visible: bool, detected: bool) -> Result<()> {
        let sim = &self.settings.sim;
        let dt = sim.dt();
        let mass = self.settings.dynamics.mass;
        let (p_d, v_d, a_d) = match &self.plan {
            Some((traj, t0)) => {
                let tau = self.time - t0;
                (traj.eval_clamped(tau, 0), traj.eval_clamped(tau, 1), traj.eval_clamped(tau, 2))
            }
            None => (self.state.position, Vector3::zeros(), Vector3::zeros()),
        };
        let acc_des = a_d + (p_d - self.state.position) * sim.kp + (v_d - self.state.velocity) * sim.kv;
        if let Some(target_yaw) = desired_yaw {
            self.yaw = crate::tracker::wrap_angle(
                self.yaw + crate::tracker::wrap_angle(target_yaw - self.yaw).clamp(-yaw_rate * dt, yaw_rate * dt),
            );
        }
        let d_hat = self.observer.disturbance();
        let prev_y = self.command.attitude * Vector3::y();
        self.command = match flatness_commands(&acc_des, self.yaw, &d_hat, mass, Some(&prev_y)) {
            Ok(c) => c,
            // free-fall request: clamp to a minimal upward thrust along gravity
            Err(_) => Command { attitude: self.command.attitude, thrust: 1e-3 * mass },
        };
        self.state = step(&self.state, &self.command, &self.settings.dynamics, dt);
        self.observer.step(&self.state.velocity, &self.command, dt)?;
        self.time += dt;
        self.log.rows.push(LogRow {
            time: self.time,
            position: self.state.position,
            velocity: self.state.velocity,
            acceleration: self.state.acceleration,
            acc_des,
            yaw: self.yaw,
            thrust: self.command.thrust,
            disturbance: self.observer.disturbance(),
            target,
            estimate,
            target_visible: visible,
            detected,
            chosen: self.last_chosen,
            cost: self.last_cost,
            estop: self.last_estop,
        });
        Ok(())
    }

    fn collided(&self) -> bool {
        self.grid.distance_at(&self.state.position) < self.settings.sim.collision_radius
    }

    fn finish(mut self, success: bool, failure: FailureClass) -> EpisodeLog {
        self.log.success = success;
        self.log.failure = Some(failure);
        self.log
    }
}

/// Closed-loop pursuit of a scripted evader.
pub fn run_tracking_episode(
    settings: &EpisodeSettings,
    scenario: &TrackingScenario,
    planner: &Planner,
    world: &World,
    seed: u64,
) -> Result<(EpisodeMetrics, EpisodeLog)> {
    scenario.detection.validate()?;
    let sim = settings.sim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let start = spawn_point(sim.altitude);
    let h = scenario.heading;
    let target_start = start + Vector3::new(h.cos(), h.sin(), 0.0) * scenario.initial_gap;
    let mut evader = Evader::new(&world.grid, target_start, h, scenario.evader, &mut rng)?;
    let mut fl = FlightLoop::new(settings, &world.grid, start, h + scenario.yaw_offset)?;
    let mut tracker = Tracker::new(settings.tracker)?;
    let dt = sim.dt();
    let mut finished_at: Option<f64> = None;
    let mut visible = false;
    let mut detected = false;

    let initial_cam = planner.camera(start, fl.yaw);
    if visible_cell(&target_start, &initial_cam, Some(&world.grid)).is_none() {
        fl.log.rows.push(LogRow {
            time: 0.0,
            position: start,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            acc_des: Vector3::zeros(),
            yaw: fl.yaw,
            thrust: fl.command.thrust,
            disturbance: Vector3::zeros(),
            target: Some(target_start),
            estimate: None,
            target_visible: false,
            detected: false,
            chosen: None,
            cost: f64::NAN,
            estop: false,
        });
        let log = fl.finish(false, FailureClass::TargetMissed);
        return Ok((compute_metrics(&log, &world.grid), log));
    }

    let outcome = loop {
        let target = evader.position();
        if fl.plan_due() {
            let period = 1.0 / sim.planner_rate;
            if fl.time > 0.0 {
                tracker.predict(period)?;
            }
            let cam = planner.camera(fl.state.position, fl.yaw);
            visible = visible_cell(&target, &cam, Some(&world.grid)).is_some();
            let detection = simulate_detection(&target, &cam, Some(&world.grid), &scenario.detection, &mut rng);
            detected = detection.is_some();
            let goal_point = tracker.estimate.as_ref().map(|e| {
                tracking_goal_point(&fl.state.position, &e.position(), &e.velocity(), planner.config.horizon(), planner.config.standoff)
            });
            let mut req = fl.request(TaskMode::Tracking, goal_point);
            req.detection = detection;
            req.privileged_target = Some(target);
            let outcome = planner.plan(&req, &mut tracker)?;
            fl.accept_plan(outcome);
        }
        let est = tracker.estimate.as_ref().map(|e| e.position());
        let lost = tracker.lost();
        let desired_yaw = Some(plan_yaw(est.as_ref(), &fl.state.position, lost, tracker.last_bearing, fl.yaw, f64::INFINITY, 1.0));
        fl.control_step(desired_yaw, settings.tracker.yaw_rate, Some(target), est, visible, detected)?;
        evader.step(&world.grid, dt)?;

        if fl.collided() || fl.stalled() {
            break (false, FailureClass::PlanningFailed);
        }
        let gap = evader.position() - fl.state.position;
        let planar = gap.x.hypot(gap.y);
        if planar > sim.escape_distance || tracker.since_seen > sim.lost_timeout {
            break (false, FailureClass::TargetMissed);
        }
        if finished_at.is_none() && (evader.finished() || scenario.evader.speed == 0.0) {
            finished_at = Some(fl.time);
        }
        if let Some(t) = finished_at {
            if fl.time - t >= sim.settle_time {
                if planar <= sim.follow_distance && !tracker.lost() {
                    break (true, FailureClass::None);
                }
                break (false, FailureClass::TargetMissed);
            }
        }
        if fl.time >= sim.max_duration {
            break (false, FailureClass::TargetMissed);
        }
    };
    let log = fl.finish(outcome.0, outcome.1);
    Ok((compute_metrics(&log, &world.grid), log))
}

/// Goal-directed flight through the forest.
pub fn run_navigation_episode(
    settings: &EpisodeSettings,
    scenario: &NavigationScenario,
    planner: &Planner,
    world: &World,
) -> Result<(EpisodeMetrics, EpisodeLog)> {
    let sim = settings.sim;
    let start = spawn_point(sim.altitude);
    let h = scenario.heading;
    let goal = match scenario.goal {
        Some(g) => Vector3::from(g),
        None => start + Vector3::new(h.cos(), h.sin(), 0.0) * scenario.goal_distance,
    };
    let mut fl = FlightLoop::new(settings, &world.grid, start, h)?;
    if world.grid.distance_at(&goal) < sim.collision_radius {
        let log = fl.finish(false, FailureClass::Unreachable);
        return Ok((compute_metrics(&log, &world.grid), log));
    }
    let mut tracker = Tracker::new(settings.tracker)?;
    let mut best = f64::INFINITY;
    let outcome = loop {
        if fl.plan_due() {
            let goal_point = effective_goal(TaskMode::Navigation, &fl.state.position, &goal, planner.config.lattice.radius).ok();
            let req = fl.request(TaskMode::Navigation, goal_point);
            let outcome = planner.plan(&req, &mut tracker)?;
            fl.accept_plan(outcome);
        }
        let d = goal - fl.state.position;
        let desired_yaw = (d.x.hypot(d.y) > sim.goal_radius).then(|| d.y.atan2(d.x));
        fl.control_step(desired_yaw, settings.tracker.yaw_rate, None, None, false, false)?;
        if fl.collided() || fl.stalled() {
            break (false, FailureClass::PlanningFailed);
        }
        let dist = (goal - fl.state.position).norm();
        if dist <= sim.goal_radius && dist > best {
            break (true, FailureClass::None);
        }
        best = best.min(dist);
        if fl.time >= sim.max_duration {
            break (false, FailureClass::PlanningFailed);
        }
    };
    let log = fl.finish(outcome.0, outcome.1);
    Ok((compute_metrics(&log, &world.grid), log))
}

/// World for a pursuit run: clearings at both take-off points and the evader goal.
pub fn tracking_world(cfg: &WorldConfig, scenario: &TrackingScenario, seed: u64) -> Result<World> {
    let dir = [scenario.heading.cos(), scenario.heading.sin()];
    let at = |s: f64| [dir[0] * s, dir[1] * s];
    build_world(cfg, seed, &[at(0.0), at(scenario.initial_gap), at(scenario.initial_gap + scenario.evader.goal_distance)])
}

/// World for a navigation run with the take-off point cleared.
pub fn navigation_world(cfg: &WorldConfig, seed: u64) -> Result<World> {
    build_world(cfg, seed, &[[0.0, 0.0]])
}
