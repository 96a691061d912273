//! Target state maintenance: objectness filtering, a constant-velocity EKF
//! with consistency gating, minimum-cost candidate selection and yaw planning.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Matrix6x3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::costs::TaskMode;
use crate::error::{invalid, Error, Result};
use crate::policy::{decode_target, sigmoid, CameraModel, FrameContext};
use crate::primitives::PredictionVector;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// White-acceleration intensity, m^2/s^3.
    pub process_noise: f64,
    /// Measurement standard deviation per axis, m.
    pub measurement_std: f64,
    /// Gate on the position change a detection would cause, m.
    pub gate: f64,
    pub objectness_threshold: f64,
    /// Seconds without an accepted detection before the target counts as lost.
    pub lost_persistence: f64,
    /// Yaw rate limit, rad/s.
    pub yaw_rate: f64,
    pub initial_position_std: f64,
    pub initial_velocity_std: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            process_noise: 4.0,
            measurement_std: 0.3,
            gate: 2.0,
            objectness_threshold: 0.5,
            lost_persistence: 1.0,
            yaw_rate: 2.5,
            initial_position_std: 0.5,
            initial_velocity_std: 2.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.process_noise, self.measurement_std, self.gate, self.yaw_rate, self.initial_position_std, self.initial_velocity_std];
        if pos.iter().any(|v| !(*v > 0.0)) || self.lost_persistence < 0.0 {
            return Err(invalid("tracker noise, gate and rate parameters must be positive"));
        }
        if !(0.0..=1.0).contains(&self.objectness_threshold) {
            return Err(invalid("objectness threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn observation() -> Matrix3x6<f64> {
    Matrix3x6::new(
        1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
    )
}

pub fn transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * dt));
    f
}

/// Discretized continuous white-noise acceleration. Composes exactly:
/// two steps of `dt` give the same covariance as one step of `2 dt`.
pub fn process_noise(dt: f64, q: f64) -> Matrix6<f64> {
    let i = Matrix3::<f64>::identity();
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(i * (q * dt.powi(3) / 3.0)));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(i * (q * dt * dt / 2.0)));
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(i * (q * dt * dt / 2.0)));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(i * (q * dt)));
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetEstimate {
    pub x: Vector6<f64>,
    pub p: Matrix6<f64>,
    pub q: f64,
    pub r: Matrix3<f64>,
    pub gate: f64,
}

impl TargetEstimate {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, cfg: &TrackerConfig) -> Self {
        let mut p = Matrix6::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).fill_diagonal(cfg.initial_position_std.powi(2));
        p.fixed_view_mut::<3, 3>(3, 3).fill_diagonal(cfg.initial_velocity_std.powi(2));
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&position);
        x.fixed_rows_mut::<3>(3).copy_from(&velocity);
        Self { x, p, q: cfg.process_noise, r: Matrix3::identity() * cfg.measurement_std.powi(2), gate: cfg.gate }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(0).into()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(3).into()
    }

    pub fn predict(&self, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(invalid(format!("prediction step must be positive, got {dt}")));
        }
        let f = transition(dt);
        let mut next = self.clone();
        next.x = f * self.x;
        next.p = f * self.p * f.transpose() + process_noise(dt, self.q);
        next.p = (next.p + next.p.transpose()) * 0.5;
        Ok(next)
    }

    /// Current Kalman gain.
    pub fn gain(&self) -> Matrix6x3<f64> {
        let h = observation();
        let s = h * self.p * h.transpose() + self.r;
        let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
        self.p * h.transpose() * s_inv
    }

    /// Position change a measurement would cause, `|pos(K (z - H x))|`.
    pub fn inconsistency(&self, gain: &Matrix6x3<f64>, z: &Vector3<f64>) -> f64 {
        let dx = gain * (z - self.position());
        dx.fixed_rows::<3>(0).norm()
    }

    /// Joseph-form measurement update.
    pub fn update(&self, z: &Vector3<f64>) -> Self {
        let h = observation();
        let k = self.gain();
        let mut next = self.clone();
        next.x = self.x + k * (z - self.position());
        let ikh = Matrix6::identity() - k * h;
        next.p = ikh * self.p * ikh.transpose() + k * self.r * k.transpose();
        next.p = (next.p + next.p.transpose()) * 0.5;
        next
    }

    /// Commits the most consistent detection inside the gate, if any.
    pub fn gated_update(&self, detections: &[Vector3<f64>]) -> (Self, Option<usize>) {
        let k = self.gain();
        let best = detections
            .iter()
            .enumerate()
            .map(|(i, z)| (i, self.inconsistency(&k, z)))
            .filter(|(_, e)| *e <= self.gate)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, _)) => (self.update(&detections[i]), Some(i)),
            None => (self.clone(), None),
        }
    }

    /// Normalized estimation error squared against a true state.
    pub fn nees(&self, truth: &Vector6<f64>) -> f64 {
        let e = truth - self.x;
        match self.p.try_inverse() {
            Some(inv) => (e.transpose() * inv * e)[0],
            None => f64::INFINITY,
        }
    }
}

/// Runtime tracking state owned by the planning loop.
#[derive(Clone, Debug, PartialEq)]
pub struct Tracker {
    pub config: TrackerConfig,
    pub estimate: Option<TargetEstimate>,
    /// Seconds since the last accepted detection.
    pub since_seen: f64,
    /// World bearing from the quadrotor to the target at the last accepted detection.
    pub last_bearing: Option<f64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, estimate: None, since_seen: f64::INFINITY, last_bearing: None })
    }

    /// Starts from a known target position, as when the target is handed over at take-off.
    pub fn with_initial(config: TrackerConfig, position: Vector3<f64>) -> Result<Self> {
        let mut t = Self::new(config)?;
        t.estimate = Some(TargetEstimate::new(position, Vector3::zeros(), &t.config));
        t.since_seen = 0.0;
        Ok(t)
    }

    pub fn lost(&self) -> bool {
        self.estimate.is_none() || self.since_seen > self.config.lost_persistence
    }

    pub fn predict(&mut self, dt: f64) -> Result<()> {
        if let Some(est) = &self.estimate {
            self.estimate = Some(est.predict(dt)?);
        }
        self.since_seen += dt;
        Ok(())
    }

    /// Gated update with world-frame detections. A lost target is re-acquired
    /// from the first detection instead of being gated against a stale estimate.
    pub fn observe(&mut self, detections: &[Vector3<f64>], quad_position: &Vector3<f64>) -> Option<usize> {
        if detections.is_empty() {
            return None;
        }
        let accepted = match &self.estimate {
            Some(est) if !self.lost() => {
                let (next, idx) = est.gated_update(detections);
                self.estimate = Some(next);
                idx
            }
            _ => {
                let vel = self.estimate.as_ref().map_or_else(Vector3::zeros, |e| e.velocity());
                self.estimate = Some(TargetEstimate::new(detections[0], vel, &self.config));
                Some(0)
            }
        };
        if let Some(i) = accepted {
            self.since_seen = 0.0;
            let d = detections[i] - quad_position;
            if d.x.hypot(d.y) > 1e-9 {
                self.last_bearing = Some(d.y.atan2(d.x));
            }
        }
        accepted
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub chosen: Option<usize>,
    pub trajectory: Option<Trajectory>,
    /// Index into `detections` of the accepted detection.
    pub accepted: Option<usize>,
    pub detections: Vec<Vector3<f64>>,
    pub lost: bool,
    pub last_bearing: Option<f64>,
}

/// Lowest finite predicted cost, ties to the lowest index.
pub fn argmin_cost(candidates: &[PredictionVector]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if c.y_c.is_finite() && best.is_none_or(|(_, b)| c.y_c < b) {
            best = Some((i, c.y_c));
        }
    }
    best.map(|(i, _)| i)
}

/// World positions decoded from cells whose objectness passes the threshold.
pub fn detections_from(
    candidates: &[PredictionVector],
    ctx: &FrameContext<'_>,
    cam: &CameraModel,
    threshold: f64,
) -> Vec<Vector3<f64>> {
    candidates
        .iter()
        .zip(ctx.setup.anchors)
        .filter(|(p, _)| sigmoid(p.y_o) >= threshold)
        .filter_map(|(p, a)| decode_target(p, (a.col, a.row), cam).world)
        .collect()
}

/// Filters detections by objectness, gates them into the tracker and picks the
/// minimum-cost candidate. Only the chosen candidate's trajectory is solved.
pub fn select(
    ctx: &FrameContext<'_>,
    candidates: &[PredictionVector],
    mode: TaskMode,
    cam: &CameraModel,
    tracker: &mut Tracker,
) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate list".into()));
    }
    if candidates.len() != ctx.len() {
        return Err(invalid(format!("{} candidates for {} anchors", candidates.len(), ctx.len())));
    }
    let (detections, accepted) = match mode {
        TaskMode::Tracking => {
            let dets = detections_from(candidates, ctx, cam, tracker.config.objectness_threshold);
            let acc = tracker.observe(&dets, &ctx.setup.start.position);
            (dets, acc)
        }
        TaskMode::Navigation => (Vec::new(), None),
    };
    let chosen = argmin_cost(candidates);
    let trajectory = match chosen {
        Some(i) => Some(ctx.trajectory(i, &candidates[i])?),
        None => None,
    };
    Ok(SelectionResult {
        chosen,
        trajectory,
        accepted,
        detections,
        lost: mode == TaskMode::Tracking && tracker.lost(),
        last_bearing: tracker.last_bearing,
    })
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI {
        r + two_pi
    } else {
        r
    }
}

/// Yaw toward the estimated target, or toward the last bearing when lost,
/// rate-limited to `max_rate * dt` from `previous`.
pub fn plan_yaw(
    estimate: Option<&Vector3<f64>>,
    quad: &Vector3<f64>,
    lost: bool,
    last_bearing: Option<f64>,
    previous: f64,
    max_rate: f64,
    dt: f64,
) -> f64 {
    let desired = if lost {
        last_bearing
    } else {
        estimate.and_then(|t| {
            let d = t - quad;
            (d.x.hypot(d.y) > 1e-9).then(|| d.y.atan2(d.x))
        })
    };
    let Some(desired) = desired else {
        return previous;
    };
    let step = max_rate * dt;
    wrap_angle(previous + wrap_angle(desired - previous).clamp(-step, step))
}
