use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{Rotation3, Vector3};

use crate::environment::EsdfGrid;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FailureClass {
    None,
    /// Collision or an emergency stop the planner could not recover from.
    PlanningFailed,
    /// The target left the field of view, stayed occluded or escaped.
    TargetMissed,
    /// The goal cannot be reached, detected before flying.
    Unreachable,
}

impl FailureClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureClass::None => "none",
            FailureClass::PlanningFailed => "planning_failed",
            FailureClass::TargetMissed => "target_missed",
            FailureClass::Unreachable => "unreachable",
        }
    }
}

/// One control-rate sample of an episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub time: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub acc_des: Vector3<f64>,
    pub yaw: f64,
    pub thrust: f64,
    pub disturbance: Vector3<f64>,
    pub target: Option<Vector3<f64>>,
    pub estimate: Option<Vector3<f64>>,
    pub target_visible: bool,
    pub detected: bool,
    pub chosen: Option<usize>,
    pub cost: f64,
    pub estop: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeLog {
    pub dt: f64,
    pub rows: Vec<LogRow>,
    pub latencies_ms: Vec<f64>,
    pub estops: usize,
    pub success: bool,
    pub failure: Option<FailureClass>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub failure: FailureClass,
    pub min_clearance: f64,
    /// Integral of squared jerk of the executed motion.
    pub smoothness: f64,
    pub fov_fraction: f64,
    /// Target position in the follower's yaw frame, `(forward, left)`.
    pub relative_positions: Vec<[f64; 2]>,
    pub target_distances: Vec<f64>,
    pub mean_latency_ms: f64,
    pub path_length: f64,
    pub duration: f64,
    pub estops: usize,
    pub final_position: Vector3<f64>,
}

impl EpisodeMetrics {
    /// Fraction of planar target distances inside `[lo, hi]`.
    pub fn distance_band_fraction(&self, lo: f64, hi: f64) -> f64 {
        if self.target_distances.is_empty() {
            return 0.0;
        }
        let n = self.target_distances.iter().filter(|d| (lo..=hi).contains(*d)).count();
        n as f64 / self.target_distances.len() as f64
    }

    /// Everything except wall-clock latency, for reproducibility checks.
    pub fn deterministic_eq(&self, other: &Self) -> bool {
        let a = Self { mean_latency_ms: 0.0, ..self.clone() };
        let b = Self { mean_latency_ms: 0.0, ..other.clone() };
        a == b
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "success = {}", self.success).ok();
        writeln!(s, "failure = \"{}\"", self.failure.as_str()).ok();
        writeln!(s, "min_clearance = {}", self.min_clearance).ok();
        writeln!(s, "smoothness = {}", self.smoothness).ok();
        writeln!(s, "fov_fraction = {}", self.fov_fraction).ok();
        writeln!(s, "mean_latency_ms = {}", self.mean_latency_ms).ok();
        writeln!(s, "path_length = {}", self.path_length).ok();
        writeln!(s, "duration = {}", self.duration).ok();
        writeln!(s, "estops = {}", self.estops).ok();
        s
    }
}

/// Smoothness, clearance, visibility and relative-position statistics of a log.
/// Success and failure class are taken from the log.
pub fn compute_metrics(log: &EpisodeLog, grid: &EsdfGrid) -> EpisodeMetrics {
    let rows = &log.rows;
    let dt = log.dt;
    let smoothness = rows
        .windows(2)
        .map(|w| {
            let jerk = (w[1].acceleration - w[0].acceleration) / dt;
            jerk.norm_squared() * dt
        })
        .sum();
    let min_clearance = rows.iter().map(|r| grid.distance_at(&r.position)).fold(f64::INFINITY, f64::min);
    let with_target: Vec<&LogRow> = rows.iter().filter(|r| r.target.is_some()).collect();
    let fov_fraction = if with_target.is_empty() {
        0.0
    } else {
        with_target.iter().filter(|r| r.target_visible).count() as f64 / with_target.len() as f64
    };
    let relative_positions = with_target
        .iter()
        .map(|r| {
            let rel = Rotation3::from_axis_angle(&Vector3::z_axis(), -r.yaw) * (r.target.expect("filtered") - r.position);
            [rel.x, rel.y]
        })
        .collect();
    let target_distances = with_target
        .iter()
        .map(|r| {
            let d = r.target.expect("filtered") - r.position;
            d.x.hypot(d.y)
        })
        .collect();
    let path_length = rows.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum();
    let mean_latency_ms = if log.latencies_ms.is_empty() {
        0.0
    } else {
        log.latencies_ms.iter().sum::<f64>() / log.latencies_ms.len() as f64
    };
    EpisodeMetrics {
        success: log.success,
        failure: log.failure.unwrap_or(FailureClass::None),
        min_clearance,
        smoothness,
        fov_fraction,
        relative_positions,
        target_distances,
        mean_latency_ms,
        path_length,
        duration: rows.last().map_or(0.0, |r| r.time),
        estops: log.estops,
        final_position: rows.last().map_or_else(Vector3::zeros, |r| r.position),
    }
}

fn opt_vec(v: &Option<Vector3<f64>>) -> String {
    match v {
        Some(v) => format!("{},{},{}", v.x, v.y, v.z),
        None => ",,".into(),
    }
}

pub fn write_log_csv(log: &EpisodeLog, w: impl Write) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(
        w,
        "time,px,py,pz,vx,vy,vz,ax,ay,az,des_ax,des_ay,des_az,yaw,thrust,dist_x,dist_y,dist_z,\
         tx,ty,tz,ex,ey,ez,visible,detected,chosen,cost,estop"
    )?;
    for r in &log.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.time,
            r.position.x,
            r.position.y,
            r.position.z,
            r.velocity.x,
            r.velocity.y,
            r.velocity.z,
            r.acceleration.x,
            r.acceleration.y,
            r.acceleration.z,
            r.acc_des.x,
            r.acc_des.y,
            r.acc_des.z,
            r.yaw,
            r.thrust,
            r.disturbance.x,
            r.disturbance.y,
            r.disturbance.z,
            opt_vec(&r.target),
            opt_vec(&r.estimate),
            r.target_visible as u8,
            r.detected as u8,
            r.chosen.map_or(String::new(), |c| c.to_string()),
            r.cost,
            r.estop as u8
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_relative_positions(metrics: &EpisodeMetrics, w: impl Write) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "forward,left")?;
    for p in &metrics.relative_positions {
        writeln!(w, "{},{}", p[0], p[1])?;
    }
    w.flush()?;
    Ok(())
}
