//! Differential-flatness command synthesis and the high-gain disturbance observer.

use std::io::Write;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const GRAVITY: f64 = 9.8;
/// Smallest thrust-direction norm accepted, m/s^2.
pub const MIN_THRUST_ACC: f64 = 1e-6;

/// Desired attitude (world from body) and collective thrust.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Command {
    pub attitude: Rotation3<f64>,
    pub thrust: f64,
}

impl Command {
    pub fn hover(mass: f64, yaw: f64) -> Self {
        Self { attitude: Rotation3::from_axis_angle(&Vector3::z_axis(), yaw), thrust: mass * GRAVITY }
    }

    /// World-frame thrust force `R F_c e_z`.
    pub fn thrust_vector(&self) -> Vector3<f64> {
        self.attitude * Vector3::new(0.0, 0.0, self.thrust)
    }
}

/// Attitude and thrust that realize `acc_des` under the estimated disturbance
/// `d_hat` (newtons). `previous_y` is used when the heading is parallel to the
/// thrust axis.
pub fn flatness_commands(
    acc_des: &Vector3<f64>,
    yaw: f64,
    d_hat: &Vector3<f64>,
    mass: f64,
    previous_y: Option<&Vector3<f64>>,
) -> Result<Command> {
    if !(mass > 0.0) || !yaw.is_finite() {
        return Err(invalid("mass must be positive and yaw finite"));
    }
    let f = acc_des - d_hat / mass + Vector3::new(0.0, 0.0, GRAVITY);
    let n = f.norm();
    if !(n > MIN_THRUST_ACC) {
        return Err(Error::DegenerateThrust(n));
    }
    let z = f / n;
    let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let cross = z.cross(&heading);
    let y = if cross.norm() > 1e-9 {
        cross.normalize()
    } else {
        let fallback = previous_y.copied().unwrap_or_else(|| Vector3::new(-yaw.sin(), yaw.cos(), 0.0));
        let proj = fallback - z * z.dot(&fallback);
        if proj.norm() < 1e-9 {
            return Err(Error::DegenerateThrust(n));
        }
        proj.normalize()
    };
    let x = y.cross(&z);
    Ok(Command { attitude: Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z])), thrust: mass * n })
}

/// `(1/m) R F_c e_z - g e_z + d/m`.
pub fn realized_acceleration(cmd: &Command, disturbance: &Vector3<f64>, mass: f64) -> Vector3<f64> {
    cmd.thrust_vector() / mass - Vector3::new(0.0, 0.0, GRAVITY) + disturbance / mass
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverConfig {
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub zeta: f64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self { alpha_1: 2.0, alpha_2: 1.0, zeta: 0.05 }
    }
}

/// Momentum-innovation disturbance observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObserverState {
    /// Momentum estimate, kg m/s.
    pub z1_hat: Vector3<f64>,
    /// Lumped disturbance estimate, N.
    pub z2_hat: Vector3<f64>,
    pub config: ObserverConfig,
    pub mass: f64,
    pub gravity: f64,
}

impl ObserverState {
    pub fn new(config: ObserverConfig, mass: f64, velocity: &Vector3<f64>) -> Result<Self> {
        if !(config.alpha_1 > 0.0 && config.alpha_2 > 0.0) {
            return Err(invalid("observer gains must be positive"));
        }
        if !(config.zeta > 0.0 && config.zeta < 1.0) {
            return Err(invalid("observer zeta must lie in (0, 1)"));
        }
        if !(mass > 0.0) {
            return Err(invalid("mass must be positive"));
        }
        Ok(Self { z1_hat: velocity * mass, z2_hat: Vector3::zeros(), config, mass, gravity: GRAVITY })
    }

    pub fn disturbance(&self) -> Vector3<f64> {
        self.z2_hat
    }

    /// One forward-Euler step. Returns `true` when `dt > zeta / 2`, where the
    /// discretization loses its stability margin.
    pub fn step(&mut self, v_meas: &Vector3<f64>, cmd: &Command, dt: f64) -> Result<bool> {
        if !(dt > 0.0) {
            return Err(invalid("observer step must be positive"));
        }
        let c = self.config;
        let z1 = v_meas * self.mass;
        let innov = z1 - self.z1_hat;
        let weight = Vector3::new(0.0, 0.0, self.mass * self.gravity);
        let dz1 = cmd.thrust_vector() - weight + self.z2_hat + innov * (c.alpha_1 / c.zeta);
        let dz2 = innov * (c.alpha_2 / (c.zeta * c.zeta));
        self.z1_hat += dz1 * dt;
        self.z2_hat += dz2 * dt;
        Ok(dt > c.zeta / 2.0)
    }
}

/// One row of the acceleration-domain telemetry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TelemetryRow {
    pub time: f64,
    pub desired: Vector3<f64>,
    /// `(R F_c e_z) / m - g e_z`.
    pub attitude: Vector3<f64>,
    /// `d_hat / m`.
    pub disturbance: Vector3<f64>,
}

impl TelemetryRow {
    pub fn new(time: f64, acc_des: &Vector3<f64>, cmd: &Command, d_hat: &Vector3<f64>, mass: f64) -> Self {
        Self {
            time,
            desired: *acc_des,
            attitude: cmd.thrust_vector() / mass - Vector3::new(0.0, 0.0, GRAVITY),
            disturbance: d_hat / mass,
        }
    }
}

pub fn write_telemetry(rows: &[TelemetryRow], w: impl Write) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "time,des_x,des_y,des_z,att_x,att_y,att_z,dist_x,dist_y,dist_z")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.time, r.desired.x, r.desired.y, r.desired.z, r.attitude.x, r.attitude.y, r.attitude.z, r.disturbance.x,
            r.disturbance.y, r.disturbance.z
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hover_is_identity() {
        let c = flatness_commands(&Vector3::zeros(), 0.0, &Vector3::zeros(), 1.5, None).unwrap();
        assert!((c.attitude.matrix() - Matrix3::identity()).norm() < 1e-15);
        assert!((c.thrust - 1.5 * GRAVITY).abs() < 1e-12);
    }

    #[test]
    fn forward_acceleration_pitches() {
        let a = 3.0;
        let c = flatness_commands(&Vector3::new(a, 0.0, 0.0), 0.0, &Vector3::zeros(), 1.0, None).unwrap();
        let z = c.attitude * Vector3::z();
        assert!((z - Vector3::new(a, 0.0, GRAVITY).normalize()).norm() < 1e-12);
        assert!((z.x.atan2(z.z) - (a / GRAVITY).atan()).abs() < 1e-12);
    }

    #[test]
    fn free_fall_is_rejected() {
        let r = flatness_commands(&Vector3::new(0.0, 0.0, -GRAVITY), 0.0, &Vector3::zeros(), 1.0, None);
        assert!(matches!(r, Err(Error::DegenerateThrust(_))));
    }

    #[test]
    fn horizontal_thrust_along_heading_uses_previous_axis() {
        // F = (1, 0, 0) exactly along a zero yaw heading
        let acc = Vector3::new(1.0, 0.0, -GRAVITY);
        let prev = Vector3::new(0.0, 1.0, 0.0);
        let c = flatness_commands(&acc, 0.0, &Vector3::zeros(), 1.0, Some(&prev)).unwrap();
        assert!((c.attitude * Vector3::y() - prev).norm() < 1e-12);
        assert!((realized_acceleration(&c, &Vector3::zeros(), 1.0) - acc).norm() < 1e-12);
    }

    #[test]
    fn observer_equilibrium_holds() {
        let mut obs = ObserverState::new(ObserverConfig::default(), 1.0, &Vector3::zeros()).unwrap();
        let cmd = Command::hover(1.0, 0.0);
        for _ in 0..1000 {
            assert!(!obs.step(&Vector3::zeros(), &cmd, 0.005).unwrap());
        }
        assert!(obs.disturbance().norm() < 1e-12);
        assert!(obs.step(&Vector3::zeros(), &cmd, 0.03).unwrap());
    }
}
