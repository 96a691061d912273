use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::{Command, GRAVITY};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub mass: f64,
    /// First-order attitude time constant, s.
    pub tau_attitude: f64,
    /// Quadratic drag per axis, N s^2/m^2.
    pub drag: f64,
    /// Constant external force, N.
    pub bias: [f64; 3],
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { mass: 1.0, tau_attitude: 0.06, drag: 0.05, bias: [0.0; 3] }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || self.tau_attitude < 0.0 || self.drag < 0.0 || self.bias.iter().any(|b| !b.is_finite()) {
            return Err(invalid("dynamics need positive mass, non-negative time constant and drag"));
        }
        Ok(())
    }

    /// True lumped disturbance at velocity `v`.
    pub fn disturbance(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let drag = v.map(|c| -self.drag * c * c.abs());
        drag + Vector3::from(self.bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub attitude: Rotation3<f64>,
    pub mass: f64,
}

impl QuadState {
    pub fn hovering(position: Vector3<f64>, yaw: f64, mass: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            attitude: Rotation3::from_axis_angle(&Vector3::z_axis(), yaw),
            mass,
        }
    }

    /// Heading of the body x axis projected on the ground.
    pub fn yaw(&self) -> f64 {
        let x = self.attitude * Vector3::x();
        x.y.atan2(x.x)
    }
}

/// Attitude relaxes toward the command, thrust acts immediately, then
/// semi-implicit Euler on the translational dynamics.
pub fn step(state: &QuadState, cmd: &Command, cfg: &DynamicsConfig, dt: f64) -> QuadState {
    let blend = if cfg.tau_attitude > 0.0 { 1.0 - (-dt / cfg.tau_attitude).exp() } else { 1.0 };
    let from = UnitQuaternion::from_rotation_matrix(&state.attitude);
    let to = UnitQuaternion::from_rotation_matrix(&cmd.attitude);
    let attitude = from.try_slerp(&to, blend, 1e-12).unwrap_or(to).to_rotation_matrix();
    let thrust = attitude * Vector3::new(0.0, 0.0, cmd.thrust);
    let d = cfg.disturbance(&state.velocity);
    let acceleration = thrust / state.mass - Vector3::new(0.0, 0.0, GRAVITY) + d / state.mass;
    let velocity = state.velocity + acceleration * dt;
    let position = state.position + velocity * dt;
    QuadState { position, velocity, acceleration, attitude, mass: state.mass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::flatness_commands;

    #[test]
    fn hover_is_stationary() {
        let cfg = DynamicsConfig { tau_attitude: 0.0, drag: 0.0, ..Default::default() };
        let mut s = QuadState::hovering(Vector3::new(1.0, 2.0, 3.0), 0.4, 1.0);
        let cmd = Command::hover(1.0, 0.4);
        for _ in 0..1000 {
            s = step(&s, &cmd, &cfg, 0.005);
        }
        assert!((s.position - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn constant_pitch_accelerates_at_g_tan() {
        let cfg = DynamicsConfig { drag: 0.0, ..Default::default() };
        let theta: f64 = 0.2;
        let cmd = flatness_commands(&Vector3::new(GRAVITY * theta.tan(), 0.0, 0.0), 0.0, &Vector3::zeros(), 1.0, None).unwrap();
        let mut s = QuadState::hovering(Vector3::zeros(), 0.0, 1.0);
        for _ in 0..400 {
            s = step(&s, &cmd, &cfg, 0.005);
        }
        let expected = GRAVITY * theta.tan();
        assert!((s.acceleration.x - expected).abs() < 0.01 * expected);
        assert!(s.acceleration.z.abs() < 1e-9);
    }
}
