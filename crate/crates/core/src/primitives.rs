//! Spherical state-lattice anchors over the camera field of view and the
//! decoding of raw per-cell predictions into refined end states.
//!
//! Camera frame: x forward, y left, z up. Anchor `(col, row)` corresponds to
//! image grid cell `(u_grid, v_grid) = (col, row)`, so azimuth decreases with
//! the column (image right is camera -y) and polar angle decreases with the row.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Number of raw scalars predicted per grid cell.
pub const PREDICTION_DIM: usize = 14;
/// Raw variables that shape the trajectory: offsets (3), end velocity (3), end acceleration (3).
pub const TRAJ_VARS: usize = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeConfig {
    /// Azimuth (horizontal) cell count.
    pub m_phi: usize,
    /// Polar (vertical) cell count.
    pub m_theta: usize,
    pub fov_h: f64,
    pub fov_v: f64,
    /// Planning radius `r` in meters.
    pub radius: f64,
    pub d_theta: f64,
    pub d_phi: f64,
}

/// Offset range as a multiple of the half pitch of one grid cell.
pub const OFFSET_RANGE_FACTOR: f64 = 1.25;

/// Vertical FOV of a 16:9 sensor with a 90 degree horizontal FOV.
pub fn default_fov_v() -> f64 {
    2.0 * ((45.0_f64).to_radians().tan() * 9.0 / 16.0).atan()
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self::new(5, 3, 90.0_f64.to_radians(), default_fov_v(), 5.0)
    }
}

impl LatticeConfig {
    /// Lattice with offset ranges derived from the grid pitch.
    pub fn new(m_phi: usize, m_theta: usize, fov_h: f64, fov_v: f64, radius: f64) -> Self {
        let m_phi_f = m_phi.max(1) as f64;
        let m_theta_f = m_theta.max(1) as f64;
        Self {
            m_phi,
            m_theta,
            fov_h,
            fov_v,
            radius,
            d_phi: OFFSET_RANGE_FACTOR * 0.5 * fov_h / m_phi_f,
            d_theta: OFFSET_RANGE_FACTOR * 0.5 * fov_v / m_theta_f,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.m_phi * self.m_theta
    }

    pub fn pitch_phi(&self) -> f64 {
        self.fov_h / self.m_phi as f64
    }

    pub fn pitch_theta(&self) -> f64 {
        self.fov_v / self.m_theta as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_phi == 0 || self.m_theta == 0 {
            return Err(invalid("lattice needs at least one cell per direction"));
        }
        let fov_ok = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        if !fov_ok(self.fov_h) || !fov_ok(self.fov_v) {
            return Err(invalid(format!("degenerate FOV ({}, {})", self.fov_h, self.fov_v)));
        }
        if !(self.radius > 0.0) {
            return Err(invalid("planning radius must be positive"));
        }
        if !(self.d_phi > 0.5 * self.pitch_phi()) || !(self.d_theta > 0.5 * self.pitch_theta()) {
            return Err(invalid("offset ranges must exceed half the grid pitch"));
        }
        Ok(())
    }

    /// Linear cell index of grid cell `(col, row)`.
    pub fn cell_index(&self, col: usize, row: usize) -> usize {
        row * self.m_phi + col
    }

    /// Inverse of [`LatticeConfig::cell_index`].
    pub fn cell_coords(&self, index: usize) -> (usize, usize) {
        (index % self.m_phi, index / self.m_phi)
    }
}

/// One prior primitive: a point on the planning sphere at a grid-cell center.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveAnchor {
    pub col: usize,
    pub row: usize,
    pub theta: f64,
    pub phi: f64,
    pub radius: f64,
    pub endpoint: Vector3<f64>,
}

impl PrimitiveAnchor {
    /// Rotation from the cell-local frame (x toward the cell center) to the camera frame.
    pub fn camera_from_local(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.phi)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), -self.theta)
    }
}

pub fn spherical_point(radius: f64, theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(radius * ct * cp, radius * ct * sp, radius * st)
}

/// Columns: d/dtheta, d/dphi, d/dr of [`spherical_point`].
pub fn spherical_jacobian(radius: f64, theta: f64, phi: f64) -> Matrix3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Matrix3::from_columns(&[
        Vector3::new(-radius * st * cp, -radius * st * sp, radius * ct),
        Vector3::new(-radius * ct * sp, radius * ct * cp, 0.0),
        Vector3::new(ct * cp, ct * sp, st),
    ])
}

/// Anchors at the centers of a uniform partition of the FOV, row-major.
pub fn build_library(cfg: &LatticeConfig) -> Result<Vec<PrimitiveAnchor>> {
    cfg.validate()?;
    let mut anchors = Vec::with_capacity(cfg.cell_count());
    for row in 0..cfg.m_theta {
        let theta = 0.5 * cfg.fov_v - (row as f64 + 0.5) * cfg.pitch_theta();
        for col in 0..cfg.m_phi {
            let phi = 0.5 * cfg.fov_h - (col as f64 + 0.5) * cfg.pitch_phi();
            anchors.push(PrimitiveAnchor {
                col,
                row,
                theta,
                phi,
                radius: cfg.radius,
                endpoint: spherical_point(cfg.radius, theta, phi),
            });
        }
    }
    Ok(anchors)
}

/// The 14 raw network-style outputs of one grid cell.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PredictionVector {
    pub y_theta: f64,
    pub y_phi: f64,
    pub y_r: f64,
    pub y_v: Vector3<f64>,
    pub y_a: Vector3<f64>,
    pub y_c: f64,
    pub y_o: f64,
    pub y_du: f64,
    pub y_dv: f64,
    pub y_d: f64,
}

impl PredictionVector {
    pub fn to_array(&self) -> [f64; PREDICTION_DIM] {
        [
            self.y_theta, self.y_phi, self.y_r, self.y_v.x, self.y_v.y, self.y_v.z, self.y_a.x, self.y_a.y,
            self.y_a.z, self.y_c, self.y_o, self.y_du, self.y_dv, self.y_d,
        ]
    }

    pub fn from_slice(y: &[f64]) -> Self {
        assert!(y.len() >= PREDICTION_DIM, "prediction needs {PREDICTION_DIM} values");
        Self {
            y_theta: y[0],
            y_phi: y[1],
            y_r: y[2],
            y_v: Vector3::new(y[3], y[4], y[5]),
            y_a: Vector3::new(y[6], y[7], y[8]),
            y_c: y[9],
            y_o: y[10],
            y_du: y[11],
            y_dv: y[12],
            y_d: y[13],
        }
    }

    /// The nine trajectory-shaping variables.
    pub fn trajectory_vars(&self) -> [f64; TRAJ_VARS] {
        let a = self.to_array();
        std::array::from_fn(|i| a[i])
    }

    pub fn set_trajectory_vars(&mut self, vars: &[f64; TRAJ_VARS]) {
        self.y_theta = vars[0];
        self.y_phi = vars[1];
        self.y_r = vars[2];
        self.y_v = Vector3::new(vars[3], vars[4], vars[5]);
        self.y_a = Vector3::new(vars[6], vars[7], vars[8]);
    }
}

/// Refined spherical coordinates of an endpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinedEndpoint {
    pub theta: f64,
    pub phi: f64,
    pub radius: f64,
    /// Camera-frame position.
    pub position: Vector3<f64>,
}

pub fn decode_offsets(anchor: &PrimitiveAnchor, pred: &PredictionVector, cfg: &LatticeConfig) -> RefinedEndpoint {
    let theta = anchor.theta + pred.y_theta.tanh() * cfg.d_theta;
    let phi = anchor.phi + pred.y_phi.tanh() * cfg.d_phi;
    let radius = anchor.radius + pred.y_r.tanh() * anchor.radius;
    RefinedEndpoint { theta, phi, radius, position: spherical_point(radius, theta, phi) }
}

/// End velocity and acceleration in the cell-local frame.
pub fn decode_derivatives(pred: &PredictionVector, scale: &SpeedScale) -> (Vector3<f64>, Vector3<f64>) {
    (
        pred.y_v.map(f64::tanh) * scale.velocity_bound(),
        pred.y_a.map(f64::tanh) * scale.acceleration_bound(),
    )
}

/// Speed scaling between the normalized planning space and the physical run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedScale {
    pub alpha: f64,
    pub v_max: f64,
    pub a_max: f64,
}

impl SpeedScale {
    pub fn new(alpha: f64, v_max: f64, a_max: f64) -> Result<Self> {
        if !(alpha > 0.0 && v_max > 0.0 && a_max > 0.0) {
            return Err(invalid("speed scales must be positive"));
        }
        Ok(Self { alpha, v_max, a_max })
    }

    pub fn velocity_bound(&self) -> f64 {
        self.alpha * self.v_max
    }

    pub fn acceleration_bound(&self) -> f64 {
        self.alpha * self.alpha * self.a_max
    }
}

/// Fixed execution time `T = 2 r / (alpha v_max)`.
pub fn horizon(cfg: &LatticeConfig, alpha: f64, v_max: f64) -> Result<f64> {
    if !(alpha > 0.0 && v_max > 0.0 && cfg.radius > 0.0) {
        return Err(invalid("horizon needs positive radius, alpha and v_max"));
    }
    Ok(2.0 * cfg.radius / (alpha * v_max))
}
