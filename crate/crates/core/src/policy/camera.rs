use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::primitives::LatticeConfig;

/// Rotation taking optical-frame vectors (z forward, x right, y down) to the
/// camera body frame (x forward, y left, z up).
pub fn camera_from_optical() -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    ))
}

/// Pinhole intrinsics plus the downsampling rate that maps pixels to grid cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub ds: u32,
}

impl Intrinsics {
    /// Image of `m_phi * ds` by `m_theta * ds` pixels whose field of view
    /// matches the lattice.
    pub fn for_lattice(cfg: &LatticeConfig, ds: u32) -> Result<Self> {
        cfg.validate()?;
        if ds == 0 {
            return Err(invalid("downsample rate must be positive"));
        }
        let width = cfg.m_phi as u32 * ds;
        let height = cfg.m_theta as u32 * ds;
        let cx = width as f64 / 2.0;
        let cy = height as f64 / 2.0;
        Ok(Self {
            fx: cx / (cfg.fov_h / 2.0).tan(),
            fy: cy / (cfg.fov_v / 2.0).tan(),
            cx,
            cy,
            width,
            height,
            ds,
        })
    }

    pub fn validate(&self, cfg: &LatticeConfig) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.ds == 0 {
            return Err(invalid("focal lengths and downsample rate must be positive"));
        }
        if self.width != cfg.m_phi as u32 * self.ds || self.height != cfg.m_theta as u32 * self.ds {
            return Err(invalid(format!(
                "image {}x{} with ds {} does not tile a {}x{} lattice",
                self.width, self.height, self.ds, cfg.m_phi, cfg.m_theta
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self::for_lattice(&LatticeConfig::default(), 32).expect("default lattice is valid")
    }
}

/// A pixel with its optical depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    /// World-from-optical rigid transform.
    pub pose: Isometry3<f64>,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, pose: Isometry3<f64>) -> Self {
        Self { intrinsics, pose }
    }

    /// Camera mounted level at `position` looking along `yaw`.
    pub fn level(intrinsics: Intrinsics, position: Vector3<f64>, yaw: f64) -> Self {
        let world_from_camera = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        Self::from_body(intrinsics, position, world_from_camera)
    }

    pub fn from_body(intrinsics: Intrinsics, position: Vector3<f64>, world_from_camera: Rotation3<f64>) -> Self {
        let rot = world_from_camera * camera_from_optical();
        Self { intrinsics, pose: Isometry3::from_parts(Translation3::from(position), UnitQuaternion::from_rotation_matrix(&rot)) }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    /// Rotation from the camera body frame (x forward) to the world.
    pub fn world_from_camera(&self) -> Rotation3<f64> {
        self.pose.rotation.to_rotation_matrix() * camera_from_optical().inverse()
    }

    pub fn to_optical(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.pose.inverse_transform_point(&Point3::from(*world)).coords
    }

    pub fn from_optical(&self, optical: &Vector3<f64>) -> Vector3<f64> {
        self.pose.transform_point(&Point3::from(*optical)).coords
    }

    /// Pinhole projection; `None` behind the image plane.
    pub fn project(&self, world: &Vector3<f64>) -> Option<Projection> {
        let pc = self.to_optical(world);
        if !(pc.z > 1e-9) {
            return None;
        }
        let k = &self.intrinsics;
        Some(Projection { u: k.fx * pc.x / pc.z + k.cx, v: k.fy * pc.y / pc.z + k.cy, depth: pc.z })
    }

    /// Optical-frame point `C^-1 d [u, v, 1]`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        Vector3::new(depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth)
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.from_optical(&self.back_project(u, v, depth))
    }

    pub fn in_image(&self, p: &Projection) -> bool {
        let k = &self.intrinsics;
        p.u >= 0.0 && p.u < k.width as f64 && p.v >= 0.0 && p.v < k.height as f64
    }

    /// Grid cell `(u_grid, v_grid)` containing a pixel, if it is inside the image.
    pub fn cell_of(&self, p: &Projection) -> Option<(usize, usize)> {
        if !self.in_image(p) {
            return None;
        }
        let ds = self.intrinsics.ds as f64;
        Some(((p.u / ds).floor() as usize, (p.v / ds).floor() as usize))
    }
}
