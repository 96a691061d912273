use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use super::detection::visible_cell;
use super::frame::FrameSetup;
use crate::environment::EsdfGrid;
use crate::primitives::spherical_point;

/// Per-cell feature length: 9 ray depths, local velocity and acceleration,
/// goal direction, goal range and the target flag.
pub const FEATURE_DIM: usize = 20;
const RAYS_PER_AXIS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Ray depths saturate here.
    pub max_range: f64,
    /// A ray stops when the field drops below this distance.
    pub hit_distance: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { max_range: 10.0, hit_distance: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrustumFeatures {
    /// Row-major over grid cells.
    pub cells: Vec<[f64; FEATURE_DIM]>,
}

impl FrustumFeatures {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Free distance along a ray by sphere tracing the field, capped at `max_range`.
pub fn ray_depth(grid: &EsdfGrid, origin: &Vector3<f64>, dir: &Vector3<f64>, cfg: &FeatureConfig) -> f64 {
    let min_step = 0.5 * grid.resolution();
    let mut s = 0.0;
    while s < cfg.max_range {
        let d = grid.distance_at(&(origin + dir * s));
        if d < cfg.hit_distance {
            return s;
        }
        s += (d - cfg.hit_distance).max(min_step);
    }
    cfg.max_range
}

pub fn extract_features(
    setup: &FrameSetup<'_>,
    target: Option<&Vector3<f64>>,
    cam: Option<&CameraModel>,
    cfg: &FeatureConfig,
) -> FrustumFeatures {
    let lattice = setup.lattice;
    let origin = setup.start.position;
    let target_cell = match (target, cam) {
        (Some(t), Some(c)) => visible_cell(t, c, Some(setup.grid)).map(|cell| (cell, c.to_optical(t).z)),
        _ => None,
    };
    let vel_n = setup.start.velocity / setup.scale.velocity_bound();
    let acc_n = setup.start.acceleration / setup.scale.acceleration_bound();
    let cells = setup
        .anchors
        .iter()
        .map(|anchor| {
            let mut f = [0.0; FEATURE_DIM];
            let mut k = 0;
            for a in 0..RAYS_PER_AXIS {
                for b in 0..RAYS_PER_AXIS {
                    let off = |i: usize| (i as f64 + 0.5) / RAYS_PER_AXIS as f64 - 0.5;
                    let theta = anchor.theta + off(a) * lattice.pitch_theta();
                    let phi = anchor.phi + off(b) * lattice.pitch_phi();
                    let dir = setup.world_from_camera * spherical_point(1.0, theta, phi);
                    f[k] = ray_depth(setup.grid, &origin, &dir, cfg) / cfg.max_range;
                    k += 1;
                }
            }
            let local_from_world = (setup.world_from_camera * anchor.camera_from_local()).inverse();
            let v = local_from_world * vel_n;
            let acc = local_from_world * acc_n;
            f[9..12].copy_from_slice(v.as_slice());
            f[12..15].copy_from_slice(acc.as_slice());
            if let Some(g) = setup.goal_point {
                let rel = local_from_world * (g - origin);
                let n = rel.norm();
                if n > 1e-9 {
                    f[15..18].copy_from_slice((rel / n).as_slice());
                }
                f[18] = (n / (2.0 * lattice.radius)).min(2.0);
            }
            f[19] = match target_cell {
                Some(((u, v), depth)) if (u, v) == (anchor.col, anchor.row) => depth / cfg.max_range,
                _ => -1.0,
            };
            f
        })
        .collect();
    FrustumFeatures { cells }
}
