//! Reference implementations the fast paths are checked against.
#![allow(dead_code)]

use nalgebra::Vector3;
use primtrack::environment::{GridGeometry, PointCloud};

/// Distance field by exhaustive search over occupied voxels.
pub fn brute_force_esdf(cloud: &PointCloud, geometry: &GridGeometry, d_trunc: f64) -> Vec<f64> {
    let occupied: Vec<[usize; 3]> = cloud.points().iter().filter_map(|p| geometry.nearest_voxel(p)).collect();
    let [nx, ny, nz] = geometry.dims;
    let mut out = vec![0.0; geometry.len()];
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let best = occupied
                    .iter()
                    .map(|o| {
                        let d = |a: usize, b: usize| (a as f64 - b as f64).powi(2);
                        d(i, o[0]) + d(j, o[1]) + d(k, o[2])
                    })
                    .fold(f64::INFINITY, f64::min);
                out[geometry.index(i, j, k)] = (best.sqrt() * geometry.resolution).min(d_trunc);
            }
        }
    }
    out
}

/// Kalman update written out from the textbook equations.
pub fn reference_update(
    x: &nalgebra::Vector6<f64>,
    p: &nalgebra::Matrix6<f64>,
    z: &Vector3<f64>,
    r: f64,
) -> (nalgebra::Vector6<f64>, nalgebra::Matrix6<f64>) {
    let mut h = nalgebra::Matrix3x6::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    let s = h * p * h.transpose() + nalgebra::Matrix3::identity() * r * r;
    let k = p * h.transpose() * s.try_inverse().unwrap();
    let x1 = x + k * (z - h * x);
    let p1 = (nalgebra::Matrix6::identity() - k * h) * p;
    (x1, p1)
}
