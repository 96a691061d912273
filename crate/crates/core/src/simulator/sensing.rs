use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::environment::EsdfGrid;
use crate::error::{invalid, Result};
use crate::policy::{visible_cell, CameraModel};
use crate::primitives::{LatticeConfig, PredictionVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionNoise {
    /// Pixel noise standard deviation, px.
    pub pixel_std: f64,
    /// Multiplicative depth noise standard deviation.
    pub depth_std: f64,
    pub false_negative_rate: f64,
    pub max_depth: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        Self { pixel_std: 1.0, depth_std: 0.02, false_negative_rate: 0.05, max_depth: 15.0 }
    }
}

impl DetectionNoise {
    pub fn noiseless() -> Self {
        Self { pixel_std: 0.0, depth_std: 0.0, false_negative_rate: 0.0, max_depth: f64::INFINITY }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_std >= 0.0 && self.depth_std >= 0.0 && self.max_depth > 0.0) {
            return Err(invalid("detection noise must be non-negative with positive range"));
        }
        if !(0.0..=1.0).contains(&self.false_negative_rate) {
            return Err(invalid("false-negative rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub world: Vector3<f64>,
}

/// Noisy pixel-plus-depth detection of a visible target, unprojected to the world.
pub fn simulate_detection(
    target: &Vector3<f64>,
    cam: &CameraModel,
    grid: Option<&EsdfGrid>,
    noise: &DetectionNoise,
    rng: &mut impl Rng,
) -> Option<Detection> {
    visible_cell(target, cam, grid)?;
    let proj = cam.project(target)?;
    if proj.depth > noise.max_depth {
        return None;
    }
    // Draws happen in a fixed order so runs stay reproducible.
    let miss = rng.random::<f64>() < noise.false_negative_rate;
    let gauss = |rng: &mut dyn rand::RngCore, std: f64| {
        if std > 0.0 {
            Normal::new(0.0, std).expect("validated").sample(rng)
        } else {
            0.0
        }
    };
    let u = proj.u + gauss(rng, noise.pixel_std);
    let v = proj.v + gauss(rng, noise.pixel_std);
    let depth = proj.depth * (1.0 + gauss(rng, noise.depth_std));
    if miss || !(depth > 0.0) {
        return None;
    }
    let k = &cam.intrinsics;
    let u = u.clamp(0.0, k.width as f64 - 1e-6);
    let v = v.clamp(0.0, k.height as f64 - 1e-6);
    Some(Detection { u, v, depth, world: cam.unproject(u, v, depth) })
}

const OBJECTNESS_LOGIT: f64 = 6.0;

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Writes a detection into the detection channels of the candidate set, the
/// way a detection head would report it: the containing cell gets high
/// objectness and sub-cell offsets, every other cell low objectness.
pub fn encode_detection(
    candidates: &mut [PredictionVector],
    detection: Option<&Detection>,
    cam: &CameraModel,
    lattice: &LatticeConfig,
) {
    for c in candidates.iter_mut() {
        c.y_o = -OBJECTNESS_LOGIT;
        c.y_du = 0.0;
        c.y_dv = 0.0;
        c.y_d = 0.0;
    }
    let Some(det) = detection else {
        return;
    };
    let ds = cam.intrinsics.ds as f64;
    let col = ((det.u / ds).floor() as usize).min(lattice.m_phi - 1);
    let row = ((det.v / ds).floor() as usize).min(lattice.m_theta - 1);
    let c = &mut candidates[lattice.cell_index(col, row)];
    c.y_o = OBJECTNESS_LOGIT;
    c.y_du = logit(det.u / ds - col as f64);
    c.y_dv = logit(det.v / ds - row as f64);
    c.y_d = det.depth;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Intrinsics;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn behind_camera_is_not_detected() {
        let cam = CameraModel::level(Intrinsics::default(), Vector3::zeros(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(simulate_detection(&Vector3::new(-5.0, 0.0, 0.0), &cam, None, &DetectionNoise::noiseless(), &mut rng).is_none());
    }

    #[test]
    fn noiseless_detection_round_trips() {
        let cam = CameraModel::level(Intrinsics::default(), Vector3::new(1.0, 1.0, 2.0), 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let target = Vector3::new(6.0, 3.0, 2.4);
        let det = simulate_detection(&target, &cam, None, &DetectionNoise::noiseless(), &mut rng).unwrap();
        assert!((det.world - target).norm() < 1e-9);
    }
}
