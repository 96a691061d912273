use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{invalid, Result};

/// Homogeneous Poisson forest of vertical cylindrical trunks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestSpec {
    /// Trees per square meter.
    pub intensity: f64,
    /// Lower-left corner of the forested area (x, y).
    pub origin: [f64; 2],
    /// Extent along x and y in meters.
    pub area: [f64; 2],
    pub trunk_radius: f64,
    pub trunk_height: f64,
    pub seed: u64,
    /// No trunk may intrude into this radius around any clear point.
    pub spawn_clear_radius: f64,
    pub clear_points: Vec<[f64; 2]>,
    /// Point spacing used to sample trunk and ground surfaces.
    pub sample_spacing: f64,
    /// Add a ground plane at z = 0.
    pub ground: bool,
}

impl Default for ForestSpec {
    fn default() -> Self {
        Self {
            intensity: 1.0 / 16.0,
            origin: [0.0, 0.0],
            area: [80.0, 80.0],
            trunk_radius: 0.25,
            trunk_height: 6.0,
            seed: 1,
            spawn_clear_radius: 2.0,
            clear_points: Vec::new(),
            sample_spacing: 0.2,
            ground: true,
        }
    }
}

impl ForestSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.intensity > 0.0) {
            return Err(invalid("forest intensity must be positive"));
        }
        if !(self.area[0] > 0.0 && self.area[1] > 0.0) {
            return Err(invalid(format!("forest area must be positive, got {:?}", self.area)));
        }
        if !(self.trunk_radius > 0.0 && self.trunk_height > 0.0 && self.sample_spacing > 0.0) {
            return Err(invalid("trunk dimensions and sample spacing must be positive"));
        }
        if self.spawn_clear_radius < 0.0 {
            return Err(invalid("spawn clear radius must be non-negative"));
        }
        Ok(())
    }

    pub fn expected_tree_count(&self) -> f64 {
        self.intensity * self.area[0] * self.area[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub trunks: Vec<Vector2<f64>>,
    pub cloud: PointCloud,
}

/// Trunk centers: Poisson count, uniform placement, then removal of trunks
/// intruding into spawn clearings.
pub fn sample_trunks(spec: &ForestSpec) -> Result<Vec<Vector2<f64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let poisson = Poisson::new(spec.expected_tree_count()).map_err(|e| invalid(e.to_string()))?;
    let count = poisson.sample(&mut rng) as usize;
    let keep_out = spec.spawn_clear_radius + spec.trunk_radius;
    let clear: Vec<Vector2<f64>> = spec.clear_points.iter().map(|c| Vector2::new(c[0], c[1])).collect();
    let trunks = (0..count)
        .map(|_| {
            Vector2::new(
                spec.origin[0] + rng.random::<f64>() * spec.area[0],
                spec.origin[1] + rng.random::<f64>() * spec.area[1],
            )
        })
        .filter(|t| spec.spawn_clear_radius == 0.0 || clear.iter().all(|c| (t - c).norm() > keep_out))
        .collect();
    Ok(trunks)
}

fn trunk_points(center: &Vector2<f64>, spec: &ForestSpec, out: &mut Vec<Vector3<f64>>) {
    let h = spec.sample_spacing;
    let r = spec.trunk_radius;
    let levels = (spec.trunk_height / h).ceil() as usize;
    let reach = (r / h).floor() as i64;
    let mut slice = Vec::new();
    for a in -reach..=reach {
        for b in -reach..=reach {
            let off = Vector2::new(a as f64 * h, b as f64 * h);
            if off.norm() <= r {
                slice.push(off);
            }
        }
    }
    let ring = ((2.0 * std::f64::consts::PI * r / h).ceil() as usize).max(8);
    for k in 0..ring {
        let ang = 2.0 * std::f64::consts::PI * k as f64 / ring as f64;
        slice.push(Vector2::new(r * ang.cos(), r * ang.sin()));
    }
    for level in 0..=levels {
        let z = (level as f64 * h).min(spec.trunk_height);
        for off in &slice {
            out.push(Vector3::new(center.x + off.x, center.y + off.y, z));
        }
    }
}

pub fn generate_forest(spec: &ForestSpec) -> Result<Forest> {
    forest_from_trunks(sample_trunks(spec)?, spec)
}

/// Surface cloud for the given trunk centers, plus ground if enabled.
pub fn forest_from_trunks(trunks: Vec<Vector2<f64>>, spec: &ForestSpec) -> Result<Forest> {
    let mut points = Vec::new();
    for t in &trunks {
        trunk_points(t, spec, &mut points);
    }
    if spec.ground {
        let h = spec.sample_spacing;
        let nx = (spec.area[0] / h).ceil() as usize;
        let ny = (spec.area[1] / h).ceil() as usize;
        for i in 0..=nx {
            for j in 0..=ny {
                points.push(Vector3::new(spec.origin[0] + i as f64 * h, spec.origin[1] + j as f64 * h, 0.0));
            }
        }
    }
    let cloud = PointCloud::new(points)?.deduplicated(spec.sample_spacing * 0.5);
    Ok(Forest { trunks, cloud })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_count_is_lambda_area() {
        let spec = ForestSpec::default();
        assert!((spec.expected_tree_count() - 400.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = ForestSpec { area: [20.0, 20.0], seed: 42, ..Default::default() };
        let a = generate_forest(&spec).unwrap();
        let b = generate_forest(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_forest(&ForestSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.trunks, c.trunks);
    }

    #[test]
    fn clearings_stay_clear() {
        let spec = ForestSpec {
            intensity: 0.5,
            area: [30.0, 30.0],
            clear_points: vec![[10.0, 10.0], [20.0, 15.0]],
            spawn_clear_radius: 3.0,
            ..Default::default()
        };
        let forest = generate_forest(&spec).unwrap();
        for c in &spec.clear_points {
            let c = Vector2::new(c[0], c[1]);
            for p in forest.cloud.points().iter().filter(|p| p.z > 0.0) {
                assert!((Vector2::new(p.x, p.y) - c).norm() > 3.0 - 1e-9);
            }
        }
    }

    #[test]
    fn zero_area_rejected() {
        let spec = ForestSpec { area: [0.0, 10.0], ..Default::default() };
        assert!(generate_forest(&spec).is_err());
        assert!(generate_forest(&ForestSpec { intensity: 0.0, ..Default::default() }).is_err());
    }
}
