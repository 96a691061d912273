//! Randomized training frames and their on-disk layout: one directory per
//! frame holding `pose.txt`, `cloud.txt` (a reference to the point cloud) and
//! `target.txt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{CameraModel, Intrinsics};
use super::detection::visible_cell;
use super::sampler::StateSampler;
use super::training::TrainingFrame;
use crate::environment::EsdfGrid;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub frames: usize,
    pub seed: u64,
    /// Sampling area for poses, `[x_min, y_min, x_max, y_max]`.
    pub area: [f64; 4],
    pub altitude: f64,
    /// Minimum field distance at a sampled pose.
    pub min_clearance: f64,
    pub with_targets: bool,
    pub target_depth: [f64; 2],
    pub goal_distance: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            frames: 50,
            seed: 7,
            area: [5.0, 5.0, 75.0, 75.0],
            altitude: 1.5,
            min_clearance: 1.0,
            with_targets: true,
            target_depth: [2.0, 8.0],
            goal_distance: 40.0,
        }
    }
}

const MAX_TRIES: usize = 10_000;

/// Frames with free-space poses, sampled states and, optionally, raycast-visible
/// targets placed inside the field of view.
pub fn generate_frames(
    spec: &DatasetSpec,
    grid: &EsdfGrid,
    sampler: &StateSampler,
    intrinsics: &Intrinsics,
) -> Result<Vec<TrainingFrame>> {
    if spec.frames == 0 {
        return Err(Error::Empty("dataset frame count".into()));
    }
    if !(spec.area[2] > spec.area[0] && spec.area[3] > spec.area[1]) {
        return Err(invalid("dataset area is empty"));
    }
    if !(spec.target_depth[0] > 0.0 && spec.target_depth[1] > spec.target_depth[0]) {
        return Err(invalid("target depth range must be positive and increasing"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut tries = 0;
    while frames.len() < spec.frames {
        tries += 1;
        if tries > MAX_TRIES * spec.frames {
            return Err(invalid("could not place enough training frames in free space"));
        }
        let position = Vector3::new(
            rng.random_range(spec.area[0]..spec.area[2]),
            rng.random_range(spec.area[1]..spec.area[3]),
            spec.altitude,
        );
        if grid.distance_at(&position) < spec.min_clearance {
            continue;
        }
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let (v, a) = sampler.sample(&mut rng);
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let mut frame = TrainingFrame {
            position,
            yaw,
            velocity: rot * v,
            acceleration: rot * a,
            target: None,
            goal: None,
        };
        if spec.with_targets {
            let cam = CameraModel::level(*intrinsics, position, yaw);
            let mut placed = None;
            for _ in 0..200 {
                let u = rng.random_range(0.0..intrinsics.width as f64);
                let vpx = rng.random_range(0.0..intrinsics.height as f64);
                let depth = rng.random_range(spec.target_depth[0]..spec.target_depth[1]);
                let t = cam.unproject(u, vpx, depth);
                if t.z > 0.5 && grid.distance_at(&t) > 0.5 && visible_cell(&t, &cam, Some(grid)).is_some() {
                    placed = Some(t);
                    break;
                }
            }
            match placed {
                Some(t) => frame.target = Some(t),
                None => continue,
            }
        } else {
            let heading = yaw + rng.random_range(-0.6..0.6);
            frame.goal = Some(position + Vector3::new(heading.cos(), heading.sin(), 0.0) * spec.goal_distance);
        }
        frames.push(frame);
    }
    Ok(frames)
}

fn vec_line(v: &Vector3<f64>) -> String {
    format!("{} {} {}", v.x, v.y, v.z)
}

fn parse_vec(line: Option<&str>, what: &str) -> Result<Vector3<f64>> {
    let line = line.ok_or_else(|| Error::Format(format!("missing {what}")))?;
    let v: Vec<f64> = line
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("{what}: {e}")))?;
    if v.len() != 3 {
        return Err(Error::Format(format!("{what}: expected 3 values")));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

/// Writes `frame_XXXX` directories under `dir`.
pub fn save_frames(dir: &Path, frames: &[TrainingFrame], cloud_path: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        let fd = dir.join(format!("frame_{i:04}"));
        std::fs::create_dir_all(&fd)?;
        let mut pose = String::new();
        writeln!(pose, "{} {}", vec_line(&f.position), f.yaw).expect("string write");
        writeln!(pose, "{}", vec_line(&f.velocity)).expect("string write");
        writeln!(pose, "{}", vec_line(&f.acceleration)).expect("string write");
        std::fs::write(fd.join("pose.txt"), pose)?;
        std::fs::write(fd.join("cloud.txt"), format!("{}\n", cloud_path.display()))?;
        let target = match (&f.target, &f.goal) {
            (Some(t), _) => format!("target {}\n", vec_line(t)),
            (None, Some(g)) => format!("goal {}\n", vec_line(g)),
            (None, None) => "none\n".to_string(),
        };
        std::fs::write(fd.join("target.txt"), target)?;
    }
    Ok(())
}

/// Loads every frame directory under `dir` in name order, with the point-cloud
/// reference of the first frame.
pub fn load_frames(dir: &Path) -> Result<(Vec<TrainingFrame>, PathBuf)> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("pose.txt").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Empty(format!("no training frames under {}", dir.display())));
    }
    let mut frames = Vec::with_capacity(dirs.len());
    let mut cloud = None;
    for d in &dirs {
        let pose = std::fs::read_to_string(d.join("pose.txt"))?;
        let mut lines = pose.lines();
        let first: Vec<f64> = lines
            .next()
            .ok_or_else(|| Error::Format("empty pose file".into()))?
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("pose: {e}")))?;
        if first.len() != 4 {
            return Err(Error::Format("pose line needs x y z yaw".into()));
        }
        let velocity = parse_vec(lines.next(), "velocity")?;
        let acceleration = parse_vec(lines.next(), "acceleration")?;
        let target_text = std::fs::read_to_string(d.join("target.txt"))?;
        let (kind, rest) = target_text.trim().split_once(' ').unwrap_or((target_text.trim(), ""));
        let (target, goal) = match kind {
            "target" => (Some(parse_vec(Some(rest), "target")?), None),
            "goal" => (None, Some(parse_vec(Some(rest), "goal")?)),
            "none" => (None, None),
            other => return Err(Error::Format(format!("unknown target kind {other:?}"))),
        };
        if cloud.is_none() {
            let reference = std::fs::read_to_string(d.join("cloud.txt"))?;
            let p = PathBuf::from(reference.trim());
            cloud = Some(if p.is_relative() { dir.join(p) } else { p });
        }
        frames.push(TrainingFrame {
            position: Vector3::new(first[0], first[1], first[2]),
            yaw: first[3],
            velocity,
            acceleration,
            target,
            goal,
        });
    }
    Ok((frames, cloud.expect("at least one frame")))
}
