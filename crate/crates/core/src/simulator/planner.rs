use std::time::Instant;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::sensing::{encode_detection, Detection};
use crate::costs::{CostWeights, PotentialParams, TaskMode};
use crate::environment::EsdfGrid;
use crate::error::{invalid, Result};
use crate::policy::{
    extract_features, refine, select, CameraModel, FeatureConfig, FrameContext, FrameSetup, Intrinsics, PolicyHead,
    RefinerConfig, SelectionResult,
};
use crate::primitives::{build_library, LatticeConfig, PredictionVector, PrimitiveAnchor, SpeedScale};
use crate::tracker::Tracker;
use crate::trajectory::{BoundaryDerivatives, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub lattice: LatticeConfig,
    pub weights: CostWeights,
    pub potential: PotentialParams,
    pub refiner: RefinerConfig,
    pub features: FeatureConfig,
    pub v_max: f64,
    pub a_max: f64,
    /// Planning speed; sets `alpha = 2 speed / v_max`, i.e. a horizon of `r / speed`.
    pub speed: f64,
    /// Distance kept behind the target by the tracking goal, m.
    pub standoff: f64,
    /// Pixel-to-cell downsampling of the camera.
    pub downsample: u32,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            lattice: LatticeConfig::default(),
            weights: CostWeights::default(),
            potential: PotentialParams::default(),
            refiner: RefinerConfig::default(),
            features: FeatureConfig::default(),
            v_max: 6.0,
            a_max: 6.0,
            speed: 4.0,
            standoff: 3.0,
            downsample: 32,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        self.weights.validate()?;
        self.potential.validate()?;
        self.refiner.validate()?;
        if !(self.v_max > 0.0 && self.a_max > 0.0 && self.speed > 0.0 && self.standoff >= 0.0) {
            return Err(invalid("planner speeds must be positive and standoff non-negative"));
        }
        Ok(())
    }

    pub fn scale(&self) -> Result<SpeedScale> {
        SpeedScale::new(2.0 * self.speed / self.v_max, self.v_max, self.a_max)
    }

    pub fn horizon(&self) -> f64 {
        self.lattice.radius / self.speed
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    Refiner,
    Head(Box<PolicyHead>),
}

/// Inputs of one planning cycle.
#[derive(Clone, Debug)]
pub struct PlanRequest<'a> {
    pub grid: &'a EsdfGrid,
    pub start: BoundaryDerivatives,
    pub yaw: f64,
    pub mode: TaskMode,
    pub goal_point: Option<Vector3<f64>>,
    /// Synthetic detection fed to the refiner backend.
    pub detection: Option<Detection>,
    /// Ground-truth target, used only for the head's privileged features.
    pub privileged_target: Option<Vector3<f64>>,
    /// Minimum clearance a selected trajectory must keep.
    pub min_clearance: f64,
}

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub trajectory: Trajectory,
    pub candidates: Vec<PredictionVector>,
    pub selection: SelectionResult,
    /// No candidate kept clearance and a braking trajectory was substituted.
    pub estop: bool,
    pub latency_ms: f64,
}

/// Anchor library plus backend; one instance serves a whole episode.
#[derive(Clone, Debug)]
pub struct Planner {
    pub config: PlannerConfig,
    pub backend: Backend,
    pub anchors: Vec<PrimitiveAnchor>,
    pub intrinsics: Intrinsics,
}

/// Smallest field distance along a trajectory sampled every `T / samples`.
pub fn trajectory_clearance(traj: &Trajectory, grid: &EsdfGrid, samples: usize) -> f64 {
    (0..=samples)
        .map(|k| grid.distance_at(&traj.eval_clamped(traj.horizon() * k as f64 / samples as f64, 0)))
        .fold(f64::INFINITY, f64::min)
}

/// Quintic to rest from the current state, stopping about half a horizon of
/// travel ahead.
pub fn braking_trajectory(start: &BoundaryDerivatives, horizon: f64) -> Result<Trajectory> {
    let end = BoundaryDerivatives::at_rest(start.position + start.velocity * (0.5 * horizon));
    Trajectory::from_boundary(*start, end, horizon)
}

impl Planner {
    pub fn new(config: PlannerConfig, backend: Backend) -> Result<Self> {
        config.validate()?;
        let anchors = build_library(&config.lattice)?;
        let intrinsics = Intrinsics::for_lattice(&config.lattice, config.downsample)?;
        if let Backend::Head(h) = &backend {
            if h.input_dim() != crate::policy::FEATURE_DIM || h.output_dim() != crate::primitives::PREDICTION_DIM {
                return Err(invalid("head dimensions do not match the feature and prediction sizes"));
            }
        }
        Ok(Self { config, backend, anchors, intrinsics })
    }

    pub fn camera(&self, position: Vector3<f64>, yaw: f64) -> CameraModel {
        CameraModel::level(self.intrinsics, position, yaw)
    }

    pub fn setup<'a>(&'a self, req: &PlanRequest<'a>) -> Result<FrameSetup<'a>> {
        Ok(FrameSetup {
            grid: req.grid,
            lattice: &self.config.lattice,
            anchors: &self.anchors,
            scale: self.config.scale()?,
            start: req.start,
            world_from_camera: Rotation3::from_axis_angle(&Vector3::z_axis(), req.yaw),
            mode: req.mode,
            goal_point: req.goal_point,
            weights: self.config.weights,
            potential: self.config.potential,
        })
    }

    /// Raw predictions of the configured backend.
    pub fn predict(&self, ctx: &FrameContext<'_>, req: &PlanRequest<'_>, cam: &CameraModel) -> Result<Vec<PredictionVector>> {
        match &self.backend {
            Backend::Refiner => {
                let mut preds: Vec<PredictionVector> =
                    refine(ctx, None, &self.config.refiner)?.into_iter().map(|c| c.pred).collect();
                encode_detection(&mut preds, req.detection.as_ref(), cam, &self.config.lattice);
                Ok(preds)
            }
            Backend::Head(head) => {
                let feats = extract_features(&ctx.setup, req.privileged_target.as_ref(), Some(cam), &self.config.features);
                head.forward(&feats)
            }
        }
    }

    /// Predict, filter detections into the tracker, pick the cheapest candidate
    /// that keeps clearance, or brake when none does.
    pub fn plan(&self, req: &PlanRequest<'_>, tracker: &mut Tracker) -> Result<PlanOutcome> {
        let clock = Instant::now();
        let ctx = FrameContext::new(self.setup(req)?)?;
        let cam = self.camera(req.start.position, req.yaw);
        let mut candidates = self.predict(&ctx, req, &cam)?;

        let mut any_valid = false;
        for (i, cand) in candidates.iter_mut().enumerate() {
            if !cand.y_c.is_finite() {
                continue;
            }
            let traj = ctx.trajectory(i, cand)?;
            if trajectory_clearance(&traj, req.grid, 40) >= req.min_clearance {
                any_valid = true;
            } else {
                cand.y_c = f64::INFINITY;
            }
        }
        let selection = select(&ctx, &candidates, req.mode, &cam, tracker)?;
        let (trajectory, estop) = match (any_valid, &selection.trajectory) {
            (true, Some(t)) => (t.clone(), false),
            _ => (braking_trajectory(&req.start, ctx.horizon())?, true),
        };
        Ok(PlanOutcome {
            trajectory,
            candidates,
            selection,
            estop,
            latency_ms: clock.elapsed().as_secs_f64() * 1e3,
        })
    }
}
