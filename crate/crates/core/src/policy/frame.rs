use nalgebra::{Rotation3, Vector3};

use crate::costs::{chain_rule, CandidateFrame, CostBreakdown, CostEngine, CostWeights, PotentialParams, TaskMode};
use crate::environment::EsdfGrid;
use crate::error::{invalid, Result};
use crate::primitives::{horizon, LatticeConfig, PredictionVector, PrimitiveAnchor, SpeedScale, TRAJ_VARS};
use crate::trajectory::{BoundaryDerivatives, Trajectory};

/// Inputs describing one planning frame.
#[derive(Clone, Debug)]
pub struct FrameSetup<'a> {
    pub grid: &'a EsdfGrid,
    pub lattice: &'a LatticeConfig,
    pub anchors: &'a [PrimitiveAnchor],
    pub scale: SpeedScale,
    /// World-frame start state.
    pub start: BoundaryDerivatives,
    pub world_from_camera: Rotation3<f64>,
    pub mode: TaskMode,
    /// Point pulled on by the goal cost, already scaled for navigation.
    pub goal_point: Option<Vector3<f64>>,
    pub weights: CostWeights,
    pub potential: PotentialParams,
}

/// A planning frame with its shared cost engine.
#[derive(Clone, Debug)]
pub struct FrameContext<'a> {
    pub setup: FrameSetup<'a>,
    engine: CostEngine<'a>,
}

impl<'a> FrameContext<'a> {
    pub fn new(setup: FrameSetup<'a>) -> Result<Self> {
        if setup.anchors.len() != setup.lattice.cell_count() {
            return Err(invalid(format!(
                "{} anchors for a lattice of {} cells",
                setup.anchors.len(),
                setup.lattice.cell_count()
            )));
        }
        if !setup.start.is_finite() {
            return Err(invalid("start state must be finite"));
        }
        setup.weights.validate()?;
        let t = horizon(setup.lattice, setup.scale.alpha, setup.scale.v_max)?;
        let engine = CostEngine::new(t, setup.grid, setup.potential)?;
        Ok(Self { setup, engine })
    }

    pub fn horizon(&self) -> f64 {
        self.engine.horizon()
    }

    pub fn len(&self) -> usize {
        self.setup.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.setup.anchors.is_empty()
    }

    pub fn candidate(&self, index: usize) -> CandidateFrame<'_> {
        CandidateFrame {
            anchor: &self.setup.anchors[index],
            lattice: self.setup.lattice,
            scale: self.setup.scale,
            world_from_camera: self.setup.world_from_camera,
            start: self.setup.start,
        }
    }

    pub fn end_state(&self, index: usize, pred: &PredictionVector) -> BoundaryDerivatives {
        self.candidate(index).end_state(pred)
    }

    pub fn trajectory(&self, index: usize, pred: &PredictionVector) -> Result<Trajectory> {
        self.engine.trajectory(&self.setup.start, &self.end_state(index, pred))
    }

    pub fn evaluate(&self, index: usize, pred: &PredictionVector) -> Result<CostBreakdown> {
        let end = self.end_state(index, pred);
        self.engine.evaluate(&self.setup.start, &end, self.setup.goal_point.as_ref())
    }

    /// `λs Js + λc Jc + λg Jg`.
    pub fn objective(&self, costs: &CostBreakdown) -> f64 {
        costs.weighted(&self.setup.weights, true)
    }

    /// Gradient of the weighted costs (the goal term when `with_goal`) with
    /// respect to the nine raw trajectory variables.
    pub fn raw_gradient(
        &self,
        index: usize,
        pred: &PredictionVector,
        costs: &CostBreakdown,
        with_goal: bool,
    ) -> [f64; TRAJ_VARS] {
        let grad = costs.weighted_grad(&self.setup.weights, with_goal);
        chain_rule(&grad, pred, &self.candidate(index))
    }
}

/// Goal point for tracking: the target propagated over the horizon with its
/// estimated velocity, backed off by `standoff` along the horizontal line of
/// sight so the follower does not aim at the target itself.
pub fn tracking_goal_point(
    quad: &Vector3<f64>,
    target: &Vector3<f64>,
    target_velocity: &Vector3<f64>,
    horizon: f64,
    standoff: f64,
) -> Vector3<f64> {
    let ahead = target + target_velocity * horizon;
    let mut los = ahead - quad;
    los.z = 0.0;
    let n = los.norm();
    if n < 1e-9 {
        return ahead;
    }
    ahead - los * (standoff.min(n) / n)
}
