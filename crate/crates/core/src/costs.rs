//! Differentiable trajectory costs and their gradients with respect to the
//! end state and, through the decoding chain, the raw prediction variables.

use std::ops::{Add, AddAssign, Mul};

use nalgebra::{Matrix6, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::environment::EsdfGrid;
use crate::error::{invalid, Error, Result};
use crate::primitives::{
    decode_derivatives, decode_offsets, spherical_jacobian, LatticeConfig, PredictionVector, PrimitiveAnchor,
    SpeedScale, TRAJ_VARS,
};
use crate::trajectory::{BoundaryDerivatives, HermiteBasis, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Tracking,
    Navigation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleLabel {
    Positive,
    Negative,
    Ignored,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub smoothness: f64,
    pub collision: f64,
    pub goal: f64,
    /// Weight of non-positive samples.
    pub lambda_1: f64,
    /// Weight of the objectness loss on negative samples.
    pub lambda_2: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { smoothness: 0.03, collision: 1.0, goal: 1.0, lambda_1: 0.2, lambda_2: 0.5 }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.smoothness, self.collision, self.goal, self.lambda_1, self.lambda_2];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("cost weights must be non-negative"));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { smoothness: self.smoothness * k, collision: self.collision * k, goal: self.goal * k, ..*self }
    }
}

/// Obstacle potential `c(d) = exp(-(d - d_safe) / falloff)` for `d < cutoff`, else 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialParams {
    pub d_safe: f64,
    pub falloff: f64,
    pub cutoff: f64,
    /// Number of integration intervals over the horizon (`dt = T / intervals`).
    pub intervals: usize,
}

impl Default for PotentialParams {
    fn default() -> Self {
        Self { d_safe: 0.4, falloff: 0.4, cutoff: 2.0, intervals: 20 }
    }
}

impl PotentialParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.falloff > 0.0) || !(self.cutoff > 0.0) || self.intervals == 0 {
            return Err(invalid("potential needs positive falloff, cutoff and interval count"));
        }
        Ok(())
    }

    pub fn potential(&self, d: f64) -> f64 {
        if d < self.cutoff {
            (-(d - self.d_safe) / self.falloff).exp()
        } else {
            0.0
        }
    }

    /// `dc/dd`.
    pub fn potential_slope(&self, d: f64) -> f64 {
        -self.potential(d) / self.falloff
    }
}

/// Gradient with respect to the end derivatives `(pT, vT, aT)` of all three axes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EndStateGrad {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl EndStateGrad {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Flattened as `[p_x, p_y, p_z, v_x, v_y, v_z, a_x, a_y, a_z]`.
    pub fn to_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..3].copy_from_slice(self.position.as_slice());
        out[3..6].copy_from_slice(self.velocity.as_slice());
        out[6..].copy_from_slice(self.acceleration.as_slice());
        out
    }

    pub fn norm(&self) -> f64 {
        (self.position.norm_squared() + self.velocity.norm_squared() + self.acceleration.norm_squared()).sqrt()
    }
}

impl Add for EndStateGrad {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            position: self.position + o.position,
            velocity: self.velocity + o.velocity,
            acceleration: self.acceleration + o.acceleration,
        }
    }
}

impl AddAssign for EndStateGrad {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Mul<f64> for EndStateGrad {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self { position: self.position * k, velocity: self.velocity * k, acceleration: self.acceleration * k }
    }
}

/// Squared-jerk Hessian of the monomial coefficients over `[0, T]`.
pub fn jerk_hessian(horizon: f64) -> Matrix6<f64> {
    let c = [0.0, 0.0, 0.0, 6.0, 24.0, 60.0];
    let mut q = Matrix6::zeros();
    for i in 3..6 {
        for j in 3..6 {
            let p = (i + j - 5) as i32;
            q[(i, j)] = c[i] * c[j] * horizon.powi(p) / p as f64;
        }
    }
    q
}

/// `B = M^T Q M` for a fixed horizon, shared by all candidates of a frame.
#[derive(Clone, Debug)]
pub struct SmoothnessModel {
    b: Matrix6<f64>,
}

impl SmoothnessModel {
    pub fn new(basis: &HermiteBasis) -> Self {
        let m = basis.matrix();
        Self { b: m.transpose() * jerk_hessian(basis.horizon()) * m }
    }

    pub fn evaluate(&self, start: &BoundaryDerivatives, end: &BoundaryDerivatives) -> (f64, EndStateGrad) {
        let mut cost = 0.0;
        let mut grad = EndStateGrad::zero();
        for axis in 0..3 {
            let f = start.axis(axis);
            let p = end.axis(axis);
            let d = nalgebra::Vector6::new(f[0], f[1], f[2], p[0], p[1], p[2]);
            cost += d.dot(&(self.b * d));
            // 2 (B_PF d_F + B_PP d_P): rows 3..6 of 2 B d.
            let g = (self.b * d) * 2.0;
            grad.position[axis] = g[3];
            grad.velocity[axis] = g[4];
            grad.acceleration[axis] = g[5];
        }
        (cost, grad)
    }
}

/// Integral of squared jerk and its gradient with respect to the end state.
pub fn smoothness(start: &BoundaryDerivatives, end: &BoundaryDerivatives, horizon: f64) -> Result<(f64, EndStateGrad)> {
    let basis = HermiteBasis::new(horizon)?;
    Ok(SmoothnessModel::new(&basis).evaluate(start, end))
}

/// Time-discretized obstacle potential along the trajectory, `dt = T / intervals`.
pub fn collision(traj: &Trajectory, grid: &EsdfGrid, params: &PotentialParams) -> Result<(f64, EndStateGrad)> {
    params.validate()?;
    let basis = HermiteBasis::new(traj.horizon())?;
    Ok(collision_with_basis(traj, &basis, grid, params, params.intervals))
}

/// Same as [`collision`] with an explicit integration step that must divide the horizon.
pub fn collision_with_step(
    traj: &Trajectory,
    grid: &EsdfGrid,
    params: &PotentialParams,
    dt: f64,
) -> Result<(f64, EndStateGrad)> {
    if !(dt > 0.0) {
        return Err(invalid("integration step must be positive"));
    }
    let ratio = traj.horizon() / dt;
    let intervals = ratio.round();
    if intervals < 1.0 || (ratio - intervals).abs() > 1e-9 * ratio.max(1.0) {
        return Err(invalid(format!("step {dt} does not divide horizon {}", traj.horizon())));
    }
    let basis = HermiteBasis::new(traj.horizon())?;
    Ok(collision_with_basis(traj, &basis, grid, params, intervals as usize))
}

pub(crate) fn collision_with_basis(
    traj: &Trajectory,
    basis: &HermiteBasis,
    grid: &EsdfGrid,
    params: &PotentialParams,
    intervals: usize,
) -> (f64, EndStateGrad) {
    let dt = traj.horizon() / intervals as f64;
    let mut cost = 0.0;
    let mut grad = EndStateGrad::zero();
    for k in 0..=intervals {
        let t = k as f64 * dt;
        let p = traj.eval_clamped(t, 0);
        let sample = grid.query(&p);
        let c = params.potential(sample.distance);
        if c == 0.0 {
            continue;
        }
        cost += c * dt;
        if k == 0 {
            continue;
        }
        let dc = sample.gradient * (params.potential_slope(sample.distance) * dt);
        let sens = basis.end_sensitivity(t, 0);
        grad.position += dc * sens[0];
        grad.velocity += dc * sens[1];
        grad.acceleration += dc * sens[2];
    }
    (cost, grad)
}

/// The point the goal cost pulls the endpoint toward. Navigation goals are
/// replaced by the unit direction to the goal scaled to `radius`; tracking
/// targets are used as is.
pub fn effective_goal(mode: TaskMode, current: &Vector3<f64>, goal: &Vector3<f64>, radius: f64) -> Result<Vector3<f64>> {
    match mode {
        TaskMode::Tracking => Ok(*goal),
        TaskMode::Navigation => {
            let delta = goal - current;
            let n = delta.norm();
            if !(n > 1e-9) {
                return Err(invalid("navigation goal coincides with the current position"));
            }
            Ok(current + delta * (radius / n))
        }
    }
}

/// `|d_Pp - g_p|^2` and its gradient.
pub fn goal(end_position: &Vector3<f64>, goal_point: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let diff = end_position - goal_point;
    (diff.norm_squared(), diff * 2.0)
}

/// Smooth-L1 with transition at 1.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Supervision target of the predicted cost. The goal term only counts in navigation.
pub fn cost_target(j_s: f64, j_c: f64, j_g: f64, weights: &CostWeights, mode: TaskMode) -> f64 {
    let base = weights.smoothness * j_s + weights.collision * j_c;
    match mode {
        TaskMode::Navigation => base + weights.goal * j_g,
        TaskMode::Tracking => base,
    }
}

pub fn cost_supervision(y_c: f64, j_s: f64, j_c: f64, j_g: f64, weights: &CostWeights, mode: TaskMode) -> f64 {
    smooth_l1(y_c - cost_target(j_s, j_c, j_g, weights, mode))
}

/// Per-anchor loss ingredients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AnchorTerms {
    pub j_s: f64,
    pub j_c: f64,
    pub j_g: f64,
    pub l_cost: f64,
    pub l_tgt: f64,
    pub l_obj: f64,
}

/// Loss of one anchor given its sample label.
pub fn anchor_loss(t: &AnchorTerms, label: SampleLabel, w: &CostWeights, mode: TaskMode) -> f64 {
    let traj = w.smoothness * t.j_s + w.collision * t.j_c;
    match (mode, label) {
        (TaskMode::Navigation, _) => traj + w.goal * t.j_g + t.l_cost,
        (TaskMode::Tracking, SampleLabel::Positive) => traj + w.goal * t.j_g + t.l_cost + t.l_tgt + t.l_obj,
        (TaskMode::Tracking, SampleLabel::Ignored) => w.lambda_1 * (traj + t.l_cost),
        (TaskMode::Tracking, SampleLabel::Negative) => w.lambda_1 * (traj + t.l_cost) + w.lambda_2 * t.l_obj,
    }
}

/// Sum of per-anchor losses of one frame. Tracking frames need one label per anchor.
pub fn total_loss(
    terms: &[AnchorTerms],
    labels: Option<&[SampleLabel]>,
    weights: &CostWeights,
    mode: TaskMode,
) -> Result<f64> {
    match mode {
        TaskMode::Navigation => Ok(terms.iter().map(|t| anchor_loss(t, SampleLabel::Positive, weights, mode)).sum()),
        TaskMode::Tracking => {
            let labels = labels.ok_or_else(|| invalid("tracking loss needs sample labels"))?;
            if labels.len() != terms.len() {
                return Err(invalid(format!("{} labels for {} anchors", labels.len(), terms.len())));
            }
            Ok(terms.iter().zip(labels).map(|(t, l)| anchor_loss(t, *l, weights, mode)).sum())
        }
    }
}

/// Everything needed to turn raw trajectory variables of one anchor into a
/// world-frame end state.
#[derive(Clone, Debug)]
pub struct CandidateFrame<'a> {
    pub anchor: &'a PrimitiveAnchor,
    pub lattice: &'a LatticeConfig,
    pub scale: SpeedScale,
    pub world_from_camera: Rotation3<f64>,
    pub start: BoundaryDerivatives,
}

impl CandidateFrame<'_> {
    pub fn end_state(&self, pred: &PredictionVector) -> BoundaryDerivatives {
        let endpoint = decode_offsets(self.anchor, pred, self.lattice);
        let (v_local, a_local) = decode_derivatives(pred, &self.scale);
        let world_from_local = self.world_from_camera * self.anchor.camera_from_local();
        BoundaryDerivatives::new(
            self.start.position + self.world_from_camera * endpoint.position,
            world_from_local * v_local,
            world_from_local * a_local,
        )
    }
}

/// Gradient of a cost with respect to the nine raw trajectory variables
/// `(y_theta, y_phi, y_r, y_v, y_a)`, given its gradient with respect to the
/// world-frame end state.
pub fn chain_rule(grad: &EndStateGrad, pred: &PredictionVector, frame: &CandidateFrame<'_>) -> [f64; TRAJ_VARS] {
    let sech2 = |y: f64| {
        let t = y.tanh();
        1.0 - t * t
    };
    let endpoint = decode_offsets(frame.anchor, pred, frame.lattice);
    let jac = spherical_jacobian(endpoint.radius, endpoint.theta, endpoint.phi);
    let g_cam = frame.world_from_camera.inverse() * grad.position;
    let g_sph = jac.transpose() * g_cam;
    let world_from_local = frame.world_from_camera * frame.anchor.camera_from_local();
    let g_vel = world_from_local.inverse() * grad.velocity;
    let g_acc = world_from_local.inverse() * grad.acceleration;
    let vb = frame.scale.velocity_bound();
    let ab = frame.scale.acceleration_bound();
    let mut out = [0.0; TRAJ_VARS];
    out[0] = g_sph[0] * frame.lattice.d_theta * sech2(pred.y_theta);
    out[1] = g_sph[1] * frame.lattice.d_phi * sech2(pred.y_phi);
    out[2] = g_sph[2] * frame.anchor.radius * sech2(pred.y_r);
    for k in 0..3 {
        out[3 + k] = g_vel[k] * vb * sech2(pred.y_v[k]);
        out[6 + k] = g_acc[k] * ab * sech2(pred.y_a[k]);
    }
    out
}

/// Cost components of one candidate trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CostBreakdown {
    pub smoothness: f64,
    pub collision: f64,
    pub goal: f64,
    pub smoothness_grad: EndStateGrad,
    pub collision_grad: EndStateGrad,
    pub goal_grad: EndStateGrad,
}

impl CostBreakdown {
    /// `λs Js + λc Jc + λg Jg` (the goal term only when `with_goal`).
    pub fn weighted(&self, w: &CostWeights, with_goal: bool) -> f64 {
        let base = w.smoothness * self.smoothness + w.collision * self.collision;
        if with_goal {
            base + w.goal * self.goal
        } else {
            base
        }
    }

    pub fn weighted_grad(&self, w: &CostWeights, with_goal: bool) -> EndStateGrad {
        let base = self.smoothness_grad * w.smoothness + self.collision_grad * w.collision;
        if with_goal {
            base + self.goal_grad * w.goal
        } else {
            base
        }
    }

    pub fn is_finite(&self) -> bool {
        self.smoothness.is_finite() && self.collision.is_finite() && self.goal.is_finite()
    }
}

/// Per-frame evaluator shared by every candidate of the frame.
#[derive(Clone, Debug)]
pub struct CostEngine<'a> {
    pub basis: HermiteBasis,
    smooth: SmoothnessModel,
    pub grid: &'a EsdfGrid,
    pub potential: PotentialParams,
}

impl<'a> CostEngine<'a> {
    pub fn new(horizon: f64, grid: &'a EsdfGrid, potential: PotentialParams) -> Result<Self> {
        potential.validate()?;
        let basis = HermiteBasis::new(horizon)?;
        let smooth = SmoothnessModel::new(&basis);
        Ok(Self { basis, smooth, grid, potential })
    }

    pub fn horizon(&self) -> f64 {
        self.basis.horizon()
    }

    pub fn trajectory(&self, start: &BoundaryDerivatives, end: &BoundaryDerivatives) -> Result<Trajectory> {
        Trajectory::with_basis(&self.basis, *start, *end)
    }

    /// All three costs of a trajectory; `goal_point` of `None` gives a zero goal term.
    pub fn evaluate(
        &self,
        start: &BoundaryDerivatives,
        end: &BoundaryDerivatives,
        goal_point: Option<&Vector3<f64>>,
    ) -> Result<CostBreakdown> {
        let traj = self.trajectory(start, end)?;
        let (j_s, g_s) = self.smooth.evaluate(start, end);
        let (j_c, g_c) = collision_with_basis(&traj, &self.basis, self.grid, &self.potential, self.potential.intervals);
        let (j_g, g_g) = match goal_point {
            Some(g) => goal(&end.position, g),
            None => (0.0, Vector3::zeros()),
        };
        Ok(CostBreakdown {
            smoothness: j_s,
            collision: j_c,
            goal: j_g,
            smoothness_grad: g_s,
            collision_grad: g_c,
            goal_grad: EndStateGrad { position: g_g, ..Default::default() },
        })
    }
}

/// Relative error used by the gradient checks: `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Error type alias kept for callers matching on cost failures.
pub type CostError = Error;
