use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::{CameraModel, Intrinsics};
use super::detection::{assign_samples, detection_loss_grads, detection_losses, visible_cell};
use super::features::{extract_features, FeatureConfig, FrustumFeatures};
use super::frame::{tracking_goal_point, FrameContext, FrameSetup};
use super::head::{HeadGradient, Optimizer, PolicyHead};
use crate::costs::{
    anchor_loss, cost_target, effective_goal, smooth_l1, smooth_l1_grad, AnchorTerms, CostWeights, PotentialParams,
    SampleLabel, TaskMode,
};
use crate::environment::EsdfGrid;
use crate::error::{invalid, Error, Result};
use crate::primitives::{LatticeConfig, PredictionVector, PrimitiveAnchor, SpeedScale, PREDICTION_DIM};
use crate::trajectory::BoundaryDerivatives;

/// One recorded training frame in world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingFrame {
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Tracking frames carry the target; frames without one train navigation.
    pub target: Option<Vector3<f64>>,
    pub goal: Option<Vector3<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub init_output_scale: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 10, init_output_scale: 0.1 }
    }
}

/// Shared, read-only training environment.
#[derive(Clone, Debug)]
pub struct TrainingEnv<'a> {
    pub grid: &'a EsdfGrid,
    pub lattice: &'a LatticeConfig,
    pub anchors: &'a [PrimitiveAnchor],
    pub scale: SpeedScale,
    pub intrinsics: Intrinsics,
    pub weights: CostWeights,
    pub potential: PotentialParams,
    pub features: FeatureConfig,
    pub standoff: f64,
}

/// A frame with labels, goal and features resolved.
#[derive(Clone, Debug)]
pub struct PreparedFrame {
    pub frame: TrainingFrame,
    pub camera: CameraModel,
    pub mode: TaskMode,
    pub goal_point: Option<Vector3<f64>>,
    pub labels: Vec<SampleLabel>,
    /// Optical-frame target when it is visible.
    pub truth_optical: Option<Vector3<f64>>,
    pub features: FrustumFeatures,
}

impl PreparedFrame {
    pub fn start(&self) -> BoundaryDerivatives {
        BoundaryDerivatives::new(self.frame.position, self.frame.velocity, self.frame.acceleration)
    }

    pub fn world_from_camera(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.frame.yaw)
    }
}

impl<'a> TrainingEnv<'a> {
    pub fn horizon(&self) -> f64 {
        2.0 * self.lattice.radius / self.scale.velocity_bound()
    }

    pub fn setup(&self, pf: &PreparedFrame) -> FrameSetup<'a> {
        FrameSetup {
            grid: self.grid,
            lattice: self.lattice,
            anchors: self.anchors,
            scale: self.scale,
            start: pf.start(),
            world_from_camera: pf.world_from_camera(),
            mode: pf.mode,
            goal_point: pf.goal_point,
            weights: self.weights,
            potential: self.potential,
        }
    }

    pub fn prepare(&self, frame: &TrainingFrame) -> Result<PreparedFrame> {
        let camera = CameraModel::level(self.intrinsics, frame.position, frame.yaw);
        let (mode, goal_point) = match (&frame.target, &frame.goal) {
            (Some(t), _) => {
                (TaskMode::Tracking, Some(tracking_goal_point(&frame.position, t, &Vector3::zeros(), self.horizon(), self.standoff)))
            }
            (None, Some(g)) => {
                (TaskMode::Navigation, Some(effective_goal(TaskMode::Navigation, &frame.position, g, self.lattice.radius)?))
            }
            (None, None) => (TaskMode::Navigation, None),
        };
        let labels = match mode {
            TaskMode::Tracking => assign_samples(frame.target.as_ref(), &camera, self.lattice, Some(self.grid)),
            TaskMode::Navigation => vec![SampleLabel::Positive; self.lattice.cell_count()],
        };
        let truth_optical = frame
            .target
            .filter(|t| visible_cell(t, &camera, Some(self.grid)).is_some())
            .map(|t| camera.to_optical(&t));
        let mut pf = PreparedFrame {
            frame: frame.clone(),
            camera,
            mode,
            goal_point,
            labels,
            truth_optical,
            features: FrustumFeatures { cells: Vec::new() },
        };
        pf.features = extract_features(&self.setup(&pf), frame.target.as_ref(), Some(&camera), &self.features);
        Ok(pf)
    }
}

/// Total loss of one frame and its gradient with respect to every cell's raw outputs.
pub fn frame_loss(env: &TrainingEnv<'_>, pf: &PreparedFrame, preds: &[PredictionVector]) -> Result<(f64, Vec<[f64; PREDICTION_DIM]>)> {
    let ctx = FrameContext::new(env.setup(pf))?;
    if preds.len() != ctx.len() {
        return Err(invalid(format!("{} predictions for {} cells", preds.len(), ctx.len())));
    }
    let w = &env.weights;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (i, pred) in preds.iter().enumerate() {
        let label = pf.labels[i];
        let costs = ctx.evaluate(i, pred)?;
        let anchor = &ctx.setup.anchors[i];
        let cell = (anchor.col, anchor.row);
        let full = pf.mode == TaskMode::Navigation || label == SampleLabel::Positive;
        let factor = if full { 1.0 } else { w.lambda_1 };
        let target = cost_target(costs.smoothness, costs.collision, costs.goal, w, pf.mode);
        let (l_tgt, l_obj) = match pf.mode {
            TaskMode::Tracking => detection_losses(pred, cell, label, pf.truth_optical.as_ref(), &pf.camera),
            TaskMode::Navigation => (0.0, 0.0),
        };
        let terms = AnchorTerms {
            j_s: costs.smoothness,
            j_c: costs.collision,
            j_g: costs.goal,
            l_cost: smooth_l1(pred.y_c - target),
            l_tgt,
            l_obj,
        };
        loss += anchor_loss(&terms, label, w, pf.mode);

        let mut g = [0.0; PREDICTION_DIM];
        let raw = ctx.raw_gradient(i, pred, &costs, full);
        for k in 0..raw.len() {
            g[k] = factor * raw[k];
        }
        g[9] = factor * smooth_l1_grad(pred.y_c - target);
        if pf.mode == TaskMode::Tracking {
            let (g_tgt, g_obj) = detection_loss_grads(pred, cell, label, pf.truth_optical.as_ref(), &pf.camera);
            let obj_w = match label {
                SampleLabel::Positive => 1.0,
                SampleLabel::Negative => w.lambda_2,
                SampleLabel::Ignored => 0.0,
            };
            let tgt_w = if label == SampleLabel::Positive { 1.0 } else { 0.0 };
            for k in 0..4 {
                g[10 + k] = tgt_w * g_tgt[k] + obj_w * g_obj[k];
            }
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Loss of a frame under the head.
pub fn head_frame_loss(head: &PolicyHead, env: &TrainingEnv<'_>, pf: &PreparedFrame) -> Result<f64> {
    let preds = head.forward(&pf.features)?;
    Ok(frame_loss(env, pf, &preds)?.0)
}

/// Mean loss over frames and its parameter gradient.
pub fn batch_gradient(head: &PolicyHead, env: &TrainingEnv<'_>, frames: &[&PreparedFrame]) -> Result<(f64, HeadGradient)> {
    if frames.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let per_frame: Vec<Result<(f64, HeadGradient)>> = frames
        .par_iter()
        .map(|pf| {
            let preds = head.forward(&pf.features)?;
            let (loss, dy) = frame_loss(env, pf, &preds)?;
            let mut grad = HeadGradient::zeros_like(head);
            for (x, g) in pf.features.cells.iter().zip(&dy) {
                head.backward_cell(x, g, &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect();
    // ordered reduction keeps results independent of the thread count
    let mut total = 0.0;
    let mut grad = HeadGradient::zeros_like(head);
    for r in per_frame {
        let (l, g) = r?;
        total += l;
        grad.add(&g);
    }
    let k = 1.0 / frames.len() as f64;
    grad.scale(k);
    Ok((total * k, grad))
}

/// One optimizer step on a batch; returns the batch loss before the step.
pub fn backward_and_step(
    head: &mut PolicyHead,
    optimizer: &mut Optimizer,
    env: &TrainingEnv<'_>,
    frames: &[&PreparedFrame],
) -> Result<f64> {
    let (loss, grad) = batch_gradient(head, env, frames)?;
    optimizer.step(head, &grad)?;
    Ok(loss)
}

/// Mean loss over all frames.
pub fn dataset_loss(head: &PolicyHead, env: &TrainingEnv<'_>, frames: &[PreparedFrame]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let losses: Vec<Result<f64>> = frames.par_iter().map(|pf| head_frame_loss(head, env, pf)).collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / frames.len() as f64)
}

/// Shuffled mini-batch epochs. Returns the mean pre-step batch loss of each epoch.
pub fn train(
    head: &mut PolicyHead,
    optimizer: &mut Optimizer,
    env: &TrainingEnv<'_>,
    frames: &[PreparedFrame],
    cfg: &TrainingConfig,
    rng: &mut impl Rng,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let batch = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(batch) {
            let refs: Vec<&PreparedFrame> = chunk.iter().map(|&i| &frames[i]).collect();
            sum += backward_and_step(head, optimizer, env, &refs)? * refs.len() as f64;
            count += refs.len();
        }
        let mean = sum / count as f64;
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    Ok(curve)
}

/// True objective of the candidate a backend would pick, the one with the
/// lowest predicted cost `y_c`.
pub fn selected_cost(env: &TrainingEnv<'_>, pf: &PreparedFrame, preds: &[PredictionVector]) -> Result<f64> {
    let ctx = FrameContext::new(env.setup(pf))?;
    let i = crate::tracker::argmin_cost(preds).ok_or_else(|| invalid("no candidate has a finite predicted cost"))?;
    Ok(ctx.objective(&ctx.evaluate(i, &preds[i])?))
}

/// Selected-candidate cost of the refiner on a frame.
pub fn refiner_selected_cost(env: &TrainingEnv<'_>, pf: &PreparedFrame, cfg: &super::refine::RefinerConfig) -> Result<f64> {
    let ctx = FrameContext::new(env.setup(pf))?;
    let preds: Vec<PredictionVector> = super::refine::refine(&ctx, None, cfg)?.into_iter().map(|c| c.pred).collect();
    let i = crate::tracker::argmin_cost(&preds).ok_or_else(|| invalid("no candidate has a finite predicted cost"))?;
    Ok(ctx.objective(&ctx.evaluate(i, &preds[i])?))
}

/// Trailing moving average with window `w`.
pub fn smoothed(curve: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    (0..curve.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            curve[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
