//! Batch drivers shared by the command line and the test suites.

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{BackendKind, RunConfig};
use crate::costs::TaskMode;
use crate::error::{invalid, Result};
use crate::policy::{
    generate_frames, refine, selected_cost, train, FrameContext, Intrinsics, Optimizer, PolicyHead, PreparedFrame,
    TrainingEnv, TrainingFrame,
};
use crate::primitives::build_library;
use crate::simulator::{
    build_world, navigation_world, run_navigation_episode, run_tracking_episode, tracking_world, Backend, EpisodeLog,
    EpisodeMetrics, PlanRequest, Planner, World,
};
use crate::tracker::Tracker;
use crate::trajectory::BoundaryDerivatives;

/// Planner for the configured backend, loading the head when needed.
pub fn planner_for(cfg: &RunConfig) -> Result<Planner> {
    let backend = match cfg.backend {
        BackendKind::Refiner => Backend::Refiner,
        BackendKind::Head => {
            let path = cfg.head.as_ref().ok_or_else(|| invalid("head backend needs a `head` path"))?;
            Backend::Head(Box::new(PolicyHead::load(path)?))
        }
    };
    Planner::new(cfg.planner.clone(), backend)
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub seed: u64,
    pub metrics: EpisodeMetrics,
    pub log: EpisodeLog,
}

/// One pursuit episode per seed, run in parallel; results keep seed order.
pub fn run_tracking_batch(cfg: &RunConfig, planner: &Planner) -> Result<Vec<EpisodeOutcome>> {
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let world = tracking_world(&cfg.world, &cfg.tracking, seed)?;
            let (metrics, log) = run_tracking_episode(&cfg.episode, &cfg.tracking, planner, &world, seed)?;
            Ok(EpisodeOutcome { seed, metrics, log })
        })
        .collect()
}

pub fn run_navigation_batch(cfg: &RunConfig, planner: &Planner) -> Result<Vec<EpisodeOutcome>> {
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let world = navigation_world(&cfg.world, seed)?;
            let (metrics, log) = run_navigation_episode(&cfg.episode, &cfg.navigation, planner, &world)?;
            Ok(EpisodeOutcome { seed, metrics, log })
        })
        .collect()
}

pub fn success_count(outcomes: &[EpisodeOutcome]) -> usize {
    outcomes.iter().filter(|o| o.metrics.success).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub cycles: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

/// Times full planning cycles from random free-space states of a forest.
pub fn bench(cfg: &RunConfig, planner: &Planner) -> Result<BenchReport> {
    if cfg.bench.cycles == 0 {
        return Err(invalid("bench needs at least one cycle"));
    }
    let world = build_world(&cfg.world, cfg.bench.seed, &[])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.bench.seed);
    let spec = &cfg.world.forest;
    let mut times = Vec::with_capacity(cfg.bench.cycles);
    let mut tracker = Tracker::new(cfg.episode.tracker)?;
    while times.len() < cfg.bench.cycles {
        let p = Vector3::new(
            spec.origin[0] + rng.random_range(0.0..spec.area[0]),
            spec.origin[1] + rng.random_range(0.0..spec.area[1]),
            cfg.episode.sim.altitude,
        );
        if world.grid.distance_at(&p) < 1.0 {
            continue;
        }
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let v = Vector3::new(yaw.cos(), yaw.sin(), 0.0) * rng.random_range(0.0..cfg.planner.speed);
        let req = PlanRequest {
            grid: &world.grid,
            start: BoundaryDerivatives::new(p, v, Vector3::zeros()),
            yaw,
            mode: TaskMode::Navigation,
            goal_point: Some(p + Vector3::new(yaw.cos(), yaw.sin(), 0.0) * cfg.planner.lattice.radius),
            detection: None,
            privileged_target: None,
            min_clearance: cfg.episode.sim.collision_radius * cfg.episode.sim.estop_factor,
        };
        let clock = Instant::now();
        let out = planner.plan(&req, &mut tracker)?;
        std::hint::black_box(&out);
        times.push(clock.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let p95_ms = sorted[((sorted.len() as f64 * 0.95).ceil() as usize).clamp(1, sorted.len()) - 1];
    Ok(BenchReport { cycles: times.len(), mean_ms, p95_ms, max_ms: *sorted.last().expect("non-empty") })
}

/// Forest, anchors and intrinsics a training run works in.
pub struct TrainingWorld {
    pub world: World,
    pub anchors: Vec<crate::primitives::PrimitiveAnchor>,
    pub intrinsics: Intrinsics,
}

impl TrainingWorld {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let world = build_world(&cfg.world, cfg.train.world_seed, &[])?;
        let anchors = build_library(&cfg.planner.lattice)?;
        let intrinsics = Intrinsics::for_lattice(&cfg.planner.lattice, cfg.planner.downsample)?;
        Ok(Self { world, anchors, intrinsics })
    }

    pub fn env<'a>(&'a self, cfg: &'a RunConfig) -> Result<TrainingEnv<'a>> {
        Ok(TrainingEnv {
            grid: &self.world.grid,
            lattice: &cfg.planner.lattice,
            anchors: &self.anchors,
            scale: cfg.planner.scale()?,
            intrinsics: self.intrinsics,
            weights: cfg.planner.weights,
            potential: cfg.planner.potential,
            features: cfg.planner.features,
            standoff: cfg.planner.standoff,
        })
    }

    /// Training frames and, from a disjoint seed, held-out frames.
    pub fn frames(&self, cfg: &RunConfig) -> Result<(Vec<TrainingFrame>, Vec<TrainingFrame>)> {
        let sampler = cfg.sampler()?;
        let train = generate_frames(&cfg.train.dataset, &self.world.grid, &sampler, &self.intrinsics)?;
        let held = if cfg.train.holdout_frames > 0 {
            let spec = crate::policy::DatasetSpec {
                frames: cfg.train.holdout_frames,
                seed: cfg.train.dataset.seed.wrapping_add(0x5eed),
                ..cfg.train.dataset.clone()
            };
            generate_frames(&spec, &self.world.grid, &sampler, &self.intrinsics)?
        } else {
            Vec::new()
        };
        Ok((train, held))
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub curve: Vec<f64>,
    pub head: PolicyHead,
    /// Mean objective over all candidates of held-out frames.
    pub holdout_head_cost: f64,
    pub holdout_refiner_cost: f64,
    /// Mean objective of the candidate each backend selects.
    pub holdout_head_selected: f64,
    pub holdout_refiner_selected: f64,
}

pub fn prepare_all(env: &TrainingEnv<'_>, frames: &[TrainingFrame]) -> Result<Vec<PreparedFrame>> {
    frames.iter().map(|f| env.prepare(f)).collect()
}

/// Candidate costs of the head and of the refiner on the same frames:
/// `(head_mean, refiner_mean, head_selected, refiner_selected)`.
pub fn compare_backends(
    env: &TrainingEnv<'_>,
    head: &PolicyHead,
    frames: &[PreparedFrame],
    refiner: &crate::policy::RefinerConfig,
) -> Result<(f64, f64, f64, f64)> {
    if frames.is_empty() {
        return Err(invalid("no held-out frames"));
    }
    let mut acc = [0.0; 4];
    for pf in frames {
        let ctx = FrameContext::new(env.setup(pf))?;
        let preds = head.forward(&pf.features)?;
        let mut head_sum = 0.0;
        for (i, p) in preds.iter().enumerate() {
            head_sum += ctx.objective(&ctx.evaluate(i, p)?);
        }
        let refined = refine(&ctx, None, refiner)?;
        let refined_preds: Vec<_> = refined.iter().map(|c| c.pred).collect();
        acc[0] += head_sum / preds.len() as f64;
        acc[1] += refined.iter().map(|c| c.objective).sum::<f64>() / refined.len() as f64;
        acc[2] += selected_cost(env, pf, &preds)?;
        acc[3] += selected_cost(env, pf, &refined_preds)?;
    }
    let n = frames.len() as f64;
    Ok((acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n))
}

/// Generates the dataset, trains a fresh head and compares it with the refiner.
pub fn train_and_compare(cfg: &RunConfig, on_epoch: impl FnMut(usize, f64)) -> Result<TrainReport> {
    let tw = TrainingWorld::new(cfg)?;
    let env = tw.env(cfg)?;
    let (train_frames, held) = tw.frames(cfg)?;
    let prepared = prepare_all(&env, &train_frames)?;
    let held = prepare_all(&env, &held)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut head = PolicyHead::random(&PolicyHead::default_sizes(), cfg.train.schedule.init_output_scale, &mut rng)?;
    let mut optimizer = Optimizer::new(cfg.train.optimizer)?;
    let curve = train(&mut head, &mut optimizer, &env, &prepared, &cfg.train.schedule, &mut rng, on_epoch)?;
    let (hc, rc, hs, rs) = if held.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        compare_backends(&env, &head, &held, &cfg.planner.refiner)?
    };
    Ok(TrainReport {
        curve,
        head,
        holdout_head_cost: hc,
        holdout_refiner_cost: rc,
        holdout_head_selected: hs,
        holdout_refiner_selected: rs,
    })
}
