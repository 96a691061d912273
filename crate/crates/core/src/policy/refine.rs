use serde::{Deserialize, Serialize};

use super::frame::FrameContext;
use crate::costs::CostBreakdown;
use crate::error::{invalid, Result};
use crate::primitives::{PredictionVector, TRAJ_VARS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinerConfig {
    pub steps: usize,
    pub initial_step: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self { steps: 30, initial_step: 0.1, armijo: 1e-4, shrink: 0.5, max_backtracks: 30 }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("refiner needs at least one step"));
        }
        if !(self.initial_step > 0.0 && self.armijo > 0.0 && self.armijo < 1.0 && self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(invalid("refiner step, Armijo constant and shrink factor out of range"));
        }
        Ok(())
    }
}

/// One refined candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub pred: PredictionVector,
    pub costs: CostBreakdown,
    pub initial_objective: f64,
    pub objective: f64,
    pub feasible: bool,
}

fn descend(ctx: &FrameContext<'_>, index: usize, init: PredictionVector, cfg: &RefinerConfig) -> Candidate {
    let eval = |p: &PredictionVector| -> Option<(CostBreakdown, f64)> {
        let c = ctx.evaluate(index, p).ok()?;
        let f = ctx.objective(&c);
        (c.is_finite() && f.is_finite()).then_some((c, f))
    };
    let mut pred = init;
    let Some((mut costs, mut f)) = eval(&pred) else {
        return Candidate { pred, costs: CostBreakdown::default(), initial_objective: f64::NAN, objective: f64::NAN, feasible: false };
    };
    let initial = f;
    let mut eta = cfg.initial_step;
    for _ in 0..cfg.steps {
        let g = ctx.raw_gradient(index, &pred, &costs, true);
        let g2: f64 = g.iter().map(|x| x * x).sum();
        if !(g2 > 0.0) || !g2.is_finite() {
            break;
        }
        let x = pred.trajectory_vars();
        let mut accepted = false;
        for _ in 0..cfg.max_backtracks {
            let trial_vars: [f64; TRAJ_VARS] = std::array::from_fn(|i| x[i] - eta * g[i]);
            let mut trial = pred;
            trial.set_trajectory_vars(&trial_vars);
            if let Some((c, ft)) = eval(&trial) {
                if ft <= f - cfg.armijo * eta * g2 {
                    pred = trial;
                    costs = c;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            eta *= cfg.shrink;
        }
        if !accepted {
            break;
        }
        eta /= cfg.shrink;
    }
    pred.y_c = f;
    Candidate { pred, costs, initial_objective: initial, objective: f, feasible: true }
}

/// Per-anchor line-searched gradient descent on the raw trajectory variables.
/// `init` defaults to all-zero predictions. The predicted cost `y_c` of each
/// result is set to its final objective.
pub fn refine(ctx: &FrameContext<'_>, init: Option<&[PredictionVector]>, cfg: &RefinerConfig) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    if let Some(init) = init {
        if init.len() != ctx.len() {
            return Err(invalid(format!("{} initial predictions for {} anchors", init.len(), ctx.len())));
        }
    }
    Ok((0..ctx.len())
        .map(|i| descend(ctx, i, init.map_or_else(PredictionVector::default, |p| p[i]), cfg))
        .collect())
}
