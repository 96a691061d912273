//! Randomized finite-difference checks of every analytic cost gradient.

use std::io::Write;
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::costs::{collision, goal, smoothness, CandidateFrame, CostEngine, CostWeights, EndStateGrad, PotentialParams};
use crate::environment::{EsdfGrid, GridGeometry, PointCloud};
use crate::error::Result;
use crate::primitives::{build_library, LatticeConfig, PredictionVector, SpeedScale, TRAJ_VARS};
use crate::trajectory::{BoundaryDerivatives, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Smoothness,
    Goal,
    Collision,
    ChainRule,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Smoothness, Category::Goal, Category::Collision, Category::ChainRule];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Smoothness => "smoothness",
            Category::Goal => "goal",
            Category::Collision => "collision",
            Category::ChainRule => "chain-rule",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub fixtures: usize,
    pub smoothness_tol: f64,
    pub goal_tol: f64,
    pub collision_tol: f64,
    pub chain_rule_tol: f64,
    /// Central-difference step for the collision and chain-rule checks.
    pub step: f64,
    /// Central-difference step for the quadratic costs.
    pub quadratic_step: f64,
    /// Test hook: perturbs the analytic gradient of one category.
    #[serde(skip)]
    pub corrupt: Option<Category>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            fixtures: 200,
            smoothness_tol: 1e-6,
            goal_tol: 1e-9,
            collision_tol: 1e-3,
            chain_rule_tol: 1e-3,
            step: 1e-4,
            quadratic_step: 1e-3,
            corrupt: None,
        }
    }
}

impl GradCheckConfig {
    pub fn tolerance(&self, c: Category) -> f64 {
        match c {
            Category::Smoothness => self.smoothness_tol,
            Category::Goal => self.goal_tol,
            Category::Collision => self.collision_tol,
            Category::ChainRule => self.chain_rule_tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixtureResult {
    pub category: Category,
    pub index: usize,
    pub rel_error: f64,
    pub gradient_norm: f64,
    /// Some finite-difference pair crosses a cell face or the potential cutoff.
    pub straddles: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub results: Vec<FixtureResult>,
}

impl GradCheckReport {
    pub fn of(&self, c: Category) -> impl Iterator<Item = &FixtureResult> {
        self.results.iter().filter(move |r| r.category == c)
    }

    /// Fixtures that count toward the verdict.
    pub fn checked(&self, c: Category) -> usize {
        self.of(c).filter(|r| !r.straddles).count()
    }

    pub fn max_error(&self, c: Category) -> f64 {
        self.of(c).filter(|r| !r.straddles).map(|r| r.rel_error).fold(0.0, f64::max)
    }

    pub fn category_passes(&self, c: Category) -> bool {
        self.of(c).all(|r| r.pass || r.straddles)
    }

    pub fn passed(&self) -> bool {
        Category::ALL.iter().all(|&c| self.category_passes(c))
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "category,fixture,rel_error,gradient_norm,straddles,pass")?;
        for r in &self.results {
            writeln!(w, "{},{},{:e},{:e},{},{}", r.category.as_str(), r.index, r.rel_error, r.gradient_norm, r.straddles, r.pass)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn summary(&self, cfg: &GradCheckConfig) -> String {
        let mut s = String::new();
        for c in Category::ALL {
            s.push_str(&format!(
                "{:<11} fixtures {:>4}  checked {:>4}  max rel err {:.3e}  tol {:.0e}  {}\n",
                c.as_str(),
                self.of(c).count(),
                self.checked(c),
                self.max_error(c),
                cfg.tolerance(c),
                if self.category_passes(c) { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

fn vector_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

fn central_difference(x: &[f64], h: f64, f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + h;
            let fp = f(&buf);
            buf[i] = x[i] - h;
            let fm = f(&buf);
            buf[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn end_from(x: &[f64]) -> BoundaryDerivatives {
    BoundaryDerivatives::new(Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5]), Vector3::new(x[6], x[7], x[8]))
}

fn end_to(e: &BoundaryDerivatives) -> Vec<f64> {
    EndStateGrad { position: e.position, velocity: e.velocity, acceleration: e.acceleration }.to_array().to_vec()
}

fn corrupt(g: &mut [f64], on: bool) {
    if on {
        g[0] += 1e-2 * (1.0 + g[0].abs());
    }
}

fn random_vec(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    let n = Normal::new(0.0, scale).expect("positive scale");
    Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// A small world of vertical posts at 0.2 m resolution.
pub fn fixture_world(seed: u64) -> Result<EsdfGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for _ in 0..4 {
        let c = Vector3::new(rng.random_range(1.0..7.0), rng.random_range(-3.0..3.0), 0.0);
        for k in 0..=20 {
            pts.push(Vector3::new(c.x, c.y, k as f64 * 0.2));
        }
    }
    let geom = GridGeometry::covering(Vector3::new(-2.0, -5.0, -1.0), Vector3::new(10.0, 5.0, 5.0), 0.2)?;
    EsdfGrid::build(&PointCloud::new(pts)?, geom, 2.5)
}

/// True when some sample of the trajectories between `lo` and `hi` end states
/// lands on opposite sides of a cell face or of the potential cutoff.
fn straddles(
    grid: &EsdfGrid,
    params: &PotentialParams,
    start: &BoundaryDerivatives,
    a: &BoundaryDerivatives,
    b: &BoundaryDerivatives,
    horizon: f64,
) -> bool {
    let (Ok(ta), Ok(tb)) = (Trajectory::from_boundary(*start, *a, horizon), Trajectory::from_boundary(*start, *b, horizon)) else {
        return true;
    };
    let g = grid.geometry();
    let dt = horizon / params.intervals as f64;
    (1..=params.intervals).any(|k| {
        let t = k as f64 * dt;
        let (pa, pb) = (ta.eval_clamped(t, 0), tb.eval_clamped(t, 0));
        let face = (0..3).any(|ax| {
            let ua = (pa[ax] - g.origin[ax]) / g.resolution;
            let ub = (pb[ax] - g.origin[ax]) / g.resolution;
            ua.floor() != ub.floor() || (ua - ua.round()).abs() < 1e-7
        });
        let (da, db) = (grid.query(&pa), grid.query(&pb));
        let cut = (da.distance < params.cutoff) != (db.distance < params.cutoff);
        face || cut || da.clamped || db.clamped
    })
}

fn any_straddle(
    grid: &EsdfGrid,
    params: &PotentialParams,
    start: &BoundaryDerivatives,
    x: &[f64],
    h: f64,
    horizon: f64,
    to_end: &dyn Fn(&[f64]) -> BoundaryDerivatives,
) -> bool {
    let mut buf = x.to_vec();
    (0..x.len()).any(|i| {
        buf[i] = x[i] + h;
        let a = to_end(&buf);
        buf[i] = x[i] - h;
        let b = to_end(&buf);
        buf[i] = x[i];
        straddles(grid, params, start, &a, &b, horizon)
    })
}

fn random_start(rng: &mut impl Rng) -> BoundaryDerivatives {
    BoundaryDerivatives::new(
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..2.5)),
        random_vec(rng, 1.5),
        random_vec(rng, 1.0),
    )
}

/// Runs all four categories and returns per-fixture results. Fixtures whose
/// difference stencil straddles a cell face are recorded but regenerated, so
/// each category holds at least `fixtures` counted cases.
pub fn run_grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    let mut push = |category: Category, index: usize, analytic: &[f64], numeric: &[f64], straddles: bool| {
        let rel_error = vector_error(analytic, numeric);
        let gradient_norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        report.results.push(FixtureResult {
            category,
            index,
            rel_error,
            gradient_norm,
            straddles,
            pass: rel_error < cfg.tolerance(category),
        });
    };

    for i in 0..cfg.fixtures {
        let horizon = rng.random_range(0.5..3.0);
        let start = random_start(&mut rng);
        let end = BoundaryDerivatives::new(random_vec(&mut rng, 3.0), random_vec(&mut rng, 2.0), random_vec(&mut rng, 2.0));
        let (_, g) = smoothness(&start, &end, horizon)?;
        let mut analytic = g.to_array().to_vec();
        corrupt(&mut analytic, cfg.corrupt == Some(Category::Smoothness));
        let numeric = central_difference(&end_to(&end), cfg.quadratic_step, &mut |x| {
            smoothness(&start, &end_from(x), horizon).map(|(j, _)| j).unwrap_or(f64::NAN)
        });
        push(Category::Smoothness, i, &analytic, &numeric, false);
    }

    for i in 0..cfg.fixtures {
        let p = random_vec(&mut rng, 4.0);
        let g_p = random_vec(&mut rng, 4.0);
        let (_, g) = goal(&p, &g_p);
        let mut analytic = g.as_slice().to_vec();
        corrupt(&mut analytic, cfg.corrupt == Some(Category::Goal));
        let numeric = central_difference(p.as_slice(), cfg.quadratic_step, &mut |x| goal(&Vector3::new(x[0], x[1], x[2]), &g_p).0);
        push(Category::Goal, i, &analytic, &numeric, false);
    }

    let worlds: Vec<EsdfGrid> = (0..4).map(|k| fixture_world(cfg.seed.wrapping_add(k))).collect::<Result<_>>()?;
    let params = PotentialParams::default();

    let (mut made, mut index) = (0, 0);
    while made < cfg.fixtures {
        let grid = &worlds[index % worlds.len()];
        let horizon = rng.random_range(0.8..2.0);
        let start = BoundaryDerivatives::new(
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0), rng.random_range(1.0..3.0)),
            Vector3::new(rng.random_range(1.0..4.0), 0.0, 0.0) + random_vec(&mut rng, 0.5),
            random_vec(&mut rng, 0.5),
        );
        let end = BoundaryDerivatives::new(
            Vector3::new(rng.random_range(3.0..8.0), rng.random_range(-3.0..3.0), rng.random_range(1.0..3.0)),
            Vector3::new(rng.random_range(0.5..3.0), 0.0, 0.0) + random_vec(&mut rng, 0.5),
            random_vec(&mut rng, 0.5),
        );
        let traj = Trajectory::from_boundary(start, end, horizon)?;
        let (j, g) = collision(&traj, grid, &params)?;
        if j == 0.0 {
            continue;
        }
        let x = end_to(&end);
        let numeric = central_difference(&x, cfg.step, &mut |x| {
            Trajectory::from_boundary(start, end_from(x), horizon)
                .and_then(|t| collision(&t, grid, &params))
                .map(|(j, _)| j)
                .unwrap_or(f64::NAN)
        });
        let st = any_straddle(grid, &params, &start, &x, cfg.step, horizon, &end_from);
        let mut analytic = g.to_array().to_vec();
        corrupt(&mut analytic, cfg.corrupt == Some(Category::Collision));
        push(Category::Collision, index, &analytic, &numeric, st);
        index += 1;
        made += usize::from(!st);
    }

    let lattice = LatticeConfig::default();
    let anchors = build_library(&lattice)?;
    let scale = SpeedScale::new(rng.random_range(0.8..1.6), 6.0, 6.0)?;
    let weights = CostWeights::default();
    let (mut made, mut index) = (0, 0);
    while made < cfg.fixtures {
        let grid = &worlds[index % worlds.len()];
        let anchor = &anchors[rng.random_range(0..anchors.len())];
        let start = random_start(&mut rng);
        let frame = CandidateFrame {
            anchor,
            lattice: &lattice,
            scale,
            world_from_camera: Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(-0.4..0.4)),
            start,
        };
        let engine = CostEngine::new(rng.random_range(0.8..2.0), grid, params)?;
        let goal_point = start.position + Vector3::new(5.0, 0.0, 0.0) + random_vec(&mut rng, 1.0);
        let mut pred = PredictionVector::default();
        let vars: [f64; TRAJ_VARS] = std::array::from_fn(|_| rng.random_range(-1.2..1.2));
        pred.set_trajectory_vars(&vars);
        let costs = engine.evaluate(&start, &frame.end_state(&pred), Some(&goal_point))?;
        if costs.collision == 0.0 && index % 2 == 0 {
            // keep at least half of the fixtures near obstacles
            continue;
        }
        let to_end = |x: &[f64]| {
            let mut p = pred;
            p.set_trajectory_vars(&std::array::from_fn(|i| x[i]));
            frame.end_state(&p)
        };
        let numeric = central_difference(&vars, cfg.step, &mut |x| {
            engine.evaluate(&start, &to_end(x), Some(&goal_point)).map(|c| c.weighted(&weights, true)).unwrap_or(f64::NAN)
        });
        let st = any_straddle(grid, &params, &start, &vars, cfg.step, engine.horizon(), &to_end);
        let mut analytic = crate::costs::chain_rule(&costs.weighted_grad(&weights, true), &pred, &frame).to_vec();
        corrupt(&mut analytic, cfg.corrupt == Some(Category::ChainRule));
        push(Category::ChainRule, index, &analytic, &numeric, st);
        index += 1;
        made += usize::from(!st);
    }
    Ok(report)
}
