use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use petgraph::algo::astar;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{raycast, EsdfGrid};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaderConfig {
    /// Escape speed, m/s.
    pub speed: f64,
    /// Distance from start to the initial goal, m.
    pub goal_distance: f64,
    /// Clearance kept from obstacles, m.
    pub clearance: f64,
    /// Cell size of the planar search grid, m.
    pub plan_resolution: f64,
    pub switch_goal: bool,
    /// Switch time window as fractions of the nominal run time.
    pub switch_window: [f64; 2],
    /// Heading change of the new goal, rad (magnitude range, random sign).
    pub switch_angle: [f64; 2],
}

impl Default for EvaderConfig {
    fn default() -> Self {
        Self {
            speed: 3.0,
            goal_distance: 40.0,
            clearance: 0.8,
            plan_resolution: 0.4,
            switch_goal: true,
            switch_window: [0.25, 0.6],
            switch_angle: [0.3, 0.8],
        }
    }
}

impl EvaderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed >= 0.0 && self.goal_distance > 0.0 && self.clearance >= 0.0 && self.plan_resolution > 0.0) {
            return Err(invalid("evader speed, goal distance, clearance and resolution out of range"));
        }
        if !(self.switch_window[0] <= self.switch_window[1] && self.switch_angle[0] <= self.switch_angle[1]) {
            return Err(invalid("evader switch ranges must be ordered"));
        }
        Ok(())
    }
}

/// Shortest free polyline at fixed altitude over an 8-connected grid, then
/// greedy line-of-sight shortcutting.
pub fn plan_planar_path(
    grid: &EsdfGrid,
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    clearance: f64,
    resolution: f64,
) -> Result<Vec<Vector3<f64>>> {
    let geom = grid.geometry();
    let lo = geom.origin;
    let hi = geom.max_corner();
    let z = start.z;
    let nx = ((hi.x - lo.x) / resolution).floor() as i64 + 1;
    let ny = ((hi.y - lo.y) / resolution).floor() as i64 + 1;
    let cell_pos = |i: i64, j: i64| Vector3::new(lo.x + i as f64 * resolution, lo.y + j as f64 * resolution, z);
    let free = |i: i64, j: i64| grid.distance_at(&cell_pos(i, j)) >= clearance;
    let to_cell = |p: &Vector3<f64>| {
        (
            (((p.x - lo.x) / resolution).round() as i64).clamp(0, nx - 1),
            (((p.y - lo.y) / resolution).round() as i64).clamp(0, ny - 1),
        )
    };
    let nearest_free = |c: (i64, i64)| -> Option<(i64, i64)> {
        for radius in 0..40i64 {
            let mut best: Option<((i64, i64), i64)> = None;
            for di in -radius..=radius {
                for dj in -radius..=radius {
                    if di.abs().max(dj.abs()) != radius {
                        continue;
                    }
                    let (i, j) = (c.0 + di, c.1 + dj);
                    if i >= 0 && j >= 0 && i < nx && j < ny && free(i, j) {
                        let d2 = di * di + dj * dj;
                        if best.is_none_or(|(_, b)| d2 < b) {
                            best = Some(((i, j), d2));
                        }
                    }
                }
            }
            if let Some((c, _)) = best {
                return Some(c);
            }
        }
        None
    };
    let s = nearest_free(to_cell(start)).ok_or_else(|| invalid("no free cell near evader start"))?;
    let g = nearest_free(to_cell(goal)).ok_or_else(|| invalid("no free cell near evader goal"))?;

    let mut graph = UnGraph::<(i64, i64), f64>::new_undirected();
    let mut index: HashMap<(i64, i64), NodeIndex> = HashMap::new();
    for i in 0..nx {
        for j in 0..ny {
            if free(i, j) {
                index.insert((i, j), graph.add_node((i, j)));
            }
        }
    }
    for (&(i, j), &a) in &index {
        for (di, dj) in [(1, 0), (0, 1), (1, 1), (1, -1)] {
            if let Some(&b) = index.get(&(i + di, j + dj)) {
                graph.add_edge(a, b, ((di * di + dj * dj) as f64).sqrt());
            }
        }
    }
    let (si, gi) = (index[&s], index[&g]);
    let (_, nodes) = astar(
        &graph,
        si,
        |n| n == gi,
        |e| *e.weight(),
        |n| {
            let (i, j) = graph[n];
            (((i - g.0).pow(2) + (j - g.1).pow(2)) as f64).sqrt()
        },
    )
    .ok_or_else(|| invalid("evader goal is not reachable"))?;
    let raw: Vec<Vector3<f64>> = nodes.iter().map(|n| cell_pos(graph[*n].0, graph[*n].1)).collect();

    let mut path = vec![raw[0]];
    let mut k = 0;
    while k + 1 < raw.len() {
        let mut next = k + 1;
        for m in (k + 2..raw.len()).rev() {
            if raycast(grid, &raw[k], &raw[m], clearance) {
                next = m;
                break;
            }
        }
        path.push(raw[next]);
        k = next;
    }
    Ok(path)
}

/// Scripted target: constant-speed traversal of a planned polyline with an
/// optional seeded mid-run goal switch.
#[derive(Clone, Debug)]
pub struct Evader {
    pub config: EvaderConfig,
    path: Vec<Vector3<f64>>,
    /// Arc length at each path vertex.
    arc: Vec<f64>,
    traveled: f64,
    goal: Vector3<f64>,
    elapsed: f64,
    switch_at: Option<f64>,
    switch_heading: f64,
    velocity: Vector3<f64>,
}

impl Evader {
    pub fn new(grid: &EsdfGrid, start: Vector3<f64>, heading: f64, config: EvaderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let goal = start + Vector3::new(heading.cos(), heading.sin(), 0.0) * config.goal_distance;
        let (switch_at, switch_heading) = if config.switch_goal && config.speed > 0.0 {
            let nominal = config.goal_distance / config.speed;
            let frac = rng.random_range(config.switch_window[0]..=config.switch_window[1]);
            let mag = rng.random_range(config.switch_angle[0]..=config.switch_angle[1]);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            (Some(frac * nominal), heading + sign * mag)
        } else {
            (None, heading)
        };
        let mut ev = Self {
            config,
            path: Vec::new(),
            arc: Vec::new(),
            traveled: 0.0,
            goal,
            elapsed: 0.0,
            switch_at,
            switch_heading,
            velocity: Vector3::zeros(),
        };
        ev.replan(grid, start)?;
        Ok(ev)
    }

    fn replan(&mut self, grid: &EsdfGrid, from: Vector3<f64>) -> Result<()> {
        let mut path = plan_planar_path(grid, &from, &self.goal, self.config.clearance, self.config.plan_resolution)?;
        path[0] = from;
        let mut arc = vec![0.0];
        for w in path.windows(2) {
            arc.push(arc.last().expect("non-empty") + (w[1] - w[0]).norm());
        }
        self.path = path;
        self.arc = arc;
        self.traveled = 0.0;
        Ok(())
    }

    pub fn position(&self) -> Vector3<f64> {
        self.point_at(self.traveled)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.velocity
    }

    pub fn goal(&self) -> Vector3<f64> {
        *self.path.last().expect("non-empty path")
    }

    pub fn path(&self) -> &[Vector3<f64>] {
        &self.path
    }

    pub fn finished(&self) -> bool {
        self.traveled >= *self.arc.last().expect("non-empty")
    }

    fn point_at(&self, s: f64) -> Vector3<f64> {
        let total = *self.arc.last().expect("non-empty");
        let s = s.clamp(0.0, total);
        let k = self.arc.partition_point(|a| *a <= s).clamp(1, self.path.len().max(2) - 1);
        if self.path.len() == 1 {
            return self.path[0];
        }
        let (a0, a1) = (self.arc[k - 1], self.arc[k]);
        let t = if a1 > a0 { (s - a0) / (a1 - a0) } else { 0.0 };
        self.path[k - 1] + (self.path[k] - self.path[k - 1]) * t
    }

    pub fn step(&mut self, grid: &EsdfGrid, dt: f64) -> Result<()> {
        self.elapsed += dt;
        if let Some(t) = self.switch_at {
            if self.elapsed >= t {
                self.switch_at = None;
                let here = self.position();
                let remaining = (self.config.goal_distance - self.elapsed * self.config.speed).max(self.config.goal_distance * 0.3);
                let h = self.switch_heading;
                let mut goal = here + Vector3::new(h.cos(), h.sin(), 0.0) * remaining;
                // keep the new goal inside the mapped area
                let geom = grid.geometry();
                let margin = 2.0;
                goal.x = goal.x.clamp(geom.origin.x + margin, geom.max_corner().x - margin);
                goal.y = goal.y.clamp(geom.origin.y + margin, geom.max_corner().y - margin);
                self.goal = goal;
                self.replan(grid, here)?;
            }
        }
        let before = self.position();
        self.traveled += self.config.speed * dt;
        let after = self.position();
        self.velocity = (after - before) / dt;
        Ok(())
    }

    /// Planar heading of the path near the current point.
    pub fn heading(&self) -> f64 {
        let ahead = self.point_at(self.traveled + 0.5) - self.position();
        let v = Vector2::new(ahead.x, ahead.y);
        if v.norm() < 1e-9 {
            0.0
        } else {
            v.y.atan2(v.x)
        }
    }
}
