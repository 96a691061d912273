//! Deterministic point-mass flight simulation: dynamics with drag and
//! first-order attitude response, scripted evaders, synthetic detections,
//! closed-loop episodes and their metrics.

mod dynamics;
mod episode;
mod evader;
mod metrics;
mod planner;
mod sensing;

pub use dynamics::{step, DynamicsConfig, QuadState};
pub use episode::{
    build_world, navigation_world, world_geometry, run_navigation_episode, run_tracking_episode, spawn_point, tracking_world, EpisodeSettings, NavigationScenario, SimConfig,
    TrackingScenario, World, WorldConfig,
};
pub use evader::{plan_planar_path, Evader, EvaderConfig};
pub use metrics::{compute_metrics, write_log_csv, write_relative_positions, EpisodeLog, EpisodeMetrics, FailureClass, LogRow};
pub use planner::{braking_trajectory, trajectory_clearance, Backend, PlanOutcome, PlanRequest, Planner, PlannerConfig};
pub use sensing::{encode_detection, simulate_detection, Detection, DetectionNoise};
