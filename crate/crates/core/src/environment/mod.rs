//! Privileged world model: obstacle points, the truncated distance field
//! built from them, procedural forests and visibility checks.

mod cloud;
mod esdf;
mod forest;

pub use cloud::PointCloud;
pub use esdf::{raycast, EsdfGrid, EsdfSample, GridGeometry, ESDF_MAGIC};
pub use forest::{forest_from_trunks, generate_forest, sample_trunks, Forest, ForestSpec};

/// Default truncation distance of the field, meters.
pub const DEFAULT_TRUNCATION: f64 = 4.0;
