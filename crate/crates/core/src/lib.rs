//! Primitive-anchored trajectory planning for a quadrotor tracking a moving
//! target through clutter: trajectory algebra, the anchor lattice, a
//! distance-field world model, differentiable costs, the learned planning
//! head, an EKF target tracker, flatness-based control and a closed-loop
//! simulator.

pub mod config;
pub mod control;
pub mod costs;
pub mod environment;
pub mod experiments;
pub mod error;
pub mod gradcheck;
pub mod policy;
pub mod primitives;
pub mod simulator;
pub mod tracker;
pub mod trajectory;

pub use error::{Error, Result};
