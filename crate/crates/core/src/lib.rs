//! Simulation and decision-time planning for a UAV carrying an overhead
//! 3-DoF arm: coupled kinematics and dynamics, tracking environments, MLP and
//! Transformer double-DQN critics, beam search with conservative leaf values,
//! and an online meta-policy that picks the beam width and depth.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod environment;
pub mod error;
pub mod geometry;
pub mod learner;
pub mod meta;
pub mod planner;
pub mod valuenet;

pub use error::{ConfigError, DynamicsError, EnvError, LearnError};
