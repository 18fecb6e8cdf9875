//! Tracking environments: the wall-following aerial manipulator and a
//! one-joint pendulum sandbox. Both support value snapshots so a planner
//! can roll out candidate action sequences on a private copy.

mod curve;
mod manipulator;
mod pendulum;

pub use curve::{
    generate_base_path, generate_curve, nearest_point, tracking_error, BasePath, CurveKind, CurveSpec, SampledCurve,
};
pub use manipulator::{
    ActionTable, Disturbance, EnvConfig, ManipulatorEnv, ManipulatorSnapshot, RewardWeights, StateVector,
};
pub use pendulum::{wrap_angle, PendulumConfig, PendulumEnv, PendulumSnapshot, Reference};

use crate::error::EnvError;

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// A joint limit was hit during this step.
    pub violation: bool,
}

/// Common surface used by the planner and the training loop.
pub trait Environment: Clone {
    type Snapshot: Clone;

    fn action_count(&self) -> usize;
    fn observation_dim(&self) -> usize;
    fn observation(&self) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<Step, EnvError>;
    /// Start a new episode. Stochastic state (the RNG) carries over so that
    /// consecutive episodes differ.
    fn reset(&mut self) -> Vec<f64>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: &Self::Snapshot) -> Result<(), EnvError>;
    fn is_done(&self) -> bool;
    fn time_index(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Tracking error of the current state in the env's natural unit.
    fn tracking_error(&self) -> f64;
    /// Tracking error scaled to [0, 1].
    fn normalized_error(&self) -> f64;
    /// Error at which the normalized error saturates.
    fn error_scale(&self) -> f64;
    /// When set, stochastic disturbances are suppressed. Planning copies use
    /// this so rollouts see the nominal model.
    fn set_nominal(&mut self, nominal: bool);
}

pub fn normalize_error(e: f64, e_max: f64) -> f64 {
    (e / e_max).min(1.0)
}

/// Per-step reward: tracking term minus effort, smoothness and limit penalties.
pub fn reward(
    normalized_error: f64,
    tau: &nalgebra::Vector3<f64>,
    qdot: &nalgebra::Vector3<f64>,
    in_limits: bool,
    weights: &RewardWeights,
) -> f64 {
    let effort: f64 = tau.iter().map(|t| t.abs()).sum();
    let violation = if in_limits { 0.0 } else { 1.0 };
    weights.position * (1.0 - normalized_error)
        - weights.torque * effort
        - weights.smoothness * qdot.norm_squared()
        - weights.violation * violation
}
