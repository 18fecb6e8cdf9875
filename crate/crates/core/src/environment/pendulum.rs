//! One-joint pendulum tracking a time-varying reference angle.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::{Environment, Step};
use crate::error::{ConfigError, EnvError};

/// Reference angle θ*(t) in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    /// `amplitude · sin(2π f t)`; `frequency = 0` gives a constant zero target.
    Sinusoid { amplitude: f64, frequency: f64 },
    /// Mean of two sinusoids at `f` and `ratio · f`.
    TwoTone { amplitude: f64, frequency: f64, ratio: f64 },
}

impl Reference {
    pub fn sinusoid(frequency: f64) -> Self {
        Reference::Sinusoid { amplitude: 1.0, frequency }
    }

    pub fn angle(&self, t: f64) -> f64 {
        match *self {
            Reference::Sinusoid { amplitude, frequency } => amplitude * (TAU * frequency * t).sin(),
            Reference::TwoTone { amplitude, frequency, ratio } => {
                0.5 * amplitude * ((TAU * frequency * t).sin() + (TAU * ratio * frequency * t).sin())
            }
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match *self {
            Reference::Sinusoid { amplitude, frequency } => amplitude * TAU * frequency * (TAU * frequency * t).cos(),
            Reference::TwoTone { amplitude, frequency, ratio } => {
                let (w1, w2) = (TAU * frequency, TAU * ratio * frequency);
                0.5 * amplitude * (w1 * (w1 * t).cos() + w2 * (w2 * t).cos())
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let ok = match *self {
            Reference::Sinusoid { amplitude, frequency } => amplitude.is_finite() && frequency >= 0.0,
            Reference::TwoTone { amplitude, frequency, ratio } => {
                amplitude.is_finite() && frequency >= 0.0 && ratio > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ConfigError::invalid("pendulum.reference", "frequencies must be nonnegative"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumConfig {
    pub dt: f64,
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub horizon: usize,
    pub torques: Vec<f64>,
    pub reference: Reference,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            horizon: 200,
            torques: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            reference: Reference::sinusoid(0.5),
        }
    }
}

impl PendulumConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0) {
            return Err(ConfigError::invalid("pendulum.dt", "must be positive"));
        }
        if !(self.mass > 0.0 && self.length > 0.0) {
            return Err(ConfigError::invalid("pendulum", "mass and length must be positive"));
        }
        if self.horizon == 0 {
            return Err(ConfigError::invalid("pendulum.horizon", "must be at least 1"));
        }
        if self.torques.is_empty() {
            return Err(ConfigError::invalid("pendulum.torques", "need at least one action"));
        }
        self.reference.validate()
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumSnapshot {
    theta: f64,
    theta_dot: f64,
    t: usize,
    done: bool,
    reference: Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumEnv {
    config: PendulumConfig,
    theta: f64,
    theta_dot: f64,
    t: usize,
    done: bool,
}

impl PendulumEnv {
    pub fn new(config: PendulumConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self { config, theta: 0.0, theta_dot: 0.0, t: 0, done: false })
    }

    /// Place the pendulum at an arbitrary state and time index.
    pub fn with_state(config: PendulumConfig, theta: f64, theta_dot: f64, t: usize) -> Result<Self, ConfigError> {
        let mut env = Self::new(config)?;
        env.theta = theta;
        env.theta_dot = theta_dot;
        env.t = t;
        env.done = t >= env.config.horizon;
        Ok(env)
    }

    pub fn config(&self) -> &PendulumConfig {
        &self.config
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn theta_dot(&self) -> f64 {
        self.theta_dot
    }

    fn time(&self) -> f64 {
        self.t as f64 * self.config.dt
    }

    pub fn reference_angle(&self) -> f64 {
        self.config.reference.angle(self.time())
    }
}

impl Environment for PendulumEnv {
    type Snapshot = PendulumSnapshot;

    fn action_count(&self) -> usize {
        self.config.torques.len()
    }

    fn observation_dim(&self) -> usize {
        5
    }

    fn observation(&self) -> Vec<f64> {
        let t = self.time();
        vec![
            self.theta.sin(),
            self.theta.cos(),
            self.theta_dot,
            self.config.reference.angle(t),
            self.config.reference.rate(t),
        ]
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let count = self.action_count();
        let u = *self.config.torques.get(action).ok_or(EnvError::InvalidAction { index: action, count })?;
        let c = &self.config;
        let accel = -(c.gravity / c.length) * self.theta.sin() + u / (c.mass * c.length * c.length);
        self.theta_dot += c.dt * accel;
        self.theta += c.dt * self.theta_dot;
        self.t += 1;
        self.done = self.t >= self.config.horizon;
        Ok(Step { observation: self.observation(), reward: -self.tracking_error(), done: self.done, violation: false })
    }

    fn reset(&mut self) -> Vec<f64> {
        self.theta = 0.0;
        self.theta_dot = 0.0;
        self.t = 0;
        self.done = false;
        self.observation()
    }

    fn snapshot(&self) -> PendulumSnapshot {
        PendulumSnapshot {
            theta: self.theta,
            theta_dot: self.theta_dot,
            t: self.t,
            done: self.done,
            reference: self.config.reference,
        }
    }

    fn restore(&mut self, s: &PendulumSnapshot) -> Result<(), EnvError> {
        if s.reference != self.config.reference {
            return Err(EnvError::SnapshotMismatch);
        }
        self.theta = s.theta;
        self.theta_dot = s.theta_dot;
        self.t = s.t;
        self.done = s.done;
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn time_index(&self) -> usize {
        self.t
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn tracking_error(&self) -> f64 {
        wrap_angle(self.theta - self.reference_angle()).abs()
    }

    fn normalized_error(&self) -> f64 {
        self.tracking_error() / PI
    }

    fn error_scale(&self) -> f64 {
        PI
    }

    fn set_nominal(&mut self, _nominal: bool) {}
}
