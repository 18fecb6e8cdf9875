use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::curve::{generate_base_path, generate_curve, tracking_error, BasePath, CurveSpec, SampledCurve};
use super::{normalize_error, reward, Environment, Step};
use crate::dynamics::{
    forward_dynamics, integrate_joints, pid_update, pitch_moment, pitch_step, JointState, ManipulatorParams, PidGains,
    PidState, PitchParams, PitchState,
};
use crate::error::{ConfigError, EnvError};
use crate::geometry::{rot_y, world_pose, JointAngles, LinkGeometry, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub position: f64,
    pub torque: f64,
    pub smoothness: f64,
    pub violation: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { position: 1.0, torque: 0.01, smoothness: 0.001, violation: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Disturbance {
    None,
    /// With the given per-step probability, add a moment drawn uniformly
    /// from `[-magnitude, magnitude]` to the pitch channel.
    Gust {
        magnitude: f64,
        probability: f64,
    },
}

impl Default for Disturbance {
    fn default() -> Self {
        Disturbance::Gust { magnitude: 0.5, probability: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub dt: f64,
    pub horizon: usize,
    pub e_max: f64,
    pub weights: RewardWeights,
    /// Torque bins per joint.
    pub n_a: usize,
    pub standoff: f64,
    pub disturbance: Disturbance,
    pub seed: u64,
    pub arm: ManipulatorParams,
    pub pitch: PitchParams,
    pub pid: PidGains,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            horizon: 1000,
            e_max: 1.0,
            weights: RewardWeights::default(),
            n_a: 3,
            standoff: 0.6,
            disturbance: Disturbance::default(),
            seed: 0,
            arm: ManipulatorParams::default(),
            pitch: PitchParams::default(),
            pid: PidGains::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ConfigError::invalid("env.dt", "must be positive"));
        }
        if self.horizon == 0 {
            return Err(ConfigError::invalid("env.horizon", "must be at least 1"));
        }
        if !(self.e_max > 0.0) {
            return Err(ConfigError::invalid("env.e_max", "must be positive"));
        }
        let w = &self.weights;
        if [w.position, w.torque, w.smoothness, w.violation].iter().any(|x| !(*x >= 0.0)) {
            return Err(ConfigError::invalid("env.weights", "weights must be nonnegative"));
        }
        if self.n_a < 2 {
            return Err(ConfigError::invalid("env.n_a", "need at least two bins per joint"));
        }
        if let Disturbance::Gust { magnitude, probability } = self.disturbance {
            if !(magnitude >= 0.0) || !(0.0..=1.0).contains(&probability) {
                return Err(ConfigError::invalid("env.disturbance", "magnitude ≥ 0 and probability in [0, 1]"));
            }
        }
        self.arm.validate()?;
        self.pitch.validate()?;
        self.pid.validate()?;
        Ok(())
    }
}

/// Discrete torque triples, indexed lexicographically over per-joint bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTable {
    torques: Vec<Vector3<f64>>,
}

impl ActionTable {
    pub fn new(n_a: usize, limits: [f64; 2]) -> Self {
        let [lo, hi] = limits;
        let bins: Vec<f64> = (0..n_a).map(|i| lo + (hi - lo) * i as f64 / (n_a - 1) as f64).collect();
        let mut torques = Vec::with_capacity(n_a.pow(3));
        for &a in &bins {
            for &b in &bins {
                for &c in &bins {
                    torques.push(Vector3::new(a, b, c));
                }
            }
        }
        Self { torques }
    }

    pub fn len(&self) -> usize {
        self.torques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.torques.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Vector3<f64>> {
        self.torques.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.torques.iter()
    }
}

/// Joint angles, joint rates, world end-effector position and tracking error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector(pub [f64; 10]);

impl StateVector {
    pub const DIM: usize = 10;

    pub fn ee_position(&self) -> Vector3<f64> {
        Vector3::new(self.0[6], self.0[7], self.0[8])
    }

    pub fn error(&self) -> f64 {
        self.0[9]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }
}

/// Everything that does not change during an episode.
#[derive(Debug)]
struct Static {
    config: EnvConfig,
    curve: SampledCurve,
    base_path: BasePath,
    actions: ActionTable,
    initial: JointState,
    fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorSnapshot {
    joints: JointState,
    pitch: PitchState,
    pid: PidState,
    t: usize,
    done: bool,
    state: StateVector,
    rng: ChaCha8Rng,
    fingerprint: u64,
}

#[derive(Debug, Clone)]
pub struct ManipulatorEnv {
    fixed: Arc<Static>,
    joints: JointState,
    pitch: PitchState,
    pid: PidState,
    t: usize,
    done: bool,
    state: StateVector,
    rng: ChaCha8Rng,
    nominal: bool,
}

impl ManipulatorEnv {
    pub fn new(config: &EnvConfig, curve: &CurveSpec) -> Result<Self, ConfigError> {
        config.validate()?;
        let sampled = generate_curve(curve)?;
        let links = config.arm.links;
        let base_path = generate_base_path(&sampled, config.standoff, config.horizon, &links)?;
        let q = reach_pose(config.standoff, &links);
        if !config.arm.within_limits(&q) {
            return Err(ConfigError::invalid("env.standoff", "initial reach pose violates joint limits"));
        }
        let fingerprint = {
            let mut h = DefaultHasher::new();
            serde_json::to_string(&(config, curve)).expect("config serializes").hash(&mut h);
            h.finish()
        };
        let fixed = Static {
            config: config.clone(),
            curve: sampled,
            base_path,
            actions: ActionTable::new(config.n_a, config.arm.torque_limits),
            initial: JointState::at_rest(q),
            fingerprint,
        };
        let mut env = Self {
            fixed: Arc::new(fixed),
            joints: JointState::at_rest(q),
            pitch: PitchState::default(),
            pid: PidState::default(),
            t: 0,
            done: false,
            state: StateVector::default(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            nominal: false,
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.fixed.config
    }

    pub fn curve(&self) -> &SampledCurve {
        &self.fixed.curve
    }

    pub fn actions(&self) -> &ActionTable {
        &self.fixed.actions
    }

    pub fn joints(&self) -> &JointState {
        &self.joints
    }

    pub fn pitch_state(&self) -> &PitchState {
        &self.pitch
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn base_pose(&self) -> Pose {
        Pose::new(self.fixed.base_path.position(self.t), rot_y(self.pitch.alpha))
    }

    fn assemble_state(&self) -> StateVector {
        let ee = world_pose(&self.base_pose(), &self.joints.q, &self.fixed.config.arm.links).position;
        let e = tracking_error(&ee, &self.fixed.curve);
        let (q, qd) = (self.joints.q, self.joints.qdot);
        StateVector([q.q0, q.q1, q.q2, qd[0], qd[1], qd[2], ee.x, ee.y, ee.z, e])
    }

    fn sample_gust(&mut self) -> f64 {
        match self.fixed.config.disturbance {
            Disturbance::Gust { magnitude, probability } if !self.nominal && self.rng.gen_bool(probability) => {
                self.rng.gen_range(-1.0..=1.0) * magnitude
            }
            _ => 0.0,
        }
    }
}

/// Arm pose reaching straight toward the wall at distance `standoff`, elbow
/// bent downward.
fn reach_pose(standoff: f64, links: &LinkGeometry) -> JointAngles {
    let (a, b) = (links.l1(), links.l2());
    let c = ((standoff * standoff - a * a - b * b) / (2.0 * a * b)).clamp(-1.0, 1.0);
    let q2 = -c.acos();
    let q1 = -(b * q2.sin()).atan2(a + b * q2.cos());
    JointAngles::new(std::f64::consts::FRAC_PI_2, q1, q2)
}

impl Environment for ManipulatorEnv {
    type Snapshot = ManipulatorSnapshot;

    fn action_count(&self) -> usize {
        self.fixed.actions.len()
    }

    fn observation_dim(&self) -> usize {
        StateVector::DIM
    }

    fn observation(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let count = self.action_count();
        let tau = *self.fixed.actions.get(action).ok_or(EnvError::InvalidAction { index: action, count })?;
        let cfg = &self.fixed.config;
        let dt = cfg.dt;

        let qddot = forward_dynamics(&self.joints, &tau, &rot_y(self.pitch.alpha), &cfg.arm)?;
        let (joints, violated) = integrate_joints(&self.joints, &qddot, dt, &cfg.arm);
        let arm_moment = pitch_moment(&joints.q, &cfg.arm, &cfg.pitch);
        let (correction, pid) = pid_update(cfg.pitch.alpha_ref - self.pitch.alpha, &self.pid, &cfg.pid, dt);
        let pitch_params = cfg.pitch.clone();
        let weights = cfg.weights;
        let e_max = cfg.e_max;
        let tau_applied = cfg.arm.clamp_torque(&tau);
        let gust = self.sample_gust();

        self.pitch = pitch_step(&self.pitch, arm_moment + gust, correction, &pitch_params, dt);
        self.pid = pid;
        self.joints = joints;
        self.t += 1;
        self.state = self.assemble_state();

        let r =
            reward(normalize_error(self.state.error(), e_max), &tau_applied, &self.joints.qdot, !violated, &weights);
        self.done = self.t >= self.fixed.config.horizon;
        Ok(Step { observation: self.state.to_vec(), reward: r, done: self.done, violation: violated })
    }

    fn reset(&mut self) -> Vec<f64> {
        self.joints = self.fixed.initial;
        self.pitch = PitchState::default();
        self.pid = PidState::default();
        self.t = 0;
        self.done = false;
        self.state = self.assemble_state();
        self.state.to_vec()
    }

    fn snapshot(&self) -> ManipulatorSnapshot {
        ManipulatorSnapshot {
            joints: self.joints,
            pitch: self.pitch,
            pid: self.pid,
            t: self.t,
            done: self.done,
            state: self.state,
            rng: self.rng.clone(),
            fingerprint: self.fixed.fingerprint,
        }
    }

    fn restore(&mut self, s: &ManipulatorSnapshot) -> Result<(), EnvError> {
        if s.fingerprint != self.fixed.fingerprint {
            return Err(EnvError::SnapshotMismatch);
        }
        self.joints = s.joints;
        self.pitch = s.pitch;
        self.pid = s.pid;
        self.t = s.t;
        self.done = s.done;
        self.state = s.state;
        self.rng = s.rng.clone();
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn time_index(&self) -> usize {
        self.t
    }

    fn horizon(&self) -> usize {
        self.fixed.config.horizon
    }

    fn tracking_error(&self) -> f64 {
        self.state.error()
    }

    fn normalized_error(&self) -> f64 {
        normalize_error(self.state.error(), self.fixed.config.e_max)
    }

    fn error_scale(&self) -> f64 {
        self.fixed.config.e_max
    }

    fn set_nominal(&mut self, nominal: bool) {
        self.nominal = nominal;
    }
}
