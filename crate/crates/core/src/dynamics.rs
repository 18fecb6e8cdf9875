//! Rigid-body dynamics of the arm, the pitch disturbance it induces on the
//! UAV, the attitude-hold PID and the time integrators.
//!
//! Links are modelled as point masses at their midpoints on top of a scalar
//! rotor inertia about the yaw axis. Coriolis terms come from Christoffel
//! symbols of a finite-differenced mass matrix.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, DynamicsError};
use crate::geometry::{chain_jacobian, chain_point, JointAngles, LinkGeometry};

/// Diagonal floor added to the mass matrix.
pub const MASS_REGULARIZATION: f64 = 1e-6;

/// Step used when differentiating the mass matrix.
const MASS_FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManipulatorParams {
    pub link_masses: [f64; 2],
    pub base_yaw_inertia: f64,
    pub links: LinkGeometry,
    pub joint_damping: [f64; 3],
    /// Feasible interval `[min, max]` per joint, radians.
    pub joint_limits: [[f64; 2]; 3],
    /// `[τ_min, τ_max]` applied to every joint, N·m.
    pub torque_limits: [f64; 2],
    pub gravity: f64,
}

impl Default for ManipulatorParams {
    fn default() -> Self {
        Self {
            link_masses: [0.5, 0.5],
            base_yaw_inertia: 0.05,
            links: LinkGeometry::default(),
            joint_damping: [0.05; 3],
            joint_limits: [
                [-std::f64::consts::PI, std::f64::consts::PI],
                [-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2],
                [-2.6, 2.6],
            ],
            torque_limits: [-5.0, 5.0],
            gravity: 9.81,
        }
    }
}

impl ManipulatorParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.link_masses.iter().all(|m| *m > 0.0) {
            return Err(ConfigError::invalid("link_masses", "masses must be positive"));
        }
        if !(self.base_yaw_inertia > 0.0) {
            return Err(ConfigError::invalid("base_yaw_inertia", "must be positive"));
        }
        LinkGeometry::new(self.links.l1(), self.links.l2())?;
        if self.joint_damping.iter().any(|d| *d < 0.0) {
            return Err(ConfigError::invalid("joint_damping", "must be nonnegative"));
        }
        if self.joint_limits.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(ConfigError::invalid("joint_limits", "each interval must be nonempty"));
        }
        if !(self.torque_limits[0] < self.torque_limits[1]) {
            return Err(ConfigError::invalid("torque_limits", "τ_min must be below τ_max"));
        }
        if !(self.gravity >= 0.0) {
            return Err(ConfigError::invalid("gravity", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.link_masses[0] + self.link_masses[1]
    }

    pub fn within_limits(&self, q: &JointAngles) -> bool {
        let v = q.as_vector();
        (0..3).all(|i| v[i] >= self.joint_limits[i][0] && v[i] <= self.joint_limits[i][1])
    }

    pub fn clamp_torque(&self, tau: &Vector3<f64>) -> Vector3<f64> {
        tau.map(|t| t.clamp(self.torque_limits[0], self.torque_limits[1]))
    }

    /// Body-frame Jacobians of the two link centres of mass.
    fn com_jacobians(&self, q: &JointAngles) -> [Matrix3<f64>; 2] {
        let (l1, l2) = (self.links.l1(), self.links.l2());
        [chain_jacobian(q, 0.5 * l1, 0.0), chain_jacobian(q, l1, 0.5 * l2)]
    }

    fn com_positions(&self, q: &JointAngles) -> [Vector3<f64>; 2] {
        let (l1, l2) = (self.links.l1(), self.links.l2());
        [chain_point(q, 0.5 * l1, 0.0), chain_point(q, l1, 0.5 * l2)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchParams {
    pub m_arm: f64,
    pub inertia_y: f64,
    pub damping: f64,
    pub alpha_ref: f64,
}

impl Default for PitchParams {
    fn default() -> Self {
        Self { m_arm: 1.0, inertia_y: 0.3, damping: 0.2, alpha_ref: 0.0 }
    }
}

impl PitchParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.inertia_y > 0.0) {
            return Err(ConfigError::invalid("pitch.inertia_y", "must be positive"));
        }
        if !(self.damping >= 0.0) {
            return Err(ConfigError::invalid("pitch.damping", "must be nonnegative"));
        }
        if !(self.m_arm >= 0.0) {
            return Err(ConfigError::invalid("pitch.m_arm", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PitchState {
    pub alpha: f64,
    pub omega_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_clamp: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 60.0, ki: 40.0, kd: 8.0, integral_clamp: 0.5 }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if [self.kp, self.ki, self.kd, self.integral_clamp].iter().any(|g| !(*g >= 0.0)) {
            return Err(ConfigError::invalid("pid", "gains and clamp must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointState {
    pub q: JointAngles,
    pub qdot: Vector3<f64>,
}

impl JointState {
    pub fn at_rest(q: JointAngles) -> Self {
        Self { q, qdot: Vector3::zeros() }
    }

    /// Kinetic energy `½ q̇ᵀ M(q) q̇`.
    pub fn kinetic_energy(&self, params: &ManipulatorParams) -> f64 {
        0.5 * self.qdot.dot(&(mass_matrix(&self.q, params) * self.qdot))
    }
}

pub fn mass_matrix(q: &JointAngles, params: &ManipulatorParams) -> Matrix3<f64> {
    let jacobians = params.com_jacobians(q);
    let mut m = Matrix3::zeros();
    for (mass, j) in params.link_masses.iter().zip(jacobians.iter()) {
        m += *mass * j.transpose() * j;
    }
    m[(0, 0)] += params.base_yaw_inertia;
    m + Matrix3::identity() * MASS_REGULARIZATION
}

/// `∂M/∂q_k` for each k by central differences.
fn mass_matrix_partials(q: &JointAngles, params: &ManipulatorParams) -> [Matrix3<f64>; 3] {
    let base = q.as_vector();
    std::array::from_fn(|k| {
        let mut plus = base;
        let mut minus = base;
        plus[k] += MASS_FD_STEP;
        minus[k] -= MASS_FD_STEP;
        (mass_matrix(&JointAngles::from_vector(&plus), params) - mass_matrix(&JointAngles::from_vector(&minus), params))
            / (2.0 * MASS_FD_STEP)
    })
}

/// Coriolis/centrifugal matrix built from Christoffel symbols of the first kind.
pub fn coriolis_matrix(q: &JointAngles, qdot: &Vector3<f64>, params: &ManipulatorParams) -> Matrix3<f64> {
    christoffel_matrix(&mass_matrix_partials(q, params), qdot)
}

fn christoffel_matrix(dm: &[Matrix3<f64>; 3], qdot: &Vector3<f64>) -> Matrix3<f64> {
    let mut c = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                let christoffel = 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]);
                acc += christoffel * qdot[k];
            }
            c[(i, j)] = acc;
        }
    }
    c
}

/// Joint torques that hold the arm against gravity; gravity is `(0, 0, −g)`
/// in the world and is rotated into the body frame.
pub fn gravity_vector(q: &JointAngles, base_rotation: &Matrix3<f64>, params: &ManipulatorParams) -> Vector3<f64> {
    let g_body = base_rotation.transpose() * Vector3::new(0.0, 0.0, -params.gravity);
    let jacobians = params.com_jacobians(q);
    let mut g = Vector3::zeros();
    for (mass, j) in params.link_masses.iter().zip(jacobians.iter()) {
        g -= *mass * j.transpose() * g_body;
    }
    g
}

/// Joint accelerations for the commanded torque (clamped to the limits).
pub fn forward_dynamics(
    state: &JointState,
    tau: &Vector3<f64>,
    base_rotation: &Matrix3<f64>,
    params: &ManipulatorParams,
) -> Result<Vector3<f64>, DynamicsError> {
    let tau = params.clamp_torque(tau);
    let m = mass_matrix(&state.q, params);
    let c = coriolis_matrix(&state.q, &state.qdot, params);
    let g = gravity_vector(&state.q, base_rotation, params);
    let damping = Vector3::from(params.joint_damping).component_mul(&state.qdot);
    let rhs = tau - c * state.qdot - g - damping;
    let chol = m.cholesky().ok_or(DynamicsError::SingularMassMatrix([state.q.q0, state.q.q1, state.q.q2]))?;
    Ok(chol.solve(&rhs))
}

/// Pitch moment from the offset of the arm's centre of mass along body x.
pub fn pitch_moment(q: &JointAngles, params: &ManipulatorParams, pitch: &PitchParams) -> f64 {
    let [c1, c2] = params.com_positions(q);
    let [m1, m2] = params.link_masses;
    let x_com = (m1 * c1.x + m2 * c2.x) / (m1 + m2);
    pitch.m_arm * params.gravity * x_com
}

/// One explicit-Euler step of the pitch channel with the PID moment added.
pub fn pitch_step(state: &PitchState, disturbance: f64, correction: f64, pitch: &PitchParams, dt: f64) -> PitchState {
    PitchState {
        alpha: state.alpha + dt * state.omega_y,
        omega_y: state.omega_y + dt * (disturbance + correction - pitch.damping * state.omega_y) / pitch.inertia_y,
    }
}

/// Positional PID with a clamped integrator. Returns the corrective moment.
pub fn pid_update(err: f64, state: &PidState, gains: &PidGains, dt: f64) -> (f64, PidState) {
    let integral = (state.integral + err * dt).clamp(-gains.integral_clamp, gains.integral_clamp);
    let moment = gains.kp * err + gains.ki * integral + gains.kd * (err - state.prev_err) / dt;
    (moment, PidState { integral, prev_err: err })
}

/// Semi-implicit Euler followed by a hard clamp to the joint limits.
///
/// The returned flag is true when the unclamped update left the feasible set.
pub fn integrate_joints(
    state: &JointState,
    qddot: &Vector3<f64>,
    dt: f64,
    params: &ManipulatorParams,
) -> (JointState, bool) {
    let mut qdot = state.qdot + qddot * dt;
    let mut q = state.q.as_vector() + qdot * dt;
    let mut violated = false;
    for i in 0..3 {
        let [lo, hi] = params.joint_limits[i];
        if q[i] > hi || q[i] < lo {
            violated = true;
        }
        if q[i] >= hi {
            q[i] = hi;
            qdot[i] = 0.0;
        } else if q[i] <= lo {
            q[i] = lo;
            qdot[i] = 0.0;
        }
    }
    (JointState { q: JointAngles::from_vector(&q), qdot }, violated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_y;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn unit_params() -> ManipulatorParams {
        ManipulatorParams {
            link_masses: [1.0, 1.0],
            base_yaw_inertia: 0.1,
            links: LinkGeometry::new(1.0, 1.0).unwrap(),
            ..Default::default()
        }
    }

    fn random_q(rng: &mut ChaCha8Rng) -> JointAngles {
        JointAngles::new(rng.gen_range(-PI..PI), rng.gen_range(-FRAC_PI_2..FRAC_PI_2), rng.gen_range(-2.6..2.6))
    }

    fn random_v(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::from_fn(|_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn elbow_inertia_at_zero() {
        let m = mass_matrix(&JointAngles::default(), &unit_params());
        assert_relative_eq!(m[(2, 2)], 0.25 + MASS_REGULARIZATION, epsilon = 1e-15);
    }

    #[test]
    fn mass_matrix_symmetric_positive_definite() {
        let params = ManipulatorParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let m = mass_matrix(&random_q(&mut rng), &params);
            assert_eq!(m, m.transpose());
            let eig = m.symmetric_eigenvalues();
            assert!(eig.min() >= MASS_REGULARIZATION * (1.0 - 1e-6), "min eig {}", eig.min());
        }
    }

    #[test]
    fn coriolis_vanishes_at_rest() {
        let params = ManipulatorParams::default();
        let q = JointAngles::new(0.3, 0.2, -0.7);
        let c = coriolis_matrix(&q, &Vector3::zeros(), &params);
        assert_eq!(c * Vector3::zeros(), Vector3::zeros());
        assert_eq!(c, Matrix3::zeros());
    }

    #[test]
    fn coriolis_zero_for_configuration_independent_mass() {
        let frozen = [Matrix3::zeros(); 3];
        assert_eq!(christoffel_matrix(&frozen, &Vector3::new(1.5, -2.0, 0.7)), Matrix3::zeros());
        // M does not depend on the yaw angle, so a pure yaw rate on a folded
        // chain produces no yaw-row Coriolis term.
        let params = unit_params();
        let c = coriolis_matrix(&JointAngles::new(0.4, 0.3, 0.2), &Vector3::new(1.5, 0.0, 0.0), &params);
        assert!(c[(0, 0)].abs() < 1e-8);
    }

    #[test]
    fn skew_symmetry_of_mdot_minus_2c() {
        let params = ManipulatorParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..200 {
            let q = random_q(&mut rng);
            let qd = random_v(&mut rng, 3.0);
            let x = random_v(&mut rng, 1.0);
            let qv = q.as_vector();
            let mdot = (mass_matrix(&JointAngles::from_vector(&(qv + qd * h)), &params)
                - mass_matrix(&JointAngles::from_vector(&(qv - qd * h)), &params))
                / (2.0 * h);
            let c = coriolis_matrix(&q, &qd, &params);
            let residual = x.dot(&((mdot - 2.0 * c) * x)).abs();
            assert!(residual < 1e-6 * x.norm_squared() * qd.norm(), "residual {residual}");
        }
    }

    #[test]
    fn gravity_examples() {
        let params = unit_params();
        let level = Matrix3::identity();
        let g = gravity_vector(&JointAngles::default(), &level, &params);
        assert_eq!(g[0], 0.0);
        // Horizontal arm: shoulder carries m1·g·0.5 + m2·g·1.5.
        assert_relative_eq!(g[1], 9.81 * 2.0, epsilon = 1e-12);
        let vertical = gravity_vector(&JointAngles::new(0.0, FRAC_PI_2, 0.0), &level, &params);
        assert!(vertical[1].abs() < 1e-12);
        let zero_g = ManipulatorParams { gravity: 0.0, ..params };
        assert_eq!(gravity_vector(&JointAngles::new(0.2, 0.3, 0.4), &rot_y(0.3), &zero_g), Vector3::zeros());
    }

    #[test]
    fn static_equilibrium() {
        let params = ManipulatorParams { torque_limits: [-50.0, 50.0], ..Default::default() };
        let q = JointAngles::new(0.2, 0.4, -0.3);
        let r = rot_y(0.05);
        let tau = gravity_vector(&q, &r, &params);
        let qdd = forward_dynamics(&JointState::at_rest(q), &tau, &r, &params).unwrap();
        assert!(qdd.amax() < 1e-9);

        let free = ManipulatorParams { gravity: 0.0, joint_damping: [0.0; 3], ..Default::default() };
        let qdd = forward_dynamics(&JointState::at_rest(q), &Vector3::zeros(), &r, &free).unwrap();
        assert_eq!(qdd, Vector3::zeros());
    }

    #[test]
    fn torque_round_trip() {
        let params = ManipulatorParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let state = JointState { q: random_q(&mut rng), qdot: random_v(&mut rng, 4.0) };
            let r = rot_y(rng.gen_range(-0.3..0.3));
            let tau = random_v(&mut rng, 5.0);
            let qdd = forward_dynamics(&state, &tau, &r, &params).unwrap();
            let rebuilt = mass_matrix(&state.q, &params) * qdd
                + coriolis_matrix(&state.q, &state.qdot, &params) * state.qdot
                + gravity_vector(&state.q, &r, &params)
                + Vector3::from(params.joint_damping).component_mul(&state.qdot);
            assert!((rebuilt - tau).amax() < 1e-8, "{:?}", rebuilt - tau);
        }
    }

    #[test]
    fn torque_is_clamped() {
        let params = ManipulatorParams::default();
        let s = JointState::at_rest(JointAngles::new(0.0, 0.3, 0.2));
        let r = Matrix3::identity();
        let a = forward_dynamics(&s, &Vector3::new(100.0, -100.0, 7.0), &r, &params).unwrap();
        let b = forward_dynamics(&s, &Vector3::new(5.0, -5.0, 5.0), &r, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn energy_is_conserved_without_forcing() {
        let params = ManipulatorParams {
            gravity: 0.0,
            joint_damping: [0.0; 3],
            joint_limits: [[-1e3, 1e3]; 3],
            ..Default::default()
        };
        let mut state = JointState { q: JointAngles::new(0.1, 0.3, 0.8), qdot: Vector3::new(0.8, -0.6, 1.2) };
        let e0 = state.kinetic_energy(&params);
        let r = Matrix3::identity();
        let dt = 1e-4;
        for _ in 0..20_000 {
            let qdd = forward_dynamics(&state, &Vector3::zeros(), &r, &params).unwrap();
            state = integrate_joints(&state, &qdd, dt, &params).0;
        }
        let drift = (state.kinetic_energy(&params) - e0).abs() / e0;
        assert!(drift < 0.01, "drift {drift}");
    }

    #[test]
    fn pitch_moment_examples() {
        let params = unit_params();
        let pitch = PitchParams { m_arm: 2.0, ..Default::default() };
        assert_relative_eq!(pitch_moment(&JointAngles::default(), &params, &pitch), 19.62, epsilon = 1e-12);
        assert!(pitch_moment(&JointAngles::new(FRAC_PI_2, 0.0, 0.0), &params, &pitch).abs() < 1e-12);
        // Folded straight up: both midpoints on the z axis.
        assert!(pitch_moment(&JointAngles::new(0.0, FRAC_PI_2, 0.0), &params, &pitch).abs() < 1e-12);
    }

    #[test]
    fn pitch_step_arithmetic() {
        let pp = PitchParams { damping: 0.0, inertia_y: 1.0, ..Default::default() };
        let s = PitchState { alpha: 0.2, omega_y: 0.0 };
        assert_eq!(pitch_step(&s, 0.0, 0.0, &pp, 0.01), s);
        let s = pitch_step(&PitchState { alpha: 0.0, omega_y: 1.0 }, 0.0, 0.0, &pp, 0.01);
        assert_eq!(s, PitchState { alpha: 0.01, omega_y: 1.0 });
        let s = pitch_step(&PitchState::default(), 2.0, 0.0, &pp, 0.5);
        assert_eq!(s.omega_y, 1.0);
        // Affine map with damping and PID moment.
        let pp = PitchParams { damping: 0.2, inertia_y: 0.3, ..Default::default() };
        let s = pitch_step(&PitchState { alpha: 0.1, omega_y: -0.4 }, 1.5, -0.5, &pp, 0.02);
        assert_relative_eq!(s.alpha, 0.1 - 0.008, epsilon = 1e-15);
        assert_relative_eq!(s.omega_y, -0.4 + 0.02 * (1.0 + 0.08) / 0.3, epsilon = 1e-15);
    }

    #[test]
    fn pid_examples() {
        let gains = PidGains { kp: 2.0, ki: 0.0, kd: 0.0, integral_clamp: 1.0 };
        let (m, _) = pid_update(0.0, &PidState::default(), &PidGains::default(), 0.02);
        assert_eq!(m, 0.0);
        let (m, _) = pid_update(0.1, &PidState { prev_err: 0.1, integral: 0.0 }, &gains, 0.02);
        assert_relative_eq!(m, 0.2);
        let gains = PidGains { kp: 0.0, ki: 1.0, kd: 0.0, integral_clamp: 0.3 };
        let mut state = PidState::default();
        for _ in 0..1000 {
            state = pid_update(0.5, &state, &gains, 0.02).1;
        }
        assert_eq!(state.integral, 0.3);
    }

    #[test]
    fn pid_holds_pitch_under_constant_disturbance() {
        let pp = PitchParams::default();
        let gains = PidGains::default();
        let dt = 0.02;
        for disturbance in [-3.0, 0.5, 2.0, 4.9] {
            let mut s = PitchState::default();
            let mut pid = PidState::default();
            for _ in 0..(5.0 / dt) as usize {
                let (m, next) = pid_update(pp.alpha_ref - s.alpha, &pid, &gains, dt);
                pid = next;
                s = pitch_step(&s, disturbance, m, &pp, dt);
            }
            assert!((s.alpha - pp.alpha_ref).abs() < 0.05, "alpha {}", s.alpha);
        }
    }

    #[test]
    fn integrate_examples() {
        let params = ManipulatorParams::default();
        let s = JointState::at_rest(JointAngles::new(0.1, 0.2, 0.3));
        let (next, violated) = integrate_joints(&s, &Vector3::zeros(), 0.1, &params);
        assert_eq!(next, s);
        assert!(!violated);

        let s = JointState { q: JointAngles::new(0.1, 0.0, 0.0), qdot: Vector3::new(1.0, 0.0, 0.0) };
        let (next, _) = integrate_joints(&s, &Vector3::zeros(), 0.1, &params);
        assert_relative_eq!(next.q.q0, 0.2, epsilon = 1e-15);

        let s = JointState { q: JointAngles::new(0.0, FRAC_PI_2, 0.0), qdot: Vector3::new(0.0, 2.0, 0.5) };
        let (next, violated) = integrate_joints(&s, &Vector3::zeros(), 0.1, &params);
        assert_eq!(next.q.q1, FRAC_PI_2);
        assert_eq!(next.qdot[1], 0.0);
        assert_eq!(next.qdot[2], 0.5);
        assert!(violated);
    }

    #[test]
    fn params_validation() {
        assert!(ManipulatorParams::default().validate().is_ok());
        let bad = ManipulatorParams { torque_limits: [1.0, -1.0], ..Default::default() };
        assert_eq!(bad.validate().unwrap_err().field, "torque_limits");
        let bad = ManipulatorParams { link_masses: [0.0, 1.0], ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(PitchParams { inertia_y: 0.0, ..Default::default() }.validate().is_err());
    }
}
