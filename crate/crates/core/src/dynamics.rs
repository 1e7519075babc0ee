//! Nonlinear rigid-body model of a plus-configuration quadcopter.
//!
//! Frames: earth frame is north-east-down (z positive down), body frame is
//! x forward, y right, z down. Attitude is carried as ZYX Euler angles
//! (roll, pitch, yaw). Control enters as three body torques plus the total
//! rotor thrust.

use nalgebra::{Matrix3, Matrix4, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Closest approach of |pitch| to pi/2 before the Euler-rate map is treated as singular.
pub const SINGULAR_EPS: f64 = 1e-6;

/// Any state component above this magnitude is reported as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Largest accepted integration step.
pub const MAX_DT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DynamicsError {
    #[error("attitude singular: pitch {theta} rad is within {SINGULAR_EPS} of +/-pi/2")]
    SingularAttitude { theta: f64 },
    #[error("state diverged (component magnitude {magnitude:e})")]
    Diverged { magnitude: f64 },
    #[error("time step {dt} outside (0, {MAX_DT}]")]
    InvalidTimeStep { dt: f64 },
    #[error("invalid quadcopter parameters: {0}")]
    InvalidParams(&'static str),
}

/// Physical constants of the airframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadParams {
    /// kg
    pub mass: f64,
    /// Rotor-to-centre distance, m.
    pub arm_length: f64,
    /// m/s^2
    pub gravity: f64,
    /// Rotor force to yaw torque coefficient.
    pub force_to_torque: f64,
    pub inertia_xx: f64,
    pub inertia_yy: f64,
    pub inertia_zz: f64,
    /// Rotor moment of inertia about its spin axis.
    pub rotor_inertia: f64,
    /// Rotor force per squared rotor speed, N s^2. Only used to recover
    /// rotor speeds for the gyroscopic torque.
    #[serde(default = "default_thrust_coefficient")]
    pub thrust_coefficient: f64,
    /// Rotor speed limit applied when recovering rotor speeds, rad/s.
    #[serde(default = "default_max_rotor_speed")]
    pub max_rotor_speed: f64,
}

fn default_thrust_coefficient() -> f64 {
    2.98e-6
}

fn default_max_rotor_speed() -> f64 {
    1600.0
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 0.8,
            arm_length: 0.2,
            gravity: 9.81,
            force_to_torque: 3e-5,
            inertia_xx: 2.28e-2,
            inertia_yy: 3.10e-2,
            inertia_zz: 4.40e-2,
            rotor_inertia: 8.3e-5,
            thrust_coefficient: default_thrust_coefficient(),
            max_rotor_speed: default_max_rotor_speed(),
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fields = [
            self.mass,
            self.arm_length,
            self.gravity,
            self.force_to_torque,
            self.inertia_xx,
            self.inertia_yy,
            self.inertia_zz,
            self.rotor_inertia,
            self.thrust_coefficient,
            self.max_rotor_speed,
        ];
        if fields.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(DynamicsError::InvalidParams("all parameters must be finite and > 0"));
        }
        let (a, b, c) = (self.inertia_xx, self.inertia_yy, self.inertia_zz);
        if a + b < c || b + c < a || a + c < b {
            return Err(DynamicsError::InvalidParams("inertia violates triangle inequality"));
        }
        Ok(())
    }

    /// Thrust that balances weight.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    /// Rotor forces -> (u_phi, u_theta, u_psi, u_T).
    pub fn mixing_matrix(&self) -> Matrix4<f64> {
        let l = self.arm_length;
        let c = self.force_to_torque;
        Matrix4::new(
            0.0, l, 0.0, -l, //
            -l, 0.0, l, 0.0, //
            -c, c, -c, c, //
            1.0, 1.0, 1.0, 1.0,
        )
    }
}

/// Full vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidBodyState {
    /// (roll, pitch, yaw), rad.
    pub euler: Vector3<f64>,
    /// (p, q, r), rad/s.
    pub body_rates: Vector3<f64>,
    /// (u, v, w), m/s.
    pub body_velocity: Vector3<f64>,
    /// Earth-frame position, z down, m.
    pub position: Vector3<f64>,
}

impl RigidBodyState {
    pub const DIM: usize = 12;

    pub fn at_position(position: Vector3<f64>) -> Self {
        Self {
            position,
            ..Self::default()
        }
    }

    /// Flat layout: euler, body rates, body velocity, position.
    pub fn to_vector(&self) -> SVector<f64, 12> {
        let mut v = SVector::<f64, 12>::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.euler);
        v.fixed_rows_mut::<3>(3).copy_from(&self.body_rates);
        v.fixed_rows_mut::<3>(6).copy_from(&self.body_velocity);
        v.fixed_rows_mut::<3>(9).copy_from(&self.position);
        v
    }

    pub fn from_vector(v: &SVector<f64, 12>) -> Self {
        Self {
            euler: v.fixed_rows::<3>(0).into(),
            body_rates: v.fixed_rows::<3>(3).into(),
            body_velocity: v.fixed_rows::<3>(6).into(),
            position: v.fixed_rows::<3>(9).into(),
        }
    }

    /// Height above the ground plane (positive up).
    pub fn altitude(&self) -> f64 {
        -self.position.z
    }

    pub fn body_to_earth(&self) -> Matrix3<f64> {
        body_to_earth(&self.euler)
    }

    pub fn earth_velocity(&self) -> Vector3<f64> {
        self.body_to_earth() * self.body_velocity
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Time derivative of [`RigidBodyState`], laid out field-for-field.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub euler_rates: Vector3<f64>,
    pub body_accel: Vector3<f64>,
    pub angular_accel: Vector3<f64>,
    pub position_rate: Vector3<f64>,
}

impl StateDerivative {
    pub fn to_vector(&self) -> SVector<f64, 12> {
        RigidBodyState {
            euler: self.euler_rates,
            body_rates: self.angular_accel,
            body_velocity: self.body_accel,
            position: self.position_rate,
        }
        .to_vector()
    }
}

/// The four channel inputs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlVector {
    pub u_phi: f64,
    pub u_theta: f64,
    pub u_psi: f64,
    pub u_thrust: f64,
}

impl ControlVector {
    pub fn new(u_phi: f64, u_theta: f64, u_psi: f64, u_thrust: f64) -> Self {
        Self {
            u_phi,
            u_theta,
            u_psi,
            u_thrust,
        }
    }

    pub fn hover(params: &QuadParams) -> Self {
        Self::new(0.0, 0.0, 0.0, params.hover_thrust())
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.u_phi, self.u_theta, self.u_psi, self.u_thrust)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RotorForces(pub [f64; 4]);

impl RotorForces {
    pub fn uniform(f: f64) -> Self {
        Self([f; 4])
    }
}

/// Result of converting channel commands into rotor forces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub forces: RotorForces,
    /// True when at least one rotor force had to be clamped at zero.
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Disturbance {
    pub d_phi: f64,
    pub d_theta: f64,
    pub d_psi: f64,
    /// Residual rotor speed that produced the gyroscopic terms, rad/s.
    pub residual_speed: f64,
}

impl Disturbance {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn roll(d_phi: f64) -> Self {
        Self {
            d_phi,
            ..Self::default()
        }
    }

    pub fn torque(&self) -> Vector3<f64> {
        Vector3::new(self.d_phi, self.d_theta, self.d_psi)
    }
}

fn check_attitude(euler: &Vector3<f64>) -> Result<(), DynamicsError> {
    let theta = euler.y;
    if !theta.is_finite() || theta.abs() >= std::f64::consts::FRAC_PI_2 - SINGULAR_EPS {
        return Err(DynamicsError::SingularAttitude { theta });
    }
    Ok(())
}

/// Matrix mapping Euler-angle rates to body rates.
pub fn euler_rate_matrix(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sphi, cphi) = euler.x.sin_cos();
    let (sth, cth) = euler.y.sin_cos();
    Matrix3::new(
        1.0, 0.0, -sth, //
        0.0, cphi, cth * sphi, //
        0.0, -sphi, cth * cphi,
    )
}

pub fn euler_rates_to_body_rates(
    euler: &Vector3<f64>,
    euler_rates: &Vector3<f64>,
) -> Result<Vector3<f64>, DynamicsError> {
    check_attitude(euler)?;
    Ok(euler_rate_matrix(euler) * euler_rates)
}

pub fn body_rates_to_euler_rates(
    euler: &Vector3<f64>,
    body_rates: &Vector3<f64>,
) -> Result<Vector3<f64>, DynamicsError> {
    check_attitude(euler)?;
    let (sphi, cphi) = euler.x.sin_cos();
    let (sth, cth) = euler.y.sin_cos();
    let (p, q, r) = (body_rates.x, body_rates.y, body_rates.z);
    let s = q * sphi + r * cphi;
    Ok(Vector3::new(p + s * sth / cth, q * cphi - r * sphi, s / cth))
}

/// ZYX direction-cosine matrix rotating body vectors into the earth frame.
pub fn body_to_earth(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sphi, cphi) = euler.x.sin_cos();
    let (sth, cth) = euler.y.sin_cos();
    let (spsi, cpsi) = euler.z.sin_cos();
    Matrix3::new(
        cth * cpsi,
        sphi * sth * cpsi - cphi * spsi,
        cphi * sth * cpsi + sphi * spsi,
        cth * spsi,
        sphi * sth * spsi + cphi * cpsi,
        cphi * sth * spsi - sphi * cpsi,
        -sth,
        sphi * cth,
        cphi * cth,
    )
}

pub fn mix_forces_to_controls(forces: &RotorForces, params: &QuadParams) -> ControlVector {
    let f = Vector4::from(forces.0);
    ControlVector::from_vector(&(params.mixing_matrix() * f))
}

/// Inverts the mixing matrix. Negative rotor forces are clamped to zero and
/// reported through [`Allocation::saturated`].
pub fn controls_to_forces(u: &ControlVector, params: &QuadParams) -> Allocation {
    // Closed-form inverse of the mixing matrix.
    let l = params.arm_length;
    let c = params.force_to_torque;
    let (uphi, uth, upsi, ut) = (u.u_phi, u.u_theta, u.u_psi, u.u_thrust);
    let f1 = 0.25 * ut - 0.5 * uth / l - 0.25 * upsi / c;
    let f2 = 0.25 * ut + 0.5 * uphi / l + 0.25 * upsi / c;
    let f3 = 0.25 * ut + 0.5 * uth / l - 0.25 * upsi / c;
    let f4 = 0.25 * ut - 0.5 * uphi / l + 0.25 * upsi / c;
    let mut forces = [f1, f2, f3, f4];
    let mut saturated = false;
    for f in forces.iter_mut() {
        if *f < 0.0 {
            *f = 0.0;
            saturated = true;
        }
    }
    Allocation {
        forces: RotorForces(forces),
        saturated,
    }
}

/// Rotor speeds that produce the allocated forces, limited to
/// `max_rotor_speed`, rad/s.
pub fn rotor_speeds(forces: &RotorForces, params: &QuadParams) -> [f64; 4] {
    forces
        .0
        .map(|f| (f.max(0.0) / params.thrust_coefficient).sqrt().min(params.max_rotor_speed))
}

/// Residual rotor speed sum_i (-1)^i Omega_i with rotors indexed from 1.
pub fn residual_rotor_speed(rotor_speeds: &[f64; 4]) -> f64 {
    -rotor_speeds[0] + rotor_speeds[1] - rotor_speeds[2] + rotor_speeds[3]
}

/// Propeller gyroscopic torque acting on roll and pitch.
pub fn gyroscopic_disturbance(
    body_rates: &Vector3<f64>,
    rotor_speeds: &[f64; 4],
    params: &QuadParams,
) -> Disturbance {
    let omega_r = residual_rotor_speed(rotor_speeds);
    Disturbance {
        d_phi: body_rates.y * params.rotor_inertia * omega_r,
        d_theta: -body_rates.x * params.rotor_inertia * omega_r,
        d_psi: 0.0,
        residual_speed: omega_r,
    }
}

pub fn state_derivative(
    state: &RigidBodyState,
    u: &ControlVector,
    d: &Disturbance,
    params: &QuadParams,
) -> Result<StateDerivative, DynamicsError> {
    let euler_rates = body_rates_to_euler_rates(&state.euler, &state.body_rates)?;
    let (phi, theta) = (state.euler.x, state.euler.y);
    let (p, q, r) = (state.body_rates.x, state.body_rates.y, state.body_rates.z);
    let (uu, vv, ww) = (
        state.body_velocity.x,
        state.body_velocity.y,
        state.body_velocity.z,
    );
    let g = params.gravity;
    let (sphi, cphi) = phi.sin_cos();
    let (sth, cth) = theta.sin_cos();
    let (ixx, iyy, izz) = (params.inertia_xx, params.inertia_yy, params.inertia_zz);

    let body_accel = Vector3::new(
        r * vv - q * ww - g * sth,
        p * ww - r * uu + g * sphi * cth,
        q * uu - p * vv + g * cth * cphi - u.u_thrust / params.mass,
    );
    let angular_accel = Vector3::new(
        ((iyy - izz) * q * r + u.u_phi + d.d_phi) / ixx,
        ((izz - ixx) * p * r + u.u_theta + d.d_theta) / iyy,
        ((ixx - iyy) * p * q + u.u_psi + d.d_psi) / izz,
    );
    let position_rate = body_to_earth(&state.euler) * state.body_velocity;
    Ok(StateDerivative {
        euler_rates,
        body_accel,
        angular_accel,
        position_rate,
    })
}

fn check_dt(dt: f64) -> Result<(), DynamicsError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(DynamicsError::InvalidTimeStep { dt });
    }
    Ok(())
}

/// One classical fourth-order Runge-Kutta step with inputs held constant.
pub fn step(
    state: &RigidBodyState,
    u: &ControlVector,
    d: &Disturbance,
    params: &QuadParams,
    dt: f64,
) -> Result<RigidBodyState, DynamicsError> {
    check_dt(dt)?;
    let f = |x: &SVector<f64, 12>| -> Result<SVector<f64, 12>, DynamicsError> {
        Ok(state_derivative(&RigidBodyState::from_vector(x), u, d, params)?.to_vector())
    };
    let x0 = state.to_vector();
    let k1 = f(&x0)?;
    let k2 = f(&(x0 + k1 * (0.5 * dt)))?;
    let k3 = f(&(x0 + k2 * (0.5 * dt)))?;
    let k4 = f(&(x0 + k3 * dt))?;
    let x1 = x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

    let magnitude = x1.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !magnitude.is_finite() || magnitude > DIVERGENCE_LIMIT {
        return Err(DynamicsError::Diverged { magnitude });
    }
    let next = RigidBodyState::from_vector(&x1);
    check_attitude(&next.euler)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn default_params_are_valid() {
        QuadParams::default().validate().unwrap();
        let bad = QuadParams {
            inertia_zz: 1.0,
            ..QuadParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn euler_map_identity_at_level() {
        let rates = Vector3::new(0.3, -0.7, 1.1);
        let w = euler_rates_to_body_rates(&Vector3::zeros(), &rates).unwrap();
        assert_eq!(w, rates);
        let back = body_rates_to_euler_rates(&Vector3::zeros(), &rates).unwrap();
        assert_eq!(back, rates);
    }

    #[test]
    fn euler_map_rejects_gimbal_lock() {
        let euler = Vector3::new(0.0, FRAC_PI_2 - 1e-9, 0.0);
        assert!(matches!(
            euler_rates_to_body_rates(&euler, &Vector3::new(1.0, 2.0, 3.0)),
            Err(DynamicsError::SingularAttitude { .. })
        ));
        assert!(body_rates_to_euler_rates(&euler, &Vector3::x()).is_err());
    }

    #[test]
    fn euler_map_hand_evaluated() {
        // p = phidot - sin(th) psidot
        // q = cos(phi) thdot + cos(th) sin(phi) psidot
        // r = -sin(phi) thdot + cos(th) cos(phi) psidot
        let (phi, th) = (0.1_f64, 0.2_f64);
        let (pd, td, sd) = (0.5, -0.2, 0.1);
        let expected = Vector3::new(
            pd - th.sin() * sd,
            phi.cos() * td + th.cos() * phi.sin() * sd,
            -phi.sin() * td + th.cos() * phi.cos() * sd,
        );
        let w = euler_rates_to_body_rates(&Vector3::new(phi, th, 0.3), &Vector3::new(pd, td, sd))
            .unwrap();
        assert_relative_eq!(w, expected, epsilon = 1e-15);
        // Frozen from an independent evaluation of the same expressions.
        assert_relative_eq!(w.x, 0.4801330669204939, epsilon = 1e-14);
        assert_relative_eq!(w.y, -0.1892164935548796, epsilon = 1e-14);
        assert_relative_eq!(w.z, 0.11748371604954723, epsilon = 1e-14);
    }

    #[test]
    fn inverse_euler_map_explicit() {
        let euler = Vector3::new(0.3, 0.5, -1.0);
        let w = Vector3::new(0.1, 0.1, 0.1);
        let inv = euler_rate_matrix(&euler).try_inverse().unwrap();
        let expected = inv * w;
        let got = body_rates_to_euler_rates(&euler, &w).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-14);
    }

    #[test]
    fn hover_mixing() {
        let p = QuadParams::default();
        let u = mix_forces_to_controls(&RotorForces::uniform(p.hover_thrust() / 4.0), &p);
        assert_eq!(u.u_phi, 0.0);
        assert_eq!(u.u_theta, 0.0);
        assert_eq!(u.u_psi, 0.0);
        assert_relative_eq!(u.u_thrust, 7.848, epsilon = 1e-12);
    }

    #[test]
    fn single_rotor_mixing() {
        let p = QuadParams::default();
        let u = mix_forces_to_controls(&RotorForces([0.0, 1.0, 0.0, 0.0]), &p);
        assert_eq!(u, ControlVector::new(0.2, 0.0, 3e-5, 1.0));
    }

    #[test]
    fn mixing_is_linear() {
        let p = QuadParams::default();
        let base = mix_forces_to_controls(&RotorForces([1.0, 2.0, 0.5, 3.0]), &p);
        let scaled = mix_forces_to_controls(&RotorForces([2.5, 5.0, 1.25, 7.5]), &p);
        assert_relative_eq!(scaled.as_vector(), base.as_vector() * 2.5, epsilon = 1e-14);
    }

    #[test]
    fn hover_allocation_and_saturation() {
        let p = QuadParams::default();
        let alloc = controls_to_forces(&ControlVector::hover(&p), &p);
        assert!(!alloc.saturated);
        for f in alloc.forces.0 {
            assert_relative_eq!(f, p.hover_thrust() / 4.0, epsilon = 1e-15);
        }
        let alloc = controls_to_forces(&ControlVector::new(1.0, 0.0, 0.0, 0.0), &p);
        assert!(alloc.saturated);
        assert!(alloc.forces.0.iter().all(|f| *f >= 0.0));
    }

    #[test]
    fn closed_form_inverse_matches_matrix_inverse() {
        let p = QuadParams::default();
        let inv = p.mixing_matrix().try_inverse().unwrap();
        let u = ControlVector::new(0.05, -0.03, 1e-5, 9.0);
        let expected = inv * u.as_vector();
        let got = controls_to_forces(&u, &p).forces.0;
        for i in 0..4 {
            assert_relative_eq!(got[i], expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn gyroscopic_cases() {
        let p = QuadParams::default();
        let d = gyroscopic_disturbance(&Vector3::new(1.0, 2.0, 3.0), &[500.0; 4], &p);
        assert_eq!((d.d_phi, d.d_theta, d.d_psi, d.residual_speed), (0.0, 0.0, 0.0, 0.0));
        let d = gyroscopic_disturbance(&Vector3::new(0.0, 0.0, 3.0), &[1.0, 9.0, 2.0, 5.0], &p);
        assert_eq!((d.d_phi, d.d_theta), (0.0, 0.0));
        let d = gyroscopic_disturbance(
            &Vector3::new(1.0, 2.0, 0.0),
            &[100.0, 200.0, 100.0, 200.0],
            &p,
        );
        assert_eq!(d.residual_speed, 200.0);
        assert_relative_eq!(d.d_phi, 0.0332, epsilon = 1e-15);
        assert_relative_eq!(d.d_theta, -0.0166, epsilon = 1e-15);
        assert_eq!(d.d_psi, 0.0);
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = QuadParams::default();
        let s = RigidBodyState::at_position(Vector3::new(1.0, -2.0, -5.0));
        let d = state_derivative(&s, &ControlVector::hover(&p), &Disturbance::none(), &p).unwrap();
        assert_eq!(d.to_vector().norm(), 0.0);
    }

    #[test]
    fn free_fall_acceleration() {
        let p = QuadParams::default();
        let d = state_derivative(
            &RigidBodyState::default(),
            &ControlVector::default(),
            &Disturbance::none(),
            &p,
        )
        .unwrap();
        assert_eq!(d.body_accel, Vector3::new(0.0, 0.0, 9.81));
    }

    #[test]
    fn yaw_only_reduction() {
        let p = QuadParams::default();
        let mut s = RigidBodyState::default();
        s.body_rates.z = 0.4;
        let u = ControlVector::new(0.0, 0.0, 0.01, p.hover_thrust());
        let d = state_derivative(&s, &u, &Disturbance::none(), &p).unwrap();
        assert_relative_eq!(d.angular_accel.z, 0.01 / p.inertia_zz, epsilon = 1e-15);
    }

    #[test]
    fn step_validates_dt() {
        let p = QuadParams::default();
        let s = RigidBodyState::default();
        let u = ControlVector::hover(&p);
        for dt in [0.0, -0.01, 0.06, f64::NAN] {
            assert!(matches!(
                step(&s, &u, &Disturbance::none(), &p, dt),
                Err(DynamicsError::InvalidTimeStep { .. })
            ));
        }
    }

    #[test]
    fn step_reports_divergence() {
        let p = QuadParams::default();
        let mut s = RigidBodyState::default();
        s.position.x = 2e6;
        let r = step(&s, &ControlVector::hover(&p), &Disturbance::none(), &p, 0.01);
        assert!(matches!(r, Err(DynamicsError::Diverged { .. })));
    }

    #[test]
    fn hover_step_is_fixed_point() {
        let p = QuadParams::default();
        let s = RigidBodyState::at_position(Vector3::new(0.0, 0.0, -10.0));
        let next = step(&s, &ControlVector::hover(&p), &Disturbance::none(), &p, 0.01).unwrap();
        assert!((next.to_vector() - s.to_vector()).norm() < 1e-12);
    }

    #[test]
    fn free_fall_one_second() {
        let p = QuadParams::default();
        let mut s = RigidBodyState::default();
        for _ in 0..100 {
            s = step(&s, &ControlVector::default(), &Disturbance::none(), &p, 0.01).unwrap();
        }
        assert!((s.body_velocity.z - 9.81).abs() < 1e-6);
        assert!((s.position.z - 0.5 * 9.81).abs() < 1e-6);
    }

    #[test]
    fn euler_map_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let e = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            );
            let w = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let back = euler_rates_to_body_rates(&e, &body_rates_to_euler_rates(&e, &w).unwrap()).unwrap();
            let scale = 1.0 / e.y.cos().powi(2);
            assert!((back - w).norm() <= 1e-12 * scale * (1.0 + w.norm()), "{e:?} {w:?}");
        }
    }

    fn tumbling_start() -> RigidBodyState {
        RigidBodyState {
            euler: Vector3::new(0.2, -0.3, 0.5),
            body_rates: Vector3::new(1.0, -0.7, 0.4),
            body_velocity: Vector3::new(2.0, -1.0, 0.5),
            position: Vector3::new(0.0, 0.0, -20.0),
        }
    }

    fn integrate_for(s0: RigidBodyState, u: &ControlVector, dt: f64, t_end: f64) -> RigidBodyState {
        let p = QuadParams::default();
        let n = (t_end / dt).round() as usize;
        (0..n).fold(s0, |s, _| step(&s, u, &Disturbance::none(), &p, dt).unwrap())
    }

    #[test]
    fn rk4_is_fourth_order() {
        let u = ControlVector::new(0.01, -0.02, 0.005, 7.0);
        let reference = integrate_for(tumbling_start(), &u, 1e-3 / 16.0, 1.0).to_vector();
        let err = |dt| (integrate_for(tumbling_start(), &u, dt, 1.0).to_vector() - reference).norm();
        let (e1, e2) = (err(0.02), err(0.01));
        let order = (e1 / e2).log2();
        assert!(order >= 3.8, "observed order {order} ({e1:e}, {e2:e})");
    }

    #[test]
    fn energy_conserved_without_thrust() {
        let p = QuadParams::default();
        let energy = |s: &RigidBodyState| {
            0.5 * p.mass * s.body_velocity.norm_squared() - p.mass * p.gravity * s.position.z
        };
        let s0 = tumbling_start();
        let s1 = integrate_for(s0, &ControlVector::default(), 0.001, 5.0);
        let e0 = energy(&s0);
        let drift = ((energy(&s1) - e0) / e0).abs();
        assert!(drift < 1e-6, "relative drift {drift:e}");
    }
}
